//! Ingest Spider/BIRD-style benchmark releases: task JSON, the
//! tables.json-style schema description, and one SQLite file per database.
//!
//! The canonical split JSON emitted by [`write_split`] is documented
//! field-by-field in `docs/split-format.md`; loading and re-serializing a
//! split round-trips byte-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::db::SqliteDb;
use crate::schema::{ColumnDef, DbSchema, ForeignKey, TableDef};
use crate::{Error, Result};

pub const DEFAULT_SAMPLE_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
    Unknown,
}

impl Difficulty {
    pub fn parse(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Difficulty::Simple,
            "moderate" => Difficulty::Moderate,
            "challenging" => Difficulty::Challenging,
            _ => Difficulty::Unknown,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
            Difficulty::Unknown => "unknown",
        }
    }
}

impl Default for Difficulty {
    fn default() -> Self {
        Difficulty::Unknown
    }
}

/// One benchmark entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskItem {
    pub item_id: String,
    pub question: String,
    pub db_id: String,
    pub gold_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(default)]
    pub difficulty: Difficulty,
}

/// Provenance header attached to derived (cleaned) splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_split: String,
    pub removed: usize,
    pub annotations_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSplit {
    pub name: String,
    pub db_root: String,
    pub items: Vec<TaskItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl BenchmarkSplit {
    pub fn item(&self, item_id: &str) -> Option<&TaskItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }
}

/// Locate the SQLite file for a db_id: `<root>/<db_id>/<db_id>.sqlite` (the
/// layout both benchmarks ship) or a flat `<root>/<db_id>.sqlite`.
pub fn resolve_db_file(db_root: &Path, db_id: &str) -> Result<PathBuf> {
    let nested = db_root.join(db_id).join(format!("{db_id}.sqlite"));
    if nested.is_file() {
        return Ok(nested);
    }
    let flat = db_root.join(format!("{db_id}.sqlite"));
    if flat.is_file() {
        return Ok(flat);
    }
    Err(Error::DbNotFound { db_id: db_id.to_string(), root: db_root.to_path_buf() })
}

fn read_json(path: &Path) -> Result<Value> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        _ => None,
    }
}

/// Load a task file into a split. Field conventions differ between releases,
/// so the gold SQL is probed under "SQL", then "query", then "gold_sql".
/// Elements missing a required field are skipped with a warning; a db_id
/// with no database file is a hard error.
pub fn load_split(
    tasks_path: &Path,
    tables_path: Option<&Path>,
    db_root: &Path,
) -> Result<(BenchmarkSplit, Vec<String>)> {
    let tasks = read_json(tasks_path)?;
    let Value::Array(elements) = tasks else {
        return Err(Error::invalid(format!("{} is not a JSON array", tasks_path.display())));
    };
    if let Some(tables) = tables_path {
        // Fail early when the schema description file is unreadable.
        let _ = read_json(tables)?;
    }

    let split_name = tasks_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "split".to_string());

    let mut warnings = Vec::new();
    let mut items: Vec<TaskItem> = Vec::with_capacity(elements.len());
    let mut seen_ids = std::collections::HashSet::new();

    for (index, element) in elements.iter().enumerate() {
        let Value::Object(obj) = element else {
            warnings.push(format!("item {index}: not a JSON object, skipped"));
            continue;
        };
        let Some(question) = string_field(obj, "question") else {
            warnings.push(format!("item {index}: missing question, skipped"));
            continue;
        };
        let Some(db_id) = string_field(obj, "db_id") else {
            warnings.push(format!("item {index}: missing db_id, skipped"));
            continue;
        };
        let gold = ["SQL", "query", "gold_sql"].iter().find_map(|k| string_field(obj, k));
        let Some(gold_sql) = gold.filter(|g| !g.trim().is_empty()) else {
            warnings.push(format!("item {index}: missing gold SQL, skipped"));
            continue;
        };

        resolve_db_file(db_root, &db_id)?;

        let item_id = ["item_id", "question_id", "id"]
            .iter()
            .find_map(|k| string_field(obj, k))
            .unwrap_or_else(|| format!("{split_name}-{index}"));
        if !seen_ids.insert(item_id.clone()) {
            warnings.push(format!("item {index}: duplicate item_id '{item_id}', skipped"));
            continue;
        }

        let evidence = string_field(obj, "evidence").filter(|e| !e.is_empty());
        let difficulty = string_field(obj, "difficulty")
            .map(|d| Difficulty::parse(&d))
            .unwrap_or(Difficulty::Unknown);

        items.push(TaskItem { item_id, question, db_id, gold_sql, evidence, difficulty });
    }

    let split = BenchmarkSplit {
        name: split_name,
        db_root: db_root.to_string_lossy().into_owned(),
        items,
        provenance: None,
    };
    Ok((split, warnings))
}

/// Serialize a split to the engine's canonical JSON.
pub fn write_split(split: &BenchmarkSplit, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(split)
        .map_err(|e| Error::invalid(format!("split serialize: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Load a canonical split JSON written by [`write_split`].
pub fn read_split(path: &Path) -> Result<BenchmarkSplit> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::json(path, e))
}

/// Load one database's schema: structure from the schema description JSON,
/// sample values from the live database.
pub fn load_schema(
    tables_path: &Path,
    db_id: &str,
    db_file: &Path,
    sample_k: usize,
) -> Result<(DbSchema, Vec<String>)> {
    let tables_json = read_json(tables_path)?;
    let Value::Array(entries) = tables_json else {
        return Err(Error::invalid(format!("{} is not a JSON array", tables_path.display())));
    };
    let entry = entries
        .iter()
        .filter_map(|e| e.as_object())
        .find(|o| o.get("db_id").and_then(|v| v.as_str()) == Some(db_id))
        .ok_or_else(|| Error::UnknownDbId(db_id.to_string()))?;

    let table_names = expect_string_array(entry.get("table_names_original"), "table_names_original")?;
    let friendly_tables = entry
        .get("table_names")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().map(|v| v.as_str().unwrap_or("").to_string()).collect::<Vec<_>>())
        .unwrap_or_default();
    let _ = friendly_tables; // table descriptions are not rendered in v1

    let raw_columns = entry
        .get("column_names_original")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::invalid("column_names_original missing"))?;
    let friendly_columns: Vec<Option<String>> = entry
        .get("column_names")
        .and_then(|v| v.as_array())
        .map(|a| {
            a.iter()
                .map(|pair| pair.get(1).and_then(|v| v.as_str()).map(|s| s.to_string()))
                .collect()
        })
        .unwrap_or_default();
    let column_types: Vec<String> = entry
        .get("column_types")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().map(|v| v.as_str().unwrap_or("text").to_string()).collect())
        .unwrap_or_default();

    // (table_idx, name) pairs; index -1 is the conventional "*" row.
    struct RawCol {
        table: i64,
        name: String,
        declared_type: String,
        description: Option<String>,
    }
    let mut cols: Vec<Option<RawCol>> = Vec::with_capacity(raw_columns.len());
    for (i, pair) in raw_columns.iter().enumerate() {
        let arr = pair.as_array().ok_or_else(|| Error::invalid("bad column_names_original entry"))?;
        let table = arr.first().and_then(|v| v.as_i64()).unwrap_or(-1);
        let name = arr.get(1).and_then(|v| v.as_str()).unwrap_or("").to_string();
        if table < 0 || name == "*" {
            cols.push(None);
            continue;
        }
        let declared_type = column_types.get(i).cloned().unwrap_or_else(|| "text".to_string());
        let description = friendly_columns.get(i).cloned().flatten().filter(|d| {
            // A friendly name that just restates the identifier is noise.
            let norm = |s: &str| s.to_lowercase().replace([' ', '_'], "");
            !d.is_empty() && norm(d) != norm(&name)
        });
        cols.push(Some(RawCol { table, name, declared_type, description }));
    }

    let mut tables: Vec<TableDef> = table_names
        .iter()
        .map(|n| TableDef { name: n.clone(), columns: vec![], primary_key: vec![] })
        .collect();
    for col in cols.iter().flatten() {
        let t = usize::try_from(col.table)
            .ok()
            .filter(|i| *i < tables.len())
            .ok_or_else(|| Error::invalid(format!("column '{}' has bad table index", col.name)))?;
        tables[t].columns.push(ColumnDef {
            name: col.name.clone(),
            declared_type: col.declared_type.to_uppercase(),
            description: col.description.clone(),
            samples: vec![],
        });
    }

    // primary_keys: flat column indices, or nested lists for composite keys.
    if let Some(Value::Array(pks)) = entry.get("primary_keys") {
        for pk in pks {
            let idxs: Vec<i64> = match pk {
                Value::Number(n) => n.as_i64().into_iter().collect(),
                Value::Array(a) => a.iter().filter_map(|v| v.as_i64()).collect(),
                _ => vec![],
            };
            for idx in idxs {
                if let Some(Some(col)) = cols.get(idx as usize) {
                    let t = col.table as usize;
                    if t < tables.len() {
                        tables[t].primary_key.push(col.name.clone());
                    }
                }
            }
        }
    }

    let mut foreign_keys = Vec::new();
    if let Some(Value::Array(fks)) = entry.get("foreign_keys") {
        for fk in fks {
            let Some(arr) = fk.as_array() else { continue };
            let (Some(from), Some(to)) = (
                arr.first().and_then(|v| v.as_i64()),
                arr.get(1).and_then(|v| v.as_i64()),
            ) else {
                continue;
            };
            if let (Some(Some(f)), Some(Some(t))) = (cols.get(from as usize), cols.get(to as usize)) {
                foreign_keys.push(ForeignKey {
                    from_table: table_names[f.table as usize].clone(),
                    from_column: f.name.clone(),
                    to_table: table_names[t.table as usize].clone(),
                    to_column: t.name.clone(),
                });
            }
        }
    }

    let mut schema = DbSchema { db_id: db_id.to_string(), tables, foreign_keys };
    schema.validate()?;

    // Sample values from the live database; a failure on one column leaves
    // its list empty and records a warning.
    let mut warnings = Vec::new();
    let db = SqliteDb::open_read_only(db_file)?;
    for table in &mut schema.tables {
        for col in &mut table.columns {
            match db.sample_column_values(&table.name, &col.name, sample_k) {
                Ok(samples) => col.samples = samples,
                Err(e) => warnings.push(format!("sampling {}.{} failed: {e}", table.name, col.name)),
            }
        }
    }
    Ok((schema, warnings))
}

fn expect_string_array(value: Option<&Value>, what: &str) -> Result<Vec<String>> {
    value
        .and_then(|v| v.as_array())
        .map(|a| a.iter().map(|v| v.as_str().unwrap_or("").to_string()).collect())
        .ok_or_else(|| Error::invalid(format!("{what} missing or not an array")))
}

/// Schemas and database paths for every db_id a split references.
#[derive(Default)]
pub struct SchemaStore {
    schemas: BTreeMap<String, DbSchema>,
    db_files: BTreeMap<String, PathBuf>,
}

impl SchemaStore {
    /// Register a schema directly, bypassing file loading. Fixture and test
    /// plumbing; real runs go through [`load_for_split`](Self::load_for_split).
    pub fn insert(&mut self, db_id: &str, schema: DbSchema, db_file: PathBuf) {
        self.schemas.insert(db_id.to_string(), schema);
        self.db_files.insert(db_id.to_string(), db_file);
    }

    pub fn load_for_split(
        tables_path: &Path,
        split: &BenchmarkSplit,
        sample_k: usize,
    ) -> Result<(Self, Vec<String>)> {
        let mut store = SchemaStore::default();
        let mut warnings = Vec::new();
        let db_root = PathBuf::from(&split.db_root);
        for item in &split.items {
            if store.schemas.contains_key(&item.db_id) {
                continue;
            }
            let db_file = resolve_db_file(&db_root, &item.db_id)?;
            let (schema, mut w) = load_schema(tables_path, &item.db_id, &db_file, sample_k)?;
            warnings.append(&mut w);
            store.schemas.insert(item.db_id.clone(), schema);
            store.db_files.insert(item.db_id.clone(), db_file);
        }
        Ok((store, warnings))
    }

    pub fn schema(&self, db_id: &str) -> Option<&DbSchema> {
        self.schemas.get(db_id)
    }

    pub fn db_file(&self, db_id: &str) -> Option<&Path> {
        self.db_files.get(db_id).map(|p| p.as_path())
    }

    pub fn db_ids(&self) -> impl Iterator<Item = &str> {
        self.schemas.keys().map(|s| s.as_str())
    }
}
