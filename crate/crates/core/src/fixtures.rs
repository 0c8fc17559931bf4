//! Self-contained benchmark fixtures: two small databases, a 12-item task
//! file, the matching schema description, and scripted-transcript builders.
//! Integration tests, the acceptance suite, and the benches all build on
//! these instead of shipping binary database files in the repository.
//!
//! The `atlas` database plants the value `"United States "` (trailing
//! space) in `country.name`; the task `dev-10` carries a gold query whose
//! clean literal therefore executes to an empty result. That one item
//! exercises the whole dirty-data repair path end to end.

use std::fs;
use std::path::{Path, PathBuf};

use crate::bench_io::{load_split, BenchmarkSplit, SchemaStore};
use crate::checker::{exec_tool, ExecOutcome};
use crate::db::SqliteDb;
use crate::llm::{AgentTag, ScriptedBackend};
use crate::pipeline::RunConfig;
use crate::schema::SchemaSubset;
use crate::{Error, Result};

pub const ATLAS_DDL: &str = "
CREATE TABLE country(code TEXT PRIMARY KEY, name TEXT, continent TEXT);
CREATE TABLE city(
    name TEXT PRIMARY KEY,
    country_code TEXT REFERENCES country(code),
    population INTEGER
);
INSERT INTO country VALUES
    ('US', 'United States ', 'North America'),
    ('NO', 'Norway', 'Europe'),
    ('SE', 'Sweden', 'Europe'),
    ('FR', 'France', 'Europe');
INSERT INTO city VALUES
    ('Oslo', 'NO', 700000),
    ('Bergen', 'NO', 280000),
    ('Stockholm', 'SE', 970000),
    ('Paris', 'FR', 2100000),
    ('Fresno', 'US', 540000),
    ('Kerman', 'US', 16000);
";

pub const SHOP_DDL: &str = "
CREATE TABLE users(id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER);
CREATE TABLE orders(
    id INTEGER PRIMARY KEY,
    user_id INTEGER REFERENCES users(id),
    total REAL,
    placed TEXT
);
CREATE TABLE products(id INTEGER PRIMARY KEY, name TEXT, price REAL, category TEXT);
INSERT INTO users VALUES
    (1, 'Ana', 'Norway', 34),
    (2, 'Bo', 'Sweden', 28),
    (3, 'Cy', 'Norway', 45),
    (4, 'Di', 'France', 19);
INSERT INTO orders VALUES
    (1, 1, 120.5, '2024-01-10'),
    (2, 1, 35.0, '2024-02-01'),
    (3, 2, 220.0, '2024-02-11'),
    (4, 3, 15.25, '2024-03-05'),
    (5, 4, 99.99, '2024-03-06');
INSERT INTO products VALUES
    (1, 'chair', 49.5, 'furniture'),
    (2, 'desk', 120.0, 'furniture'),
    (3, 'lamp', 15.0, 'lighting'),
    (4, 'rug', 75.0, 'decor');
";

fn tasks_json() -> serde_json::Value {
    serde_json::json!([
        {"question": "How many cities are there?", "db_id": "atlas",
         "SQL": "SELECT count(*) FROM city", "difficulty": "simple"},
        {"question": "List the names of all cities.", "db_id": "atlas",
         "SQL": "SELECT name FROM city", "difficulty": "simple"},
        {"question": "What are the names of cities in Norway?", "db_id": "atlas",
         "SQL": "SELECT c.name FROM city c JOIN country k ON c.country_code = k.code WHERE k.name = 'Norway'",
         "difficulty": "simple"},
        {"question": "How many users are there?", "db_id": "shop",
         "SQL": "SELECT count(*) FROM users", "difficulty": "simple"},
        {"question": "List product names priced below 80.", "db_id": "shop",
         "SQL": "SELECT name FROM products WHERE price < 80", "difficulty": "simple"},
        {"question": "Which city has the largest population?", "db_id": "atlas",
         "SQL": "SELECT name FROM city ORDER BY population DESC LIMIT 1", "difficulty": "moderate"},
        {"question": "What is the total order amount per user id?", "db_id": "shop",
         "SQL": "SELECT user_id, SUM(total) FROM orders GROUP BY user_id", "difficulty": "moderate"},
        {"question": "Which users placed an order over 100?", "db_id": "shop",
         "SQL": "SELECT DISTINCT u.name FROM users u JOIN orders o ON u.id = o.user_id WHERE o.total > 100",
         "difficulty": "moderate"},
        {"question": "How many cities does each country code have, largest first?", "db_id": "atlas",
         "SQL": "SELECT country_code, count(*) FROM city GROUP BY country_code ORDER BY count(*) DESC, country_code",
         "difficulty": "moderate"},
        {"question": "Which user placed the single largest order?", "db_id": "shop",
         "SQL": "SELECT u.name FROM users u JOIN orders o ON u.id = o.user_id WHERE o.total = (SELECT MAX(total) FROM orders)",
         "difficulty": "challenging"},
        {"question": "List city names in the United States.", "db_id": "atlas",
         "SQL": "SELECT c.name FROM city c JOIN country k ON c.country_code = k.code WHERE k.name = 'United States'",
         "difficulty": "challenging"},
        {"question": "What is the average order total of users from Norway?", "db_id": "shop",
         "SQL": "SELECT AVG(o.total) FROM orders o JOIN users u ON o.user_id = u.id WHERE u.country = 'Norway'",
         "difficulty": "challenging"}
    ])
}

fn tables_json() -> serde_json::Value {
    serde_json::json!([
        {
            "db_id": "atlas",
            "table_names_original": ["country", "city"],
            "table_names": ["country", "city"],
            "column_names_original": [
                [-1, "*"],
                [0, "code"], [0, "name"], [0, "continent"],
                [1, "name"], [1, "country_code"], [1, "population"]
            ],
            "column_names": [
                [-1, "*"],
                [0, "country code"], [0, "country name"], [0, "continent"],
                [1, "city name"], [1, "code of the country"], [1, "number of inhabitants"]
            ],
            "column_types": ["text", "text", "text", "text", "text", "text", "number"],
            "primary_keys": [1, 4],
            "foreign_keys": [[5, 1]]
        },
        {
            "db_id": "shop",
            "table_names_original": ["users", "orders", "products"],
            "table_names": ["users", "orders", "products"],
            "column_names_original": [
                [-1, "*"],
                [0, "id"], [0, "name"], [0, "country"], [0, "age"],
                [1, "id"], [1, "user_id"], [1, "total"], [1, "placed"],
                [2, "id"], [2, "name"], [2, "price"], [2, "category"]
            ],
            "column_names": [
                [-1, "*"],
                [0, "user id"], [0, "user name"], [0, "home country"], [0, "age in years"],
                [1, "order id"], [1, "ordering user"], [1, "order amount"], [1, "date placed"],
                [2, "product id"], [2, "product name"], [2, "unit price"], [2, "product category"]
            ],
            "column_types": [
                "text",
                "number", "text", "text", "number",
                "number", "number", "number", "text",
                "number", "text", "number", "text"
            ],
            "primary_keys": [1, 5, 9],
            "foreign_keys": [[6, 1]]
        }
    ])
}

/// Paths of one materialized benchmark fixture.
#[derive(Debug, Clone)]
pub struct BenchmarkFixture {
    pub root: PathBuf,
    pub tasks: PathBuf,
    pub tables: PathBuf,
    pub db_root: PathBuf,
}

impl BenchmarkFixture {
    pub fn load_split(&self) -> Result<BenchmarkSplit> {
        let (split, _warnings) = load_split(&self.tasks, Some(&self.tables), &self.db_root)?;
        Ok(split)
    }

    pub fn load_store(&self, split: &BenchmarkSplit) -> Result<SchemaStore> {
        let (store, _warnings) = SchemaStore::load_for_split(&self.tables, split, 3)?;
        Ok(store)
    }
}

fn create_db(dir: &Path, db_id: &str, ddl: &str) -> Result<PathBuf> {
    let db_dir = dir.join(db_id);
    fs::create_dir_all(&db_dir).map_err(|e| Error::io(&db_dir, e))?;
    let path = db_dir.join(format!("{db_id}.sqlite"));
    // the fixture content is fixed; re-materializing into the same dir is a no-op
    if path.is_file() {
        return Ok(path);
    }
    let conn = rusqlite::Connection::open(&path)?;
    conn.execute_batch(ddl)?;
    Ok(path)
}

/// Materialize the 12-item fixture benchmark under `root`.
pub fn write_benchmark(root: &Path) -> Result<BenchmarkFixture> {
    let db_root = root.join("dbs");
    fs::create_dir_all(&db_root).map_err(|e| Error::io(&db_root, e))?;
    create_db(&db_root, "atlas", ATLAS_DDL)?;
    create_db(&db_root, "shop", SHOP_DDL)?;

    let tasks = root.join("dev.json");
    fs::write(&tasks, serde_json::to_string_pretty(&tasks_json()).unwrap()).map_err(|e| Error::io(&tasks, e))?;
    let tables = root.join("tables.json");
    fs::write(&tables, serde_json::to_string_pretty(&tables_json()).unwrap()).map_err(|e| Error::io(&tables, e))?;

    Ok(BenchmarkFixture { root: root.to_path_buf(), tasks, tables, db_root })
}

fn fence_sql(sql: &str) -> String {
    format!("```sql\n{sql}\n```")
}

fn full_subset_json(subset: &SchemaSubset) -> String {
    let map: serde_json::Map<String, serde_json::Value> = subset
        .tables()
        .map(|t| {
            let cols: Vec<serde_json::Value> = subset
                .columns(t)
                .map(|cols| cols.iter().map(|c| serde_json::Value::String(c.clone())).collect())
                .unwrap_or_default();
            (t.to_string(), serde_json::Value::Array(cols))
        })
        .collect();
    serde_json::Value::Object(map).to_string()
}

/// How many refine rounds the checker will spend on a query that the echo
/// script never changes: zero when it passes, the full budget otherwise.
fn refine_rounds(sql: &str, db: &SqliteDb, config: &RunConfig) -> usize {
    let (outcome, _) = exec_tool(sql, db, &config.checker_config);
    if outcome == ExecOutcome::Pass {
        0
    } else {
        config.checker_config.max_try_time
    }
}

/// One scripted response, in queue order.
pub type ScriptEntry = (AgentTag, String);

/// Push a prepared script onto a backend.
pub fn push_script(backend: &ScriptedBackend, entries: &[ScriptEntry]) {
    for (tag, text) in entries {
        backend.push(*tag, text.clone());
    }
}

/// Write a prepared script as the JSONL format `gbv run --script-file`
/// consumes.
pub fn write_script_jsonl(entries: &[ScriptEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (tag, text) in entries {
        out.push_str(&serde_json::json!({"agent_tag": tag, "text": text}).to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Transcript in which the model simply echoes each item's gold SQL at
/// every generation step. Meant for sequential runs (parallelism 1):
/// scripted queues pop per tag in FIFO order across items.
pub fn echo_gold_script(
    split: &BenchmarkSplit,
    store: &SchemaStore,
    config: &RunConfig,
) -> Result<Vec<ScriptEntry>> {
    let mut entries = Vec::new();
    for item in &split.items {
        let schema = store
            .schema(&item.db_id)
            .ok_or_else(|| Error::invalid(format!("no schema for {}", item.db_id)))?;
        if config.planner {
            entries.push((AgentTag::PlannerPrune, full_subset_json(&SchemaSubset::full(schema))));
            entries.push((AgentTag::PlannerDecompose, serde_json::json!([item.question]).to_string()));
        }
        entries.push((AgentTag::GenSubsql, fence_sql(&item.gold_sql)));
        entries.push((AgentTag::GenMerge, fence_sql(&item.gold_sql)));
        if config.validator {
            entries.push((
                AgentTag::ValidatorTranslate,
                "the query computes exactly what the question asks".to_string(),
            ));
            entries.push((AgentTag::ValidatorVerdict, r#"{"consistent": true}"#.to_string()));
        }
        if config.checker {
            entries.push((AgentTag::CheckerTrim, fence_sql(&item.gold_sql)));
            let db_file = store
                .db_file(&item.db_id)
                .ok_or_else(|| Error::invalid(format!("no db file for {}", item.db_id)))?;
            let db = SqliteDb::open_read_only(db_file)?;
            for _ in 0..refine_rounds(&item.gold_sql, &db, config) {
                entries.push((AgentTag::CheckerRefine, fence_sql(&item.gold_sql)));
            }
        }
    }
    Ok(entries)
}

/// Transcript in which generation produces a broken query per item and the
/// checker's first repair lands on the gold SQL. With the checker disabled
/// these runs predict the broken query; with it enabled they recover.
/// Sequential runs only.
pub fn broken_then_repaired_script(
    split: &BenchmarkSplit,
    store: &SchemaStore,
    config: &RunConfig,
) -> Result<Vec<ScriptEntry>> {
    let mut entries = Vec::new();
    for item in &split.items {
        let schema = store
            .schema(&item.db_id)
            .ok_or_else(|| Error::invalid(format!("no schema for {}", item.db_id)))?;
        let first_table = schema.tables.first().map(|t| t.name.clone()).unwrap_or_default();
        let broken = format!("SELECT no_such_column FROM {first_table}");
        if config.planner {
            entries.push((AgentTag::PlannerPrune, full_subset_json(&SchemaSubset::full(schema))));
            entries.push((AgentTag::PlannerDecompose, serde_json::json!([item.question]).to_string()));
        }
        entries.push((AgentTag::GenSubsql, fence_sql(&broken)));
        entries.push((AgentTag::GenMerge, fence_sql(&broken)));
        if config.validator {
            entries.push((AgentTag::ValidatorTranslate, "selects a column from a table".to_string()));
            entries.push((AgentTag::ValidatorVerdict, r#"{"consistent": true}"#.to_string()));
        }
        if config.checker {
            entries.push((AgentTag::CheckerTrim, fence_sql(&broken)));
            // first refine repairs to gold; later rounds (if gold is still
            // suspicious) echo gold until the budget runs out
            entries.push((AgentTag::CheckerRefine, fence_sql(&item.gold_sql)));
            let db_file = store
                .db_file(&item.db_id)
                .ok_or_else(|| Error::invalid(format!("no db file for {}", item.db_id)))?;
            let db = SqliteDb::open_read_only(db_file)?;
            let extra = refine_rounds(&item.gold_sql, &db, config)
                .min(config.checker_config.max_try_time.saturating_sub(1));
            for _ in 0..extra {
                entries.push((AgentTag::CheckerRefine, fence_sql(&item.gold_sql)));
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqlast;
    use std::time::Duration;

    #[test]
    fn fixture_materializes_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = write_benchmark(dir.path()).unwrap();
        let split = fixture.load_split().unwrap();
        assert_eq!(split.items.len(), 12);
        let store = fixture.load_store(&split).unwrap();
        assert!(store.schema("atlas").is_some());
        assert!(store.schema("shop").is_some());
    }

    #[test]
    fn every_gold_parses_and_executes() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = write_benchmark(dir.path()).unwrap();
        let split = fixture.load_split().unwrap();
        let store = fixture.load_store(&split).unwrap();
        for item in &split.items {
            assert!(sqlast::parses(&item.gold_sql), "{} does not parse", item.item_id);
            let db = SqliteDb::open_read_only(store.db_file(&item.db_id).unwrap()).unwrap();
            let res = db.execute_bounded(&item.gold_sql, Duration::from_secs(10), 1000);
            assert!(res.ok, "{}: {:?}", item.item_id, res.err);
        }
    }

    #[test]
    fn dirty_item_gold_executes_empty() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = write_benchmark(dir.path()).unwrap();
        let split = fixture.load_split().unwrap();
        let store = fixture.load_store(&split).unwrap();
        let item = split.item("dev-10").unwrap();
        assert!(item.gold_sql.contains("'United States'"));
        let db = SqliteDb::open_read_only(store.db_file("atlas").unwrap()).unwrap();
        let res = db.execute_bounded(&item.gold_sql, Duration::from_secs(10), 1000);
        assert!(res.ok);
        assert!(res.rows.is_empty());
    }

    #[test]
    fn difficulty_mix_matches_design() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = write_benchmark(dir.path()).unwrap();
        let split = fixture.load_split().unwrap();
        use crate::bench_io::Difficulty;
        let count = |d: Difficulty| split.items.iter().filter(|i| i.difficulty == d).count();
        assert_eq!(count(Difficulty::Simple), 5);
        assert_eq!(count(Difficulty::Moderate), 4);
        assert_eq!(count(Difficulty::Challenging), 3);
    }
}
