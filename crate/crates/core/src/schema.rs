//! Schema data model, the schema-subset algebra, and prompt rendering.
//!
//! A [`SchemaSubset`] is the working currency of the pipeline: pruning
//! produces one, back-linking produces one per sub-query, and merging folds
//! them into the focused schema used for final synthesis. Merging is plain
//! table-wise set union; the rendered text is byte-deterministic for fixed
//! inputs (the template is documented in `docs/schema-template.md`).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub declared_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Up to k sample values, stored byte-exact (a value of `"US "` keeps
    /// its trailing space; dirty-data handling depends on this).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub primary_key: Vec<String>,
}

impl TableDef {
    /// Case-insensitive column lookup.
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column(name).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

/// Full relational schema of one benchmark database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub foreign_keys: Vec<ForeignKey>,
}

impl DbSchema {
    /// Case-insensitive table lookup.
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// Check structural invariants: unique table/column names, PK and FK
    /// columns exist in their tables.
    pub fn validate(&self) -> crate::Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.to_lowercase()) {
                return Err(crate::Error::invalid(format!("duplicate table name '{}'", t.name)));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_lowercase()) {
                    return Err(crate::Error::invalid(format!(
                        "duplicate column '{}' in table '{}'",
                        c.name, t.name
                    )));
                }
            }
            for pk in &t.primary_key {
                if !t.has_column(pk) {
                    return Err(crate::Error::invalid(format!(
                        "primary key column '{}.{}' does not exist",
                        t.name, pk
                    )));
                }
            }
        }
        for fk in &self.foreign_keys {
            let from = self
                .table(&fk.from_table)
                .ok_or_else(|| crate::Error::invalid(format!("foreign key from unknown table '{}'", fk.from_table)))?;
            let to = self
                .table(&fk.to_table)
                .ok_or_else(|| crate::Error::invalid(format!("foreign key to unknown table '{}'", fk.to_table)))?;
            if !from.has_column(&fk.from_column) || !to.has_column(&fk.to_column) {
                return Err(crate::Error::invalid(format!(
                    "foreign key {}.{} -> {}.{} references a missing column",
                    fk.from_table, fk.from_column, fk.to_table, fk.to_column
                )));
            }
        }
        Ok(())
    }
}

/// A table -> column-set mapping derived from some parent [`DbSchema`].
///
/// Invariant: no table maps to an empty column set; a table with zero
/// retained columns is absent from the map entirely.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaSubset {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl SchemaSubset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Subset covering every table and column of `schema`.
    pub fn full(schema: &DbSchema) -> Self {
        let mut s = Self::new();
        for t in &schema.tables {
            for c in &t.columns {
                s.insert(&t.name, &c.name);
            }
        }
        s
    }

    pub fn insert(&mut self, table: &str, column: &str) {
        self.entries.entry(table.to_string()).or_default().insert(column.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn columns(&self, table: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(table)
    }

    pub fn contains(&self, table: &str, column: &str) -> bool {
        self.entries.get(table).is_some_and(|cols| cols.contains(column))
    }

    pub fn contains_table(&self, table: &str) -> bool {
        self.entries.contains_key(table)
    }

    /// Iterate all (table, column) pairs in deterministic order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .flat_map(|(t, cols)| cols.iter().map(move |c| (t.as_str(), c.as_str())))
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(|c| c.len()).sum()
    }
}

impl FromIterator<(String, String)> for SchemaSubset {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        let mut s = Self::new();
        for (t, c) in iter {
            s.insert(&t, &c);
        }
        s
    }
}

/// Union-merge a list of subsets: for every table, the result holds the
/// union of that table's column sets across all parts. Tables absent from
/// every part are absent from the result.
pub fn merge_subsets(parts: &[SchemaSubset]) -> SchemaSubset {
    let mut out = SchemaSubset::new();
    for part in parts {
        for (t, c) in part.pairs() {
            out.insert(t, c);
        }
    }
    out
}

/// Drop every (table, column) pair that does not exist in `schema`, restoring
/// the schema's canonical casing on everything kept. Matching is
/// case-insensitive. Returns the cleaned subset and one warning per dropped
/// pair.
pub fn validate_against(subset: &SchemaSubset, schema: &DbSchema) -> (SchemaSubset, Vec<String>) {
    let mut out = SchemaSubset::new();
    let mut warnings = Vec::new();
    for (t, c) in subset.pairs() {
        match schema.table(t) {
            Some(table) => match table.column(c) {
                Some(col) => out.insert(&table.name, &col.name),
                None => warnings.push(format!("dropped {}.{}", t, c)),
            },
            None => warnings.push(format!("dropped {}.{}", t, c)),
        }
    }
    (out, warnings)
}

/// Join-safety closure: re-add every primary-key column of each retained
/// table, and both endpoint columns of any foreign key whose two tables are
/// both retained. Pruning that breaks join paths poisons every downstream
/// agent, so subsets headed into prompts go through this.
pub fn close_over_keys(subset: &SchemaSubset, schema: &DbSchema) -> SchemaSubset {
    let mut out = subset.clone();
    let retained: Vec<String> = out.tables().map(|t| t.to_string()).collect();
    for name in &retained {
        if let Some(t) = schema.table(name) {
            for pk in &t.primary_key {
                out.insert(&t.name, pk);
            }
        }
    }
    for fk in &schema.foreign_keys {
        if out.contains_table(&fk.from_table) && out.contains_table(&fk.to_table) {
            out.insert(&fk.from_table, &fk.from_column);
            out.insert(&fk.to_table, &fk.to_column);
        }
    }
    out
}

/// What part of the schema a render covers.
#[derive(Debug, Clone, Copy)]
pub enum SchemaView<'a> {
    All,
    Subset(&'a SchemaSubset),
}

impl<'a> SchemaView<'a> {
    fn keeps(&self, table: &str, column: &str) -> bool {
        match self {
            SchemaView::All => true,
            SchemaView::Subset(s) => s.contains(table, column),
        }
    }

    fn keeps_table(&self, table: &str) -> bool {
        match self {
            SchemaView::All => true,
            SchemaView::Subset(s) => s.contains_table(table),
        }
    }
}

/// Render the schema (or a subset of it) as deterministic prompt text.
///
/// Per retained table: a table header, one line per retained column carrying
/// name, declared type, description when present, and sample values; then a
/// primary-key sentence. A trailing block describes each foreign key whose
/// endpoint columns are both retained. The exact template is fixed in
/// `docs/schema-template.md`.
pub fn render_schema(schema: &DbSchema, view: SchemaView<'_>) -> String {
    let mut out = String::new();
    out.push_str(&format!("Database: {}\n", schema.db_id));

    let retained: Vec<&TableDef> =
        schema.tables.iter().filter(|t| view.keeps_table(&t.name)).collect();
    if retained.is_empty() {
        out.push_str("(no tables retained)\n");
        return out;
    }

    for table in &retained {
        out.push_str(&format!("Table: {}\n", table.name));
        out.push_str("  Columns:\n");
        for col in &table.columns {
            if !view.keeps(&table.name, &col.name) {
                continue;
            }
            let mut line = format!("    {} ({})", col.name, col.declared_type);
            if let Some(desc) = &col.description {
                line.push_str(&format!(": {}", desc));
            }
            if !col.samples.is_empty() {
                let rendered: Vec<String> = col
                    .samples
                    .iter()
                    .map(|s| serde_json::to_string(s).unwrap_or_else(|_| s.clone()))
                    .collect();
                line.push_str(&format!(" | samples: {}", rendered.join(", ")));
            }
            line.push('\n');
            out.push_str(&line);
        }
        // A PK sentence would dangle if pruning dropped part of the key, so
        // it renders only when every key column is retained.
        let pk_visible = !table.primary_key.is_empty()
            && table.primary_key.iter().all(|c| view.keeps(&table.name, c));
        if pk_visible {
            out.push_str(&format!(
                "  Primary key: {} identifies one row of {}.\n",
                table.primary_key.join(", "),
                table.name
            ));
        }
    }

    out.push_str("Foreign keys:\n");
    let mut any_fk = false;
    for fk in &schema.foreign_keys {
        if view.keeps(&fk.from_table, &fk.from_column) && view.keeps(&fk.to_table, &fk.to_column) {
            any_fk = true;
            out.push_str(&format!(
                "  {}.{} references {}.{}: each {} row links to the {} row whose {} matches its {}.\n",
                fk.from_table,
                fk.from_column,
                fk.to_table,
                fk.to_column,
                fk.from_table,
                fk.to_table,
                fk.to_column,
                fk.from_column
            ));
        }
    }
    if !any_fk {
        out.push_str("  (none)\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn city_schema() -> DbSchema {
        DbSchema {
            db_id: "atlas".into(),
            tables: vec![
                TableDef {
                    name: "city".into(),
                    columns: vec![
                        ColumnDef {
                            name: "name".into(),
                            declared_type: "TEXT".into(),
                            description: None,
                            samples: vec!["Oslo".into(), "Bergen".into()],
                        },
                        ColumnDef {
                            name: "pop".into(),
                            declared_type: "INTEGER".into(),
                            description: Some("population".into()),
                            samples: vec![],
                        },
                    ],
                    primary_key: vec!["name".into()],
                },
                TableDef {
                    name: "country".into(),
                    columns: vec![
                        ColumnDef {
                            name: "code".into(),
                            declared_type: "TEXT".into(),
                            description: None,
                            samples: vec![],
                        },
                        ColumnDef {
                            name: "cname".into(),
                            declared_type: "TEXT".into(),
                            description: None,
                            samples: vec![],
                        },
                    ],
                    primary_key: vec!["code".into()],
                },
            ],
            foreign_keys: vec![ForeignKey {
                from_table: "city".into(),
                from_column: "name".into(),
                to_table: "country".into(),
                to_column: "code".into(),
            }],
        }
    }

    fn subset(pairs: &[(&str, &str)]) -> SchemaSubset {
        pairs.iter().map(|(t, c)| (t.to_string(), c.to_string())).collect()
    }

    #[test]
    fn merge_identity_with_empty() {
        let s = subset(&[("city", "name"), ("country", "code")]);
        assert_eq!(merge_subsets(&[s.clone(), SchemaSubset::new()]), s);
    }

    #[test]
    fn merge_unions_per_table() {
        let a = subset(&[("city", "name")]);
        let b = subset(&[("city", "pop")]);
        assert_eq!(merge_subsets(&[a, b]), subset(&[("city", "name"), ("city", "pop")]));
    }

    #[test]
    fn merge_empty_input_is_empty() {
        assert!(merge_subsets(&[]).is_empty());
    }

    #[test]
    fn validate_keeps_valid_pairs() {
        let schema = city_schema();
        let s = subset(&[("city", "name")]);
        let (out, warnings) = validate_against(&s, &schema);
        assert_eq!(out, s);
        assert!(warnings.is_empty());
    }

    #[test]
    fn validate_drops_typo_with_warning() {
        let schema = city_schema();
        let (out, warnings) = validate_against(&subset(&[("city", "nmae")]), &schema);
        assert!(out.is_empty());
        assert_eq!(warnings, vec!["dropped city.nmae".to_string()]);
    }

    #[test]
    fn validate_restores_canonical_casing() {
        let schema = city_schema();
        let (out, warnings) = validate_against(&subset(&[("CITY", "NAME")]), &schema);
        assert_eq!(out, subset(&[("city", "name")]));
        assert!(warnings.is_empty());
    }

    #[test]
    fn closure_re_adds_pk_and_fk_endpoints() {
        let schema = city_schema();
        let closed = close_over_keys(&subset(&[("city", "pop"), ("country", "cname")]), &schema);
        assert!(closed.contains("city", "name")); // pk + fk endpoint
        assert!(closed.contains("country", "code"));
        assert!(closed.contains("city", "pop"));
        assert!(closed.contains("country", "cname"));
    }

    #[test]
    fn render_empty_subset_has_marker() {
        let schema = city_schema();
        let text = render_schema(&schema, SchemaView::Subset(&SchemaSubset::new()));
        assert!(text.starts_with("Database: atlas\n"));
        assert!(text.contains("(no tables retained)"));
    }

    #[test]
    fn render_full_contains_all_elements() {
        let schema = city_schema();
        let text = render_schema(&schema, SchemaView::All);
        assert!(text.contains("Table: city"));
        assert!(text.contains("name (TEXT)"));
        assert!(text.contains("samples: \"Oslo\", \"Bergen\""));
        assert!(text.contains("pop (INTEGER): population"));
        assert!(text.contains("Primary key: name identifies one row of city."));
        assert!(text.contains(
            "city.name references country.code: each city row links to the country row whose code matches its name."
        ));
    }

    #[test]
    fn render_suppresses_pk_line_when_key_pruned() {
        let schema = city_schema();
        let view = subset(&[("city", "pop")]);
        let text = render_schema(&schema, SchemaView::Subset(&view));
        assert!(!text.contains("Primary key: name"));
        assert!(text.contains("pop (INTEGER)"));
    }

    #[test]
    fn render_mentions_each_column_once_in_listing_region() {
        let schema = city_schema();
        let text = render_schema(&schema, SchemaView::All);
        let column_lines: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("    ") && !l.trim_start().is_empty())
            .collect();
        let mut expected = 0;
        for t in &schema.tables {
            for c in &t.columns {
                expected += 1;
                let hits = column_lines
                    .iter()
                    .filter(|l| l.trim_start().starts_with(&format!("{} (", c.name)))
                    .count();
                assert!(hits >= 1, "column {}.{} missing", t.name, c.name);
            }
        }
        assert_eq!(column_lines.len(), expected);
    }

    #[test]
    fn schema_validate_rejects_bad_pk() {
        let mut schema = city_schema();
        schema.tables[0].primary_key = vec!["missing".into()];
        assert!(schema.validate().is_err());
    }

    #[test]
    fn subset_serde_round_trip() {
        let s = subset(&[("city", "name"), ("country", "code")]);
        let json = serde_json::to_string(&s).unwrap();
        let back: SchemaSubset = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }
}
