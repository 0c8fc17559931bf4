//! Read-only SQLite execution with a wall-clock timeout and row caps.
//!
//! Every worker owns its own connection; `rusqlite::Connection` is not
//! `Sync` and the engine never shares one across threads.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::Result;

/// One cell of a query result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellValue {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl CellValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            CellValue::Int(i) => Some(*i as f64),
            CellValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Short human rendering used in result previews.
    pub fn render(&self) -> String {
        match self {
            CellValue::Null => "NULL".to_string(),
            CellValue::Int(i) => i.to_string(),
            CellValue::Real(r) => r.to_string(),
            CellValue::Text(s) => serde_json::to_string(s).unwrap_or_else(|_| s.clone()),
            CellValue::Blob(b) => format!("<blob {} bytes>", b.len()),
        }
    }
}

fn cell_from_ref(v: ValueRef<'_>) -> CellValue {
    match v {
        ValueRef::Null => CellValue::Null,
        ValueRef::Integer(i) => CellValue::Int(i),
        ValueRef::Real(r) => CellValue::Real(r),
        ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => CellValue::Blob(b.to_vec()),
    }
}

/// Outcome of one bounded execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecResult {
    pub ok: bool,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
    pub err: Option<String>,
    pub wall_time_ms: f64,
    pub truncated: bool,
}

impl ExecResult {
    fn failure(err: String, wall_time_ms: f64) -> Self {
        ExecResult { ok: false, columns: vec![], rows: vec![], err: Some(err), wall_time_ms, truncated: false }
    }

    /// Bounded textual preview: at most `max_rows` rows and `max_chars`
    /// characters, one `(cell, cell, ...)` tuple per line.
    pub fn preview(&self, max_rows: usize, max_chars: usize) -> String {
        if let Some(err) = &self.err {
            return format!("error: {err}");
        }
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            if i >= max_rows {
                out.push_str(&format!("... ({} more rows)\n", self.rows.len() - max_rows));
                break;
            }
            let cells: Vec<String> = row.iter().map(|c| c.render()).collect();
            out.push_str(&format!("({})\n", cells.join(", ")));
            if out.len() > max_chars {
                break;
            }
        }
        if self.rows.is_empty() {
            out.push_str("(empty result)\n");
        }
        if out.len() > max_chars {
            out.truncate(max_chars);
            out.push_str("...");
        }
        out
    }
}

/// A read-only handle onto one benchmark database.
pub struct SqliteDb {
    conn: Connection,
    path: PathBuf,
}

impl SqliteDb {
    pub fn open_read_only(path: &Path) -> Result<Self> {
        let conn = Connection::open_with_flags(
            path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
        )?;
        Ok(SqliteDb { conn, path: path.to_path_buf() })
    }

    /// In-memory database, writable; used to build fixtures.
    pub fn open_in_memory() -> Result<Self> {
        Ok(SqliteDb { conn: Connection::open_in_memory()?, path: PathBuf::from(":memory:") })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    /// Execute a single query with a wall-clock timeout and a row cap.
    /// Execution failures never panic; they come back as `ok = false` with
    /// the engine's message (or `"timeout"` when the deadline interrupted).
    pub fn execute_bounded(&self, sql: &str, timeout: Duration, row_cap: usize) -> ExecResult {
        let start = Instant::now();
        let deadline = start + timeout;
        let _ = self.conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));
        let outcome = self.run_query(sql, row_cap);
        let _ = self.conn.progress_handler(0, None::<fn() -> bool>);
        let wall = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok((columns, rows, truncated)) => {
                ExecResult { ok: true, columns, rows, err: None, wall_time_ms: wall, truncated }
            }
            Err(e) => {
                let msg = if start.elapsed() >= timeout { "timeout".to_string() } else { e.to_string() };
                ExecResult::failure(msg, wall)
            }
        }
    }

    fn run_query(&self, sql: &str, row_cap: usize) -> rusqlite::Result<(Vec<String>, Vec<Vec<CellValue>>, bool)> {
        let mut stmt = self.conn.prepare(sql)?;
        let ncols = stmt.column_count();
        let columns: Vec<String> = (0..ncols).map(|i| stmt.column_name(i).unwrap_or("").to_string()).collect();
        let mut rows = Vec::new();
        let mut truncated = false;
        let mut iter = stmt.query([])?;
        while let Some(row) = iter.next()? {
            if rows.len() >= row_cap {
                truncated = true;
                break;
            }
            let mut cells = Vec::with_capacity(ncols);
            for i in 0..ncols {
                cells.push(cell_from_ref(row.get_ref(i)?));
            }
            rows.push(cells);
        }
        Ok((columns, rows, truncated))
    }

    /// Distinct non-NULL TEXT values of one column, in storage order,
    /// byte-exact, capped at `limit`.
    pub fn distinct_text_values(&self, table: &str, column: &str, limit: usize) -> Result<Vec<String>> {
        let sql = format!(
            "SELECT DISTINCT {} FROM {} WHERE {} IS NOT NULL LIMIT {}",
            quote_ident(column),
            quote_ident(table),
            quote_ident(column),
            limit
        );
        let mut stmt = self.conn.prepare(&sql)?;
        let mut out = Vec::new();
        let mut iter = stmt.query([])?;
        while let Some(row) = iter.next()? {
            if let ValueRef::Text(t) = row.get_ref(0)? {
                out.push(String::from_utf8_lossy(t).into_owned());
            }
        }
        Ok(out)
    }

    /// First `k` distinct non-NULL values of a column in storage order,
    /// rendered as strings (TEXT kept byte-exact). The scan is capped so a
    /// huge table cannot stall schema loading.
    pub fn sample_column_values(&self, table: &str, column: &str, k: usize) -> Result<Vec<String>> {
        let sql = format!(
            "SELECT {} FROM {} WHERE {} IS NOT NULL LIMIT 4096",
            quote_ident(column),
            quote_ident(table),
            quote_ident(column)
        );
        let mut stmt = self.conn.prepare(&sql)?;
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        let mut iter = stmt.query([])?;
        while let Some(row) = iter.next()? {
            if out.len() >= k {
                break;
            }
            let rendered = match row.get_ref(0)? {
                ValueRef::Null => continue,
                ValueRef::Integer(i) => i.to_string(),
                ValueRef::Real(r) => r.to_string(),
                ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
                ValueRef::Blob(b) => format!("0x{}", hex_string(b)),
            };
            if seen.insert(rendered.clone()) {
                out.push(rendered);
            }
        }
        Ok(out)
    }

    /// Names of all user tables, in sqlite_master order.
    pub fn user_tables(&self) -> Result<Vec<String>> {
        let mut stmt = self
            .conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%'")?;
        let names = stmt
            .query_map([], |row| row.get::<_, String>(0))?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(names)
    }

    /// Minimal schema read straight from the SQLite catalog (PRAGMA
    /// table_info + foreign_key_list). Used where no schema description
    /// file is available, e.g. the audit detectors.
    pub fn catalog_schema(&self, db_id: &str) -> Result<crate::schema::DbSchema> {
        use crate::schema::{ColumnDef, DbSchema, ForeignKey, TableDef};
        let mut tables = Vec::new();
        let mut foreign_keys = Vec::new();
        for name in self.user_tables()? {
            let mut stmt = self.conn.prepare(&format!("PRAGMA table_info({})", quote_ident(&name)))?;
            let mut columns = Vec::new();
            let mut primary_key = Vec::new();
            let mut iter = stmt.query([])?;
            while let Some(row) = iter.next()? {
                let col: String = row.get(1)?;
                let ty: String = row.get(2)?;
                let pk: i64 = row.get(5)?;
                if pk > 0 {
                    primary_key.push(col.clone());
                }
                columns.push(ColumnDef { name: col, declared_type: ty, description: None, samples: vec![] });
            }
            let mut fk_stmt = self.conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(&name)))?;
            let mut fk_iter = fk_stmt.query([])?;
            while let Some(row) = fk_iter.next()? {
                let to_table: String = row.get(2)?;
                let from_col: String = row.get(3)?;
                let to_col: Option<String> = row.get(4)?;
                foreign_keys.push(ForeignKey {
                    from_table: name.clone(),
                    from_column: from_col,
                    to_table,
                    to_column: to_col.unwrap_or_default(),
                });
            }
            tables.push(TableDef { name, columns, primary_key });
        }
        Ok(DbSchema { db_id: db_id.to_string(), tables, foreign_keys })
    }
}

/// Double-quote an identifier for SQLite, escaping embedded quotes.
pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> SqliteDb {
        let db = SqliteDb::open_in_memory().unwrap();
        db.connection()
            .execute_batch(
                "CREATE TABLE city(name TEXT PRIMARY KEY, pop INTEGER);
                 INSERT INTO city VALUES ('Oslo', 700000), ('Bergen', 280000), ('Oslo2', NULL);",
            )
            .unwrap();
        db
    }

    #[test]
    fn executes_and_returns_rows() {
        let db = fixture();
        let res = db.execute_bounded("SELECT name FROM city ORDER BY name", Duration::from_secs(5), 100);
        assert!(res.ok);
        assert_eq!(res.rows.len(), 3);
        assert_eq!(res.columns, vec!["name"]);
        assert!(!res.truncated);
    }

    #[test]
    fn reports_engine_errors() {
        let db = fixture();
        let res = db.execute_bounded("SELECT nmae FROM city", Duration::from_secs(5), 100);
        assert!(!res.ok);
        assert!(res.err.as_deref().unwrap().contains("nmae"));
    }

    #[test]
    fn caps_rows_and_flags_truncation() {
        let db = fixture();
        let res = db.execute_bounded("SELECT name FROM city", Duration::from_secs(5), 2);
        assert!(res.ok);
        assert_eq!(res.rows.len(), 2);
        assert!(res.truncated);
    }

    #[test]
    fn times_out_on_runaway_query() {
        let db = fixture();
        // A cartesian self-join blowup; the deadline has to interrupt it.
        let sql = "SELECT count(*) FROM city a, city b, city c, city d, city e, city f, city g, city h, city i, city j, city k, city l";
        let res = db.execute_bounded(sql, Duration::from_millis(30), 10);
        // Either the engine finished absurdly fast or it was interrupted.
        if !res.ok {
            assert_eq!(res.err.as_deref(), Some("timeout"));
        }
    }

    #[test]
    fn samples_preserve_bytes_and_order() {
        let db = SqliteDb::open_in_memory().unwrap();
        db.connection()
            .execute_batch(
                "CREATE TABLE t(v TEXT);
                 INSERT INTO t VALUES ('United States '), ('United States '), ('Canada'), (NULL), ('Mexico');",
            )
            .unwrap();
        let samples = db.sample_column_values("t", "v", 2).unwrap();
        assert_eq!(samples, vec!["United States ".to_string(), "Canada".to_string()]);
    }

    #[test]
    fn catalog_schema_reads_pk_and_fk() {
        let db = SqliteDb::open_in_memory().unwrap();
        db.connection()
            .execute_batch(
                "CREATE TABLE users(id INTEGER PRIMARY KEY, name TEXT);
                 CREATE TABLE orders(id INTEGER PRIMARY KEY, user_id INTEGER REFERENCES users(id));",
            )
            .unwrap();
        let schema = db.catalog_schema("shop").unwrap();
        assert_eq!(schema.tables.len(), 2);
        assert_eq!(schema.table("users").unwrap().primary_key, vec!["id"]);
        assert_eq!(schema.foreign_keys.len(), 1);
        assert_eq!(schema.foreign_keys[0].to_table, "users");
    }
}
