//! Execution-based evaluation: execution accuracy (EX) and the valid
//! efficiency score (VES), with difficulty-stratified reporting.
//!
//! Result comparison is multiset equality over normalized rows (numeric
//! cells within 1e-6, text byte-exact, column order significant), switching
//! to order-sensitive sequence equality when the gold query's top-level
//! SELECT carries an ORDER BY. A `set` compatibility mode dedupes rows
//! first, matching the official Spider script's set-like comparison.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bench_io::{Difficulty, TaskItem};
use crate::db::{CellValue, ExecResult, SqliteDb};
use crate::sqlast;

pub const NUMERIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExSemantics {
    Multiset,
    Set,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub timing_runs: usize,
    pub row_cap: usize,
    pub exec_timeout_ms: u64,
    pub semantics: ExSemantics,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { timing_runs: 3, row_cap: 100_000, exec_timeout_ms: 30_000, semantics: ExSemantics::Multiset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    None,
    PredError,
    GoldErrorExecution,
    Mismatch,
}

impl FailureClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureClass::None => "none",
            FailureClass::PredError => "pred_error",
            FailureClass::GoldErrorExecution => "gold_error_execution",
            FailureClass::Mismatch => "mismatch",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub ex: u8,
    pub ves_component: f64,
    pub pred_sql: String,
    pub gold_sql: String,
    pub failure_class: FailureClass,
}

fn cell_rank(c: &CellValue) -> u8 {
    match c {
        CellValue::Null => 0,
        CellValue::Int(_) | CellValue::Real(_) => 1,
        CellValue::Text(_) => 2,
        CellValue::Blob(_) => 3,
    }
}

fn cmp_cells(a: &CellValue, b: &CellValue) -> Ordering {
    match cell_rank(a).cmp(&cell_rank(b)) {
        Ordering::Equal => match (a, b) {
            (CellValue::Null, CellValue::Null) => Ordering::Equal,
            (CellValue::Text(x), CellValue::Text(y)) => x.cmp(y),
            (CellValue::Blob(x), CellValue::Blob(y)) => x.cmp(y),
            _ => {
                let x = a.as_f64().unwrap_or(f64::NAN);
                let y = b.as_f64().unwrap_or(f64::NAN);
                x.total_cmp(&y)
            }
        },
        other => other,
    }
}

fn cmp_rows(a: &[CellValue], b: &[CellValue]) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match cmp_cells(x, y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Tolerance-aware cell equality: numerics within 1e-6 across INTEGER/REAL,
/// text and blobs byte-exact.
pub fn cells_equal(a: &CellValue, b: &CellValue) -> bool {
    match (a, b) {
        (CellValue::Null, CellValue::Null) => true,
        (CellValue::Text(x), CellValue::Text(y)) => x == y,
        (CellValue::Blob(x), CellValue::Blob(y)) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= NUMERIC_TOLERANCE,
            _ => false,
        },
    }
}

fn rows_equal(a: &[CellValue], b: &[CellValue]) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| cells_equal(x, y))
}

/// Row wrapper ordered by the canonical total order, for dedup sets.
struct OrdRow(Vec<CellValue>);

impl PartialEq for OrdRow {
    fn eq(&self, other: &Self) -> bool {
        cmp_rows(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for OrdRow {}
impl PartialOrd for OrdRow {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdRow {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_rows(&self.0, &other.0)
    }
}

/// Compare two row sets under the chosen semantics. `order_sensitive`
/// switches from multiset equality to sequence equality.
pub fn rows_equivalent(
    a: &[Vec<CellValue>],
    b: &[Vec<CellValue>],
    order_sensitive: bool,
    semantics: ExSemantics,
) -> bool {
    let normalize = |rows: &[Vec<CellValue>]| -> Vec<Vec<CellValue>> {
        let mut out: Vec<Vec<CellValue>> = rows.to_vec();
        if semantics == ExSemantics::Set {
            // Drop duplicate rows, keeping first occurrences in order.
            let mut seen = std::collections::BTreeSet::new();
            out.retain(|row| seen.insert(OrdRow(row.clone())));
        }
        if !order_sensitive {
            out.sort_by(|x, y| cmp_rows(x, y));
        }
        out
    };
    let left = normalize(a);
    let right = normalize(b);
    left.len() == right.len() && left.iter().zip(right.iter()).all(|(x, y)| rows_equal(x, y))
}

/// Execution-result match per the EX definition. Both results must be ok;
/// order sensitivity comes from the gold SQL's top-level ORDER BY.
pub fn results_match(pred: &ExecResult, gold: &ExecResult, gold_sql: &str) -> bool {
    results_match_with(pred, gold, gold_sql, ExSemantics::Multiset)
}

pub fn results_match_with(
    pred: &ExecResult,
    gold: &ExecResult,
    gold_sql: &str,
    semantics: ExSemantics,
) -> bool {
    if !pred.ok || !gold.ok || pred.truncated || gold.truncated {
        return false;
    }
    let order_sensitive = sqlast::has_top_level_order_by(gold_sql);
    rows_equivalent(&pred.rows, &gold.rows, order_sensitive, semantics)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn timed_runs(db: &SqliteDb, sql: &str, runs: usize, timeout: Duration, row_cap: usize) -> Vec<f64> {
    (0..runs)
        .map(|_| db.execute_bounded(sql, timeout, row_cap).wall_time_ms)
        .collect()
}

/// Evaluate one item: execute gold and prediction, compare, and time the
/// efficiency ratio when they match. The correctness executions double as
/// the discarded warm-up before the timed repetitions.
pub fn eval_item(
    item: &TaskItem,
    pred_sql: &str,
    db: &SqliteDb,
    config: &EvalConfig,
    warnings: &mut Vec<String>,
) -> EvalRecord {
    let timeout = Duration::from_millis(config.exec_timeout_ms);
    let record = |ex: u8, ves: f64, failure: FailureClass| EvalRecord {
        item_id: item.item_id.clone(),
        ex,
        ves_component: ves,
        pred_sql: pred_sql.to_string(),
        gold_sql: item.gold_sql.clone(),
        failure_class: failure,
    };

    let gold_res = db.execute_bounded(&item.gold_sql, timeout, config.row_cap);
    if !gold_res.ok {
        warnings.push(format!(
            "{}: gold SQL failed to execute ({}); flagging for audit",
            item.item_id,
            gold_res.err.as_deref().unwrap_or("?")
        ));
        return record(0, 0.0, FailureClass::GoldErrorExecution);
    }
    let pred_res = db.execute_bounded(pred_sql, timeout, config.row_cap);
    if !pred_res.ok {
        return record(0, 0.0, FailureClass::PredError);
    }
    if gold_res.truncated || pred_res.truncated {
        warnings.push(format!("{}: result truncated at {} rows; treated as mismatch", item.item_id, config.row_cap));
        return record(0, 0.0, FailureClass::Mismatch);
    }
    if !results_match_with(&pred_res, &gold_res, &item.gold_sql, config.semantics) {
        return record(0, 0.0, FailureClass::Mismatch);
    }

    // Efficiency ratio R = sqrt(gold / pred) over median timings.
    let gold_times = timed_runs(db, &item.gold_sql, config.timing_runs, timeout, config.row_cap);
    let pred_times = timed_runs(db, pred_sql, config.timing_runs, timeout, config.row_cap);
    let gold_med = median(gold_times).max(1e-4);
    let pred_med = median(pred_times).max(1e-4);
    let ratio = (gold_med / pred_med).sqrt();
    record(1, ratio, FailureClass::None)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BucketStats {
    pub n: usize,
    pub matches: usize,
    pub ex_percent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub n: usize,
    pub ex_percent: f64,
    pub ves: f64,
    pub by_difficulty: BTreeMap<String, BucketStats>,
    pub failure_counts: BTreeMap<String, usize>,
    pub records: Vec<EvalRecord>,
}

/// Fold per-item records into the difficulty-stratified report. Items supply
/// the difficulty labels; records and items align by item_id.
pub fn aggregate(records: Vec<EvalRecord>, items: &[TaskItem]) -> Report {
    let difficulty_of: BTreeMap<&str, Difficulty> =
        items.iter().map(|i| (i.item_id.as_str(), i.difficulty)).collect();

    let n = records.len();
    let matches = records.iter().filter(|r| r.ex == 1).count();
    let ex_percent = if n == 0 { 0.0 } else { 100.0 * matches as f64 / n as f64 };
    let ves = if n == 0 { 0.0 } else { 100.0 * records.iter().map(|r| r.ves_component).sum::<f64>() / n as f64 };

    let mut by_difficulty: BTreeMap<String, BucketStats> = BTreeMap::new();
    for record in &records {
        let difficulty =
            difficulty_of.get(record.item_id.as_str()).copied().unwrap_or(Difficulty::Unknown);
        let bucket = by_difficulty.entry(difficulty.as_str().to_string()).or_default();
        bucket.n += 1;
        bucket.matches += usize::from(record.ex == 1);
    }
    for bucket in by_difficulty.values_mut() {
        bucket.ex_percent = if bucket.n == 0 { 0.0 } else { 100.0 * bucket.matches as f64 / bucket.n as f64 };
    }

    let mut failure_counts = BTreeMap::new();
    for record in &records {
        *failure_counts.entry(record.failure_class.as_str().to_string()).or_insert(0) += 1;
    }

    Report { n, ex_percent, ves, by_difficulty, failure_counts, records }
}

impl Report {
    /// The stdout table: one row per difficulty bucket plus the total line.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>6} {:>8}\n", "Bucket", "N", "EX"));
        for (name, bucket) in &self.by_difficulty {
            out.push_str(&format!("{:<14} {:>6} {:>8.2}\n", name, bucket.n, bucket.ex_percent));
        }
        out.push_str(&format!("{:<14} {:>6} {:>8.2}   VES {:.2}\n", "total", self.n, self.ex_percent, self.ves));
        if !self.failure_counts.is_empty() {
            let parts: Vec<String> =
                self.failure_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!("failures: {}\n", parts.join(", ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db() -> SqliteDb {
        let db = SqliteDb::open_in_memory().unwrap();
        db.connection()
            .execute_batch(
                "CREATE TABLE city(name TEXT PRIMARY KEY, pop INTEGER);
                 INSERT INTO city VALUES ('Oslo', 700000), ('Bergen', 280000), ('Tromso', 77000);",
            )
            .unwrap();
        db
    }

    fn item(id: &str, gold: &str) -> TaskItem {
        TaskItem {
            item_id: id.into(),
            question: "q".into(),
            db_id: "atlas".into(),
            gold_sql: gold.into(),
            evidence: None,
            difficulty: Difficulty::Unknown,
        }
    }

    fn rows(vals: &[&[i64]]) -> Vec<Vec<CellValue>> {
        vals.iter().map(|r| r.iter().map(|v| CellValue::Int(*v)).collect()).collect()
    }

    #[test]
    fn multiset_match_ignores_row_order() {
        let a = rows(&[&[1], &[2]]);
        let b = rows(&[&[2], &[1]]);
        assert!(rows_equivalent(&a, &b, false, ExSemantics::Multiset));
        assert!(!rows_equivalent(&a, &b, true, ExSemantics::Multiset));
    }

    #[test]
    fn order_sensitivity_follows_gold_order_by() {
        let mk = |rows_v| ExecResult {
            ok: true,
            columns: vec!["x".into()],
            rows: rows_v,
            err: None,
            wall_time_ms: 0.0,
            truncated: false,
        };
        let pred = mk(rows(&[&[1], &[2]]));
        let gold = mk(rows(&[&[2], &[1]]));
        assert!(results_match(&pred, &gold, "SELECT x FROM t"));
        assert!(!results_match(&pred, &gold, "SELECT x FROM t ORDER BY x DESC"));
    }

    #[test]
    fn numeric_tolerance_and_text_exactness() {
        assert!(cells_equal(&CellValue::Int(1), &CellValue::Real(1.0000001)));
        assert!(!cells_equal(&CellValue::Int(1), &CellValue::Real(1.1)));
        assert!(!cells_equal(&CellValue::Text("US".into()), &CellValue::Text("US ".into())));
    }

    #[test]
    fn multiset_keeps_duplicates_set_drops_them() {
        let a = rows(&[&[1], &[1], &[2]]);
        let b = rows(&[&[1], &[2]]);
        assert!(!rows_equivalent(&a, &b, false, ExSemantics::Multiset));
        assert!(rows_equivalent(&a, &b, false, ExSemantics::Set));
    }

    #[test]
    fn ragged_rows_never_match() {
        let a = vec![vec![CellValue::Int(1), CellValue::Int(2)]];
        let b = vec![vec![CellValue::Int(1)]];
        assert!(!rows_equivalent(&a, &b, false, ExSemantics::Multiset));
    }

    #[test]
    fn self_eval_is_exact_match_with_unit_ratio() {
        let db = db();
        let it = item("a", "SELECT name FROM city WHERE pop > 100000");
        let mut warnings = Vec::new();
        let record = eval_item(&it, &it.gold_sql, &db, &EvalConfig::default(), &mut warnings);
        assert_eq!(record.ex, 1);
        assert_eq!(record.failure_class, FailureClass::None);
        // identical queries: ratio is 1 up to timing noise
        assert!((record.ves_component - 1.0).abs() < 0.25, "ratio {} too noisy", record.ves_component);
    }

    #[test]
    fn pred_error_zeroes_everything() {
        let db = db();
        let it = item("a", "SELECT name FROM city");
        let mut warnings = Vec::new();
        let record = eval_item(&it, "SELECT nmae FROM city", &db, &EvalConfig::default(), &mut warnings);
        assert_eq!(record.ex, 0);
        assert_eq!(record.ves_component, 0.0);
        assert_eq!(record.failure_class, FailureClass::PredError);
    }

    #[test]
    fn gold_error_is_flagged_for_audit() {
        let db = db();
        let it = item("a", "SELECT nmae FROM city");
        let mut warnings = Vec::new();
        let record = eval_item(&it, "SELECT name FROM city", &db, &EvalConfig::default(), &mut warnings);
        assert_eq!(record.failure_class, FailureClass::GoldErrorExecution);
        assert_eq!(record.ex, 0);
        assert!(warnings.iter().any(|w| w.contains("audit")));
    }

    #[test]
    fn aggregate_buckets_and_totals() {
        let items = vec![
            TaskItem { difficulty: Difficulty::Simple, ..item("a", "g") },
            TaskItem { difficulty: Difficulty::Simple, ..item("b", "g") },
            TaskItem { difficulty: Difficulty::Challenging, ..item("c", "g") },
            item("d", "g"),
        ];
        let mk = |id: &str, ex: u8, r: f64| EvalRecord {
            item_id: id.into(),
            ex,
            ves_component: r,
            pred_sql: String::new(),
            gold_sql: String::new(),
            failure_class: if ex == 1 { FailureClass::None } else { FailureClass::Mismatch },
        };
        let report = aggregate(vec![mk("a", 1, 1.0), mk("b", 0, 0.0), mk("c", 1, 1.0), mk("d", 0, 0.0)], &items);
        assert_eq!(report.n, 4);
        assert!((report.ex_percent - 50.0).abs() < 1e-9);
        assert!((report.ves - 50.0).abs() < 1e-9);
        assert_eq!(report.by_difficulty["simple"].n, 2);
        assert_eq!(report.by_difficulty["simple"].matches, 1);
        assert_eq!(report.by_difficulty["challenging"].ex_percent, 100.0);
        assert_eq!(report.by_difficulty["unknown"].n, 1);
        assert_eq!(report.failure_counts["mismatch"], 2);
    }

    #[test]
    fn all_correct_and_all_wrong_extremes() {
        let items = vec![item("a", "g"), item("b", "g")];
        let ok = |id: &str| EvalRecord {
            item_id: id.into(),
            ex: 1,
            ves_component: 1.0,
            pred_sql: String::new(),
            gold_sql: String::new(),
            failure_class: FailureClass::None,
        };
        let report = aggregate(vec![ok("a"), ok("b")], &items);
        assert_eq!(report.ex_percent, 100.0);
        assert_eq!(report.ves, 100.0);

        let bad = |id: &str| EvalRecord { ex: 0, ves_component: 0.0, failure_class: FailureClass::Mismatch, ..ok(id) };
        let report = aggregate(vec![bad("a"), bad("b")], &items);
        assert_eq!(report.ex_percent, 0.0);
        assert_eq!(report.ves, 0.0);
    }
}
