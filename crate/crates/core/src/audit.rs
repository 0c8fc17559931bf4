//! Benchmark quality auditing: deterministic detectors flag candidate gold
//! errors, humans confirm them through annotation files, agreement is
//! measured with Cohen's Kappa, and adjudicated annotations drive
//! clean-subset re-evaluation.
//!
//! Detectors only flag. The classification itself is manual work done in
//! JSONL annotation files (`docs/annotations.md`); nothing here rewrites a
//! verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench_io::{resolve_db_file, BenchmarkSplit, Provenance};
use crate::db::SqliteDb;
use crate::eval::EvalRecord;
use crate::sqlast;
use crate::{Error, Result};

const DETECTOR_EXEC_TIMEOUT_MS: u64 = 15_000;
const DETECTOR_ROW_CAP: usize = 10_000;
const DIRTY_SCAN_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    A,
    B,
    C,
    #[serde(rename = "none")]
    None,
}

impl ErrorType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorType::A => "A",
            ErrorType::B => "B",
            ErrorType::C => "C",
            ErrorType::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Detector,
    Human,
}

/// One quality verdict for one item (or, for database-level findings, one
/// column; those use synthetic `column::<db>.<table>.<column>` ids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldErrorAnnotation {
    pub item_id: String,
    pub error_type: ErrorType,
    #[serde(default)]
    pub subtype: String,
    pub source: AnnotationSource,
    pub annotator_id: String,
    #[serde(default)]
    pub adjudicated: bool,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub low_confidence: bool,
}

impl GoldErrorAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.error_type == ErrorType::None && !self.subtype.is_empty() {
            return Err(Error::invalid(format!(
                "annotation {}: error_type none must not carry subtype '{}'",
                self.item_id, self.subtype
            )));
        }
        Ok(())
    }
}

/// Lexicon of unresolved-reference cues for the Type B heuristic.
#[derive(Debug, Clone)]
pub struct DeicticLexicon {
    /// Words flagged when they open a sentence.
    pub sentence_initial: Vec<String>,
    /// Phrases flagged anywhere in the question.
    pub anywhere: Vec<String>,
}

impl Default for DeicticLexicon {
    fn default() -> Self {
        DeicticLexicon {
            sentence_initial: vec!["it".into(), "them".into()],
            anywhere: vec!["the above".into()],
        }
    }
}

fn question_has_deictic(question: &str, lexicon: &DeicticLexicon) -> Option<String> {
    let lower = question.to_lowercase();
    for phrase in &lexicon.anywhere {
        if lower.contains(phrase.as_str()) {
            return Some(phrase.clone());
        }
    }
    for sentence in lower.split(['.', '?', '!']) {
        let first = sentence.split_whitespace().next().unwrap_or("");
        if lexicon.sentence_initial.iter().any(|w| w == first) {
            return Some(first.to_string());
        }
    }
    None
}

fn whitespace_contaminated(value: &str) -> bool {
    value != value.trim() || value.contains("  ")
}

/// Run the deterministic detectors over a split:
///
/// - gold SQL fails to execute -> Type A candidate;
/// - gold SQL executes to an empty result -> low-confidence Type A candidate;
/// - a TEXT column referenced by any gold SQL stores whitespace-contaminated
///   values -> one C1 candidate per (db, table, column);
/// - a question leads with an unresolved deictic term -> low-confidence
///   Type B candidate.
pub fn detect_candidates(
    split: &BenchmarkSplit,
    db_root: &Path,
    lexicon: &DeicticLexicon,
) -> Result<(Vec<GoldErrorAnnotation>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    let mut dbs: BTreeMap<String, SqliteDb> = BTreeMap::new();
    let mut schemas: BTreeMap<String, crate::schema::DbSchema> = BTreeMap::new();
    // (db_id, table, column) pairs referenced by at least one gold SQL
    let mut referenced_text_cols: BTreeSet<(String, String, String)> = BTreeSet::new();

    let detector = |item_id: &str, error_type, subtype: &str, note: String, low_confidence| GoldErrorAnnotation {
        item_id: item_id.to_string(),
        error_type,
        subtype: subtype.to_string(),
        source: AnnotationSource::Detector,
        annotator_id: "detector".to_string(),
        adjudicated: false,
        note,
        low_confidence,
    };

    for item in &split.items {
        if !dbs.contains_key(&item.db_id) {
            let file = resolve_db_file(db_root, &item.db_id)?;
            let db = SqliteDb::open_read_only(&file)?;
            let schema = db.catalog_schema(&item.db_id)?;
            dbs.insert(item.db_id.clone(), db);
            schemas.insert(item.db_id.clone(), schema);
        }
        let db = &dbs[&item.db_id];
        let schema = &schemas[&item.db_id];

        let result = db.execute_bounded(
            &item.gold_sql,
            Duration::from_millis(DETECTOR_EXEC_TIMEOUT_MS),
            DETECTOR_ROW_CAP,
        );
        if !result.ok {
            out.push(detector(
                &item.item_id,
                ErrorType::A,
                "A:Non-executing gold",
                format!("gold SQL failed: {}", result.err.as_deref().unwrap_or("?")),
                false,
            ));
        } else if result.rows.is_empty() {
            out.push(detector(
                &item.item_id,
                ErrorType::A,
                "A:Empty gold result",
                "gold SQL executed to an empty result".to_string(),
                true,
            ));
        }

        match sqlast::referenced_pairs(&item.gold_sql, schema) {
            Ok(pairs) => {
                for (table, column) in pairs.pairs() {
                    let is_text = schema
                        .table(table)
                        .and_then(|t| t.column(column))
                        .map(|c| {
                            let ty = c.declared_type.to_uppercase();
                            ty.contains("TEXT") || ty.contains("CHAR") || ty.contains("CLOB")
                        })
                        .unwrap_or(false);
                    if is_text {
                        referenced_text_cols.insert((
                            item.db_id.clone(),
                            table.to_string(),
                            column.to_string(),
                        ));
                    }
                }
            }
            Err(e) => warnings.push(format!("{}: gold SQL reference scan failed: {e}", item.item_id)),
        }

        if let Some(term) = question_has_deictic(&item.question, lexicon) {
            out.push(detector(
                &item.item_id,
                ErrorType::B,
                "B:Unresolved reference",
                format!("question leans on unresolved '{term}'"),
                true,
            ));
        }
    }

    for (db_id, table, column) in &referenced_text_cols {
        let db = &dbs[db_id];
        match db.distinct_text_values(table, column, DIRTY_SCAN_CAP) {
            Ok(values) => {
                let dirty: Vec<&String> = values.iter().filter(|v| whitespace_contaminated(v)).collect();
                if !dirty.is_empty() {
                    out.push(detector(
                        &format!("column::{db_id}.{table}.{column}"),
                        ErrorType::C,
                        "C1:Dirty Data",
                        format!(
                            "{} contaminated value(s), e.g. {}",
                            dirty.len(),
                            serde_json::to_string(dirty[0]).unwrap_or_default()
                        ),
                        false,
                    ));
                }
            }
            Err(e) => warnings.push(format!("dirty scan {db_id}.{table}.{column} failed: {e}")),
        }
    }

    out.sort_by(|a, b| a.item_id.cmp(&b.item_id).then_with(|| a.subtype.cmp(&b.subtype)));
    Ok((out, warnings))
}

/// Cohen's Kappa over the {A, B, C, none} label set. Both lists must cover
/// the same item ids. With degenerate marginals (p_e = 1) the value is 1
/// for perfect agreement and an error otherwise.
pub fn cohens_kappa(a: &[GoldErrorAnnotation], b: &[GoldErrorAnnotation]) -> Result<f64> {
    let map = |anns: &[GoldErrorAnnotation]| -> BTreeMap<String, ErrorType> {
        anns.iter().map(|x| (x.item_id.clone(), x.error_type)).collect()
    };
    let ma = map(a);
    let mb = map(b);
    if ma.is_empty() {
        return Err(Error::invalid("kappa: no annotations"));
    }
    if ma.len() != mb.len() || !ma.keys().eq(mb.keys()) {
        let only_a: Vec<&String> = ma.keys().filter(|k| !mb.contains_key(*k)).collect();
        let only_b: Vec<&String> = mb.keys().filter(|k| !ma.contains_key(*k)).collect();
        return Err(Error::invalid(format!(
            "kappa: annotators cover different items (only in a: {only_a:?}, only in b: {only_b:?})"
        )));
    }

    let n = ma.len() as f64;
    let labels = [ErrorType::A, ErrorType::B, ErrorType::C, ErrorType::None];
    let mut agree = 0usize;
    let mut count_a: BTreeMap<ErrorType, usize> = BTreeMap::new();
    let mut count_b: BTreeMap<ErrorType, usize> = BTreeMap::new();
    for (item, la) in &ma {
        let lb = mb[item];
        if *la == lb {
            agree += 1;
        }
        *count_a.entry(*la).or_insert(0) += 1;
        *count_b.entry(lb).or_insert(0) += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = labels
        .iter()
        .map(|l| {
            let fa = *count_a.get(l).unwrap_or(&0) as f64 / n;
            let fb = *count_b.get(l).unwrap_or(&0) as f64 / n;
            fa * fb
        })
        .sum();

    if (1.0 - p_e).abs() < 1e-12 {
        if (p_o - 1.0).abs() < 1e-12 {
            return Ok(1.0);
        }
        return Err(Error::invalid("kappa: degenerate marginals"));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Combine independent annotator passes into the final per-item verdicts.
/// Full agreement adopts the shared label; each disagreement must be covered
/// by one of `resolutions`.
pub fn adjudicate(
    annotators: &[Vec<GoldErrorAnnotation>],
    resolutions: &[GoldErrorAnnotation],
) -> Result<Vec<GoldErrorAnnotation>> {
    if annotators.len() < 2 {
        return Err(Error::invalid("adjudicate: need at least two annotator files"));
    }
    let maps: Vec<BTreeMap<&str, &GoldErrorAnnotation>> = annotators
        .iter()
        .map(|anns| anns.iter().map(|a| (a.item_id.as_str(), a)).collect())
        .collect();
    let mut all_items: BTreeSet<&str> = BTreeSet::new();
    for m in &maps {
        all_items.extend(m.keys());
    }
    let resolution_by_id: BTreeMap<&str, &GoldErrorAnnotation> =
        resolutions.iter().map(|r| (r.item_id.as_str(), r)).collect();

    let mut out = Vec::new();
    let mut unresolved = Vec::new();
    for item in all_items {
        let verdicts: Vec<Option<&GoldErrorAnnotation>> = maps.iter().map(|m| m.get(item).copied()).collect();
        let all_present = verdicts.iter().all(|v| v.is_some());
        let agreed = all_present
            && verdicts
                .windows(2)
                .all(|w| w[0].unwrap().error_type == w[1].unwrap().error_type);
        if agreed {
            let first = verdicts[0].unwrap();
            out.push(GoldErrorAnnotation {
                annotator_id: "adjudicated".to_string(),
                adjudicated: true,
                source: AnnotationSource::Human,
                ..first.clone()
            });
        } else {
            match resolution_by_id.get(item) {
                Some(res) => out.push(GoldErrorAnnotation {
                    annotator_id: "adjudicated".to_string(),
                    adjudicated: true,
                    source: AnnotationSource::Human,
                    ..(*res).clone()
                }),
                None => unresolved.push(item.to_string()),
            }
        }
    }
    if !unresolved.is_empty() {
        return Err(Error::invalid(format!(
            "adjudicate: disagreements without a resolution: {}",
            unresolved.join(", ")
        )));
    }
    out.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(out)
}

/// Remove every item whose adjudicated verdict is a gold error. The derived
/// split carries provenance (source split, removed count, annotation hash).
pub fn clean_subset(
    split: &BenchmarkSplit,
    adjudicated: &[GoldErrorAnnotation],
    annotations_sha256: &str,
) -> BenchmarkSplit {
    let flagged: BTreeSet<&str> = adjudicated
        .iter()
        .filter(|a| a.adjudicated && a.error_type != ErrorType::None)
        .map(|a| a.item_id.as_str())
        .collect();
    let items: Vec<_> =
        split.items.iter().filter(|i| !flagged.contains(i.item_id.as_str())).cloned().collect();
    let removed = split.items.len() - items.len();
    let source = split.provenance.as_ref().map(|p| p.source_split.clone()).unwrap_or_else(|| split.name.clone());
    BenchmarkSplit {
        name: if split.name.ends_with("-clean") { split.name.clone() } else { format!("{}-clean", split.name) },
        db_root: split.db_root.clone(),
        items,
        provenance: Some(Provenance {
            source_split: source,
            removed,
            annotations_sha256: annotations_sha256.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCell {
    pub error_type: ErrorType,
    pub subtype: String,
    pub ex0: usize,
    pub ex1: usize,
    pub ex_unknown: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub cells: Vec<AuditCell>,
    pub flagged: Vec<String>,
    pub clean_item_ids: Vec<String>,
}

impl AuditReport {
    /// Bar-chart-ready CSV: one row per (error_type, subtype, ex outcome).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("error_type,subtype,ex,count\n");
        for cell in &self.cells {
            let quoted = |s: &str| {
                if s.contains(',') || s.contains('"') {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.to_string()
                }
            };
            out.push_str(&format!("{},{},0,{}\n", cell.error_type.as_str(), quoted(&cell.subtype), cell.ex0));
            out.push_str(&format!("{},{},1,{}\n", cell.error_type.as_str(), quoted(&cell.subtype), cell.ex1));
            if cell.ex_unknown > 0 {
                out.push_str(&format!(
                    "{},{},unknown,{}\n",
                    cell.error_type.as_str(),
                    quoted(&cell.subtype),
                    cell.ex_unknown
                ));
            }
        }
        out
    }
}

/// Cross-tabulate adjudicated error types against per-item EX outcomes.
pub fn audit_report(records: &[EvalRecord], adjudicated: &[GoldErrorAnnotation]) -> AuditReport {
    let ex_of: BTreeMap<&str, u8> = records.iter().map(|r| (r.item_id.as_str(), r.ex)).collect();
    let mut cells: BTreeMap<(ErrorType, String), AuditCell> = BTreeMap::new();
    let mut flagged = Vec::new();
    for ann in adjudicated {
        if ann.error_type == ErrorType::None {
            continue;
        }
        flagged.push(ann.item_id.clone());
        let cell = cells.entry((ann.error_type, ann.subtype.clone())).or_insert(AuditCell {
            error_type: ann.error_type,
            subtype: ann.subtype.clone(),
            ex0: 0,
            ex1: 0,
            ex_unknown: 0,
        });
        match ex_of.get(ann.item_id.as_str()) {
            Some(1) => cell.ex1 += 1,
            Some(_) => cell.ex0 += 1,
            None => cell.ex_unknown += 1,
        }
    }
    flagged.sort();
    flagged.dedup();
    let flagged_set: BTreeSet<&str> = flagged.iter().map(|s| s.as_str()).collect();
    let mut clean_item_ids: Vec<String> = records
        .iter()
        .map(|r| r.item_id.clone())
        .filter(|id| !flagged_set.contains(id.as_str()))
        .collect();
    clean_item_ids.sort();
    AuditReport { cells: cells.into_values().collect(), flagged, clean_item_ids }
}

/// Read a JSONL annotation file (one annotation per line).
pub fn read_annotations(path: &Path) -> Result<Vec<GoldErrorAnnotation>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ann: GoldErrorAnnotation = serde_json::from_str(line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        ann.validate()?;
        out.push(ann);
    }
    Ok(out)
}

/// Write annotations as JSONL.
pub fn write_annotations(annotations: &[GoldErrorAnnotation], path: &Path) -> Result<()> {
    let mut out = String::new();
    for ann in annotations {
        out.push_str(&serde_json::to_string(ann).map_err(|e| Error::invalid(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// SHA-256 of a file, for clean-split provenance.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Helper used by CLI wiring: resolve the db_root recorded in a split file.
pub fn split_db_root(split: &BenchmarkSplit) -> PathBuf {
    PathBuf::from(&split.db_root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_io::{Difficulty, TaskItem};
    use crate::eval::FailureClass;

    fn ann(item: &str, ty: ErrorType) -> GoldErrorAnnotation {
        GoldErrorAnnotation {
            item_id: item.into(),
            error_type: ty,
            subtype: if ty == ErrorType::None { String::new() } else { format!("{}:sub", ty.as_str()) },
            source: AnnotationSource::Human,
            annotator_id: "a1".into(),
            adjudicated: false,
            note: String::new(),
            low_confidence: false,
        }
    }

    fn record(item: &str, ex: u8) -> EvalRecord {
        EvalRecord {
            item_id: item.into(),
            ex,
            ves_component: ex as f64,
            pred_sql: String::new(),
            gold_sql: String::new(),
            failure_class: if ex == 1 { FailureClass::None } else { FailureClass::Mismatch },
        }
    }

    fn split(items: &[(&str, &str)]) -> BenchmarkSplit {
        BenchmarkSplit {
            name: "dev".into(),
            db_root: ".".into(),
            items: items
                .iter()
                .map(|(id, gold)| TaskItem {
                    item_id: id.to_string(),
                    question: "q".into(),
                    db_id: "d".into(),
                    gold_sql: gold.to_string(),
                    evidence: None,
                    difficulty: Difficulty::Unknown,
                })
                .collect(),
            provenance: None,
        }
    }

    #[test]
    fn kappa_identical_is_one() {
        let a = vec![ann("1", ErrorType::A), ann("2", ErrorType::None)];
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn kappa_hand_computed_confusion() {
        // counts {(A,A):40, (A,none):10, (none,A):10, (none,none):40}
        // p_o = 0.8, p_e = 0.5, kappa = 0.6
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut idx = 0;
        let mut push = |la: ErrorType, lb: ErrorType, n: usize, a: &mut Vec<_>, b: &mut Vec<_>| {
            for _ in 0..n {
                let id = format!("i{idx}");
                idx += 1;
                a.push(ann(&id, la));
                b.push(ann(&id, lb));
            }
        };
        push(ErrorType::A, ErrorType::A, 40, &mut a, &mut b);
        push(ErrorType::A, ErrorType::None, 10, &mut a, &mut b);
        push(ErrorType::None, ErrorType::A, 10, &mut a, &mut b);
        push(ErrorType::None, ErrorType::None, 40, &mut a, &mut b);
        let kappa = cohens_kappa(&a, &b).unwrap();
        assert!((kappa - 0.6).abs() < 1e-9, "kappa = {kappa}");
    }

    #[test]
    fn kappa_is_symmetric() {
        let a = vec![ann("1", ErrorType::A), ann("2", ErrorType::B), ann("3", ErrorType::None)];
        let b = vec![ann("1", ErrorType::None), ann("2", ErrorType::B), ann("3", ErrorType::C)];
        assert_eq!(cohens_kappa(&a, &b).unwrap(), cohens_kappa(&b, &a).unwrap());
    }

    #[test]
    fn kappa_degenerate_and_constant_cases() {
        // both annotators constant and identical: p_e = 1, p_o = 1 -> 1.0
        let a = vec![ann("1", ErrorType::A), ann("2", ErrorType::A)];
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        // constant but on different labels: p_e = 0, p_o = 0 -> 0.0
        let b = vec![ann("1", ErrorType::B), ann("2", ErrorType::B)];
        assert_eq!(cohens_kappa(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn kappa_mismatched_coverage_errors() {
        let a = vec![ann("1", ErrorType::A)];
        let b = vec![ann("2", ErrorType::A)];
        assert!(cohens_kappa(&a, &b).is_err());
    }

    #[test]
    fn adjudicate_agreement_passes_through() {
        let a = vec![ann("1", ErrorType::A), ann("2", ErrorType::None)];
        let b = vec![ann("1", ErrorType::A), ann("2", ErrorType::None)];
        let out = adjudicate(&[a, b], &[]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|x| x.adjudicated));
        assert_eq!(out[0].error_type, ErrorType::A);
    }

    #[test]
    fn adjudicate_disagreement_takes_resolution() {
        let a = vec![ann("1", ErrorType::A)];
        let b = vec![ann("1", ErrorType::None)];
        let out = adjudicate(&[a, b], &[ann("1", ErrorType::B)]).unwrap();
        assert_eq!(out[0].error_type, ErrorType::B);
        assert!(out[0].adjudicated);
    }

    #[test]
    fn adjudicate_missing_resolution_errors_with_item() {
        let a = vec![ann("1", ErrorType::A)];
        let b = vec![ann("1", ErrorType::None)];
        match adjudicate(&[a, b], &[]) {
            Err(Error::Invalid(msg)) => assert!(msg.contains('1')),
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn clean_subset_filters_and_records_provenance() {
        let s = split(&[("1", "g"), ("2", "g"), ("3", "g"), ("4", "g")]);
        let mut a1 = ann("2", ErrorType::A);
        a1.adjudicated = true;
        let mut a2 = ann("4", ErrorType::C);
        a2.adjudicated = true;
        let clean = clean_subset(&s, &[a1.clone(), a2.clone()], "hash");
        assert_eq!(clean.items.len(), 2);
        assert_eq!(clean.name, "dev-clean");
        let prov = clean.provenance.as_ref().unwrap();
        assert_eq!(prov.removed, 2);
        assert_eq!(prov.source_split, "dev");
        // idempotent
        let again = clean_subset(&clean, &[a1, a2], "hash");
        assert_eq!(again.items, clean.items);
        assert_eq!(again.name, "dev-clean");
    }

    #[test]
    fn clean_subset_ignores_unadjudicated_annotations() {
        let s = split(&[("1", "g"), ("2", "g")]);
        let pending = ann("1", ErrorType::A); // adjudicated = false
        let clean = clean_subset(&s, &[pending], "h");
        assert_eq!(clean.items.len(), 2);
    }

    #[test]
    fn audit_report_cross_tabulates_by_ex() {
        let records = vec![record("1", 0), record("2", 0), record("3", 1), record("4", 1)];
        let mut anns = vec![ann("1", ErrorType::A), ann("2", ErrorType::A), ann("3", ErrorType::C)];
        for a in &mut anns {
            a.adjudicated = true;
        }
        let report = audit_report(&records, &anns);
        let a_cell = report.cells.iter().find(|c| c.error_type == ErrorType::A).unwrap();
        assert_eq!(a_cell.ex0, 2);
        assert_eq!(a_cell.ex1, 0);
        let c_cell = report.cells.iter().find(|c| c.error_type == ErrorType::C).unwrap();
        assert_eq!(c_cell.ex1, 1);
        assert_eq!(report.flagged, vec!["1", "2", "3"]);
        assert_eq!(report.clean_item_ids, vec!["4"]);
        let csv = report.to_csv();
        assert!(csv.starts_with("error_type,subtype,ex,count\n"));
        assert!(csv.contains("A,A:sub,0,2"));
    }

    #[test]
    fn audit_report_empty_inputs() {
        let report = audit_report(&[], &[]);
        assert!(report.cells.is_empty());
        assert!(report.flagged.is_empty());
        assert!(report.clean_item_ids.is_empty());
    }

    #[test]
    fn detectors_flag_planted_errors() {
        let dir = tempfile::tempdir().unwrap();
        let db_dir = dir.path().join("d");
        fs::create_dir_all(&db_dir).unwrap();
        let conn = rusqlite::Connection::open(db_dir.join("d.sqlite")).unwrap();
        conn.execute_batch(
            "CREATE TABLE city(name TEXT, country TEXT);
             INSERT INTO city VALUES ('Fresno', 'United States '), ('Oslo', 'Norway');",
        )
        .unwrap();
        drop(conn);

        let s = split(&[
            ("bad-gold", "SELECT nmae FROM city"),
            ("empty-gold", "SELECT name FROM city WHERE country = 'United States'"),
            ("fine", "SELECT name FROM city WHERE country = 'Norway'"),
        ]);
        let (candidates, _warnings) =
            detect_candidates(&s, dir.path(), &DeicticLexicon::default()).unwrap();

        assert!(candidates
            .iter()
            .any(|c| c.item_id == "bad-gold" && c.subtype == "A:Non-executing gold"));
        assert!(candidates
            .iter()
            .any(|c| c.item_id == "empty-gold" && c.subtype == "A:Empty gold result" && c.low_confidence));
        // the dirty column is flagged once, against a column-scoped id
        let dirty: Vec<_> = candidates.iter().filter(|c| c.subtype == "C1:Dirty Data").collect();
        assert_eq!(dirty.len(), 1);
        assert_eq!(dirty[0].item_id, "column::d.city.country");
    }

    #[test]
    fn detectors_on_clean_split_stay_silent() {
        let dir = tempfile::tempdir().unwrap();
        let db_dir = dir.path().join("d");
        fs::create_dir_all(&db_dir).unwrap();
        let conn = rusqlite::Connection::open(db_dir.join("d.sqlite")).unwrap();
        conn.execute_batch(
            "CREATE TABLE city(name TEXT);
             INSERT INTO city VALUES ('Oslo');",
        )
        .unwrap();
        drop(conn);
        let s = split(&[("ok", "SELECT name FROM city")]);
        let (candidates, _) = detect_candidates(&s, dir.path(), &DeicticLexicon::default()).unwrap();
        assert!(candidates.is_empty(), "{candidates:?}");
    }

    #[test]
    fn deictic_heuristic_flags_sentence_initial_terms() {
        let lex = DeicticLexicon::default();
        assert!(question_has_deictic("It has the best score. Which school?", &lex).is_some());
        assert!(question_has_deictic("List the above rows", &lex).is_some());
        assert!(question_has_deictic("Which city has it all?", &lex).is_none());
    }

    #[test]
    fn annotations_round_trip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let anns = vec![ann("1", ErrorType::A), ann("2", ErrorType::None)];
        write_annotations(&anns, &path).unwrap();
        let back = read_annotations(&path).unwrap();
        assert_eq!(anns, back);
    }

    #[test]
    fn invalid_annotation_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        fs::write(
            &path,
            r#"{"item_id":"1","error_type":"none","subtype":"C1","source":"human","annotator_id":"x"}"#,
        )
        .unwrap();
        assert!(read_annotations(&path).is_err());
    }
}
