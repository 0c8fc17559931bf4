//! Randomized property tests for the engine's cross-cutting invariants.

use proptest::prelude::*;

use gbv_core::checker::value_similarity;
use gbv_core::db::CellValue;
use gbv_core::eval::{rows_equivalent, ExSemantics};
use gbv_core::llm::{AgentTag, CacheBackend, LlmRequest};

fn cell_strategy() -> impl Strategy<Value = CellValue> {
    prop_oneof![
        Just(CellValue::Null),
        (-50i64..50).prop_map(CellValue::Int),
        // keep reals far apart relative to the 1e-6 tolerance so equality
        // stays transitive under sampling
        (-50i64..50).prop_map(|i| CellValue::Real(i as f64 * 0.5)),
        "[a-c]{0,3}".prop_map(CellValue::Text),
    ]
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<CellValue>>> {
    (1usize..4).prop_flat_map(|width| {
        proptest::collection::vec(proptest::collection::vec(cell_strategy(), width), 0..6)
    })
}

fn shuffled(rows: &[Vec<CellValue>], seed: usize) -> Vec<Vec<CellValue>> {
    let mut out = rows.to_vec();
    let n = out.len();
    if n > 1 {
        out.rotate_left(seed % n);
        out.swap(0, seed % n);
    }
    out
}

proptest! {
    /// results_match (no ORDER BY) is an equivalence relation on ok-results.
    #[test]
    fn multiset_equivalence_relation(a in rows_strategy(), b in rows_strategy(), c in rows_strategy(), seed in 0usize..97) {
        let eq = |x: &Vec<Vec<CellValue>>, y: &Vec<Vec<CellValue>>| {
            rows_equivalent(x, y, false, ExSemantics::Multiset)
        };
        // reflexive, including against a permutation of itself
        prop_assert!(eq(&a, &a));
        prop_assert!(eq(&a, &shuffled(&a, seed)));
        // symmetric
        prop_assert_eq!(eq(&a, &b), eq(&b, &a));
        // transitive
        if eq(&a, &b) && eq(&b, &c) {
            prop_assert!(eq(&a, &c));
        }
    }

    /// order-sensitive equality implies multiset equality, never the reverse
    /// guaranteed.
    #[test]
    fn ordered_implies_multiset(a in rows_strategy(), b in rows_strategy()) {
        if rows_equivalent(&a, &b, true, ExSemantics::Multiset) {
            prop_assert!(rows_equivalent(&a, &b, false, ExSemantics::Multiset));
        }
    }

    /// similarity is symmetric-free by design (literal vs stored), bounded,
    /// and exact-after-normalization iff 1.0.
    #[test]
    fn similarity_bounds(lit in "[ A-Za-z]{0,12}", stored in "[ A-Za-z]{0,12}") {
        let s = value_similarity(&lit, &stored);
        prop_assert!((0.0..=1.0).contains(&s));
        let exact = lit.trim().to_lowercase() == stored.trim().to_lowercase();
        prop_assert_eq!(s == 1.0, exact);
    }

    /// distinct (prompts, tag) pairs map to distinct cache keys.
    #[test]
    fn cache_keys_collision_free(
        prompts in proptest::collection::btree_set("[a-z]{1,8}", 1..20),
        tag_bits in proptest::collection::vec(0usize..4, 1..20),
    ) {
        let tags = [AgentTag::PlannerPrune, AgentTag::GenSubsql, AgentTag::ValidatorVerdict, AgentTag::CheckerRefine];
        let mut keys = std::collections::HashSet::new();
        let mut inputs = std::collections::HashSet::new();
        for (prompt, bits) in prompts.iter().zip(tag_bits.iter().cycle()) {
            let tag = tags[*bits];
            let request = LlmRequest::new(tag, "system", prompt.clone());
            if inputs.insert((tag, prompt.clone())) {
                prop_assert!(
                    keys.insert(CacheBackend::key_hash("model", &request)),
                    "key collision for ({tag}, {prompt})"
                );
            }
        }
    }
}

proptest! {
    /// VES is the mean of per-item components scaled by 100: bounded by the
    /// largest component and zero when nothing matched.
    #[test]
    fn ves_aggregate_bounds(components in proptest::collection::vec((0u8..2, 0.2f64..2.0), 1..12)) {
        use gbv_core::bench_io::{Difficulty, TaskItem};
        use gbv_core::eval::{aggregate, EvalRecord, FailureClass};
        let items: Vec<TaskItem> = components
            .iter()
            .enumerate()
            .map(|(i, _)| TaskItem {
                item_id: format!("i{i}"),
                question: String::new(),
                db_id: "d".into(),
                gold_sql: "g".into(),
                evidence: None,
                difficulty: Difficulty::Unknown,
            })
            .collect();
        let records: Vec<EvalRecord> = components
            .iter()
            .enumerate()
            .map(|(i, (ex, r))| EvalRecord {
                item_id: format!("i{i}"),
                ex: *ex,
                ves_component: if *ex == 1 { *r } else { 0.0 },
                pred_sql: String::new(),
                gold_sql: String::new(),
                failure_class: if *ex == 1 { FailureClass::None } else { FailureClass::Mismatch },
            })
            .collect();
        let max_component = records.iter().map(|r| r.ves_component).fold(0.0f64, f64::max);
        let all_miss = records.iter().all(|r| r.ex == 0);
        let report = aggregate(records, &items);
        prop_assert!(report.ves <= max_component * 100.0 + 1e-9);
        if all_miss {
            prop_assert_eq!(report.ves, 0.0);
        }
    }
}

/// Set semantics collapses duplicates exactly like building a set would.
#[test]
fn set_semantics_matches_dedup_oracle() {
    let rows = |xs: &[i64]| -> Vec<Vec<CellValue>> { xs.iter().map(|x| vec![CellValue::Int(*x)]).collect() };
    assert!(rows_equivalent(&rows(&[1, 1, 2]), &rows(&[2, 1]), false, ExSemantics::Set));
    assert!(!rows_equivalent(&rows(&[1, 1, 2]), &rows(&[2, 1]), false, ExSemantics::Multiset));
    assert!(!rows_equivalent(&rows(&[1, 3]), &rows(&[1, 2]), false, ExSemantics::Set));
}
