//! Versioned prompt instruction files, embedded at build time from the
//! repository's `prompts/` directory. The run manifest records a hash per
//! file so a transcript can be tied to the exact wording that produced it.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

pub const PLANNER_PRUNE: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/planner_prune.txt"));
pub const PLANNER_DECOMPOSE: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/planner_decompose.txt"));
pub const GEN_SUBSQL: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/gen_subsql.txt"));
pub const GEN_ZEROSHOT: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/gen_zeroshot.txt"));
pub const GEN_BACKLINK: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/gen_backlink.txt"));
pub const GEN_MERGE: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/gen_merge.txt"));
pub const VALIDATOR_TRANSLATE: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/validator_translate.txt"));
pub const VALIDATOR_VERDICT: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/validator_verdict.txt"));
pub const VALIDATOR_SELECT: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/validator_select.txt"));
pub const CHECKER_TRIM: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/checker_trim.txt"));
pub const CHECKER_REFINE: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts/checker_refine.txt"));

/// All prompt files with their contents, keyed by file name.
pub fn all() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("planner_prune.txt", PLANNER_PRUNE),
        ("planner_decompose.txt", PLANNER_DECOMPOSE),
        ("gen_subsql.txt", GEN_SUBSQL),
        ("gen_zeroshot.txt", GEN_ZEROSHOT),
        ("gen_backlink.txt", GEN_BACKLINK),
        ("gen_merge.txt", GEN_MERGE),
        ("validator_translate.txt", VALIDATOR_TRANSLATE),
        ("validator_verdict.txt", VALIDATOR_VERDICT),
        ("validator_select.txt", VALIDATOR_SELECT),
        ("checker_trim.txt", CHECKER_TRIM),
        ("checker_refine.txt", CHECKER_REFINE),
    ])
}

/// SHA-256 of every prompt file, for run manifests.
pub fn hashes() -> BTreeMap<String, String> {
    all()
        .into_iter()
        .map(|(name, content)| {
            let mut hasher = Sha256::new();
            hasher.update(content.as_bytes());
            (name.to_string(), format!("{:x}", hasher.finalize()))
        })
        .collect()
}
