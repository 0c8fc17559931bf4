//! Command implementations. Each wraps the corresponding engine module and
//! keeps the shell thin: path checks, wiring, printing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Deserialize;

use gbv_core::audit::{
    audit_report, clean_subset, cohens_kappa, detect_candidates, file_sha256, read_annotations,
    write_annotations, DeicticLexicon,
};
use gbv_core::bench_io::{load_split, write_split, SchemaStore};
use gbv_core::checker::CheckerConfig;
use gbv_core::db::SqliteDb;
use gbv_core::eval::{aggregate, eval_item, EvalConfig, ExSemantics, Report};
use gbv_core::llm::{CacheBackend, LiveBackend, LiveConfig, LlmGateway, ScriptedBackend};
use gbv_core::pipeline::{read_predictions, run_split, RunConfig, RunSummary};

use crate::{AuditArgs, BackendChoice, CleanArgs, CliError, EvalArgs, KappaArgs, ReportArgs, RunArgs, SemanticsChoice};

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// Load tasks from either a raw benchmark array or the engine's canonical
/// split JSON (e.g. the output of `gbv clean`). The --db-root flag wins
/// over whatever path a canonical split recorded.
fn load_tasks_flexible(
    tasks: &Path,
    tables: Option<&Path>,
    db_root: &Path,
) -> Result<gbv_core::bench_io::BenchmarkSplit, CliError> {
    let raw = fs::read_to_string(tasks).with_context(|| format!("reading {}", tasks.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", tasks.display()))?;
    if value.is_object() && value.get("items").is_some() {
        let mut split = gbv_core::bench_io::read_split(tasks)?;
        split.db_root = db_root.to_string_lossy().into_owned();
        for item in &split.items {
            gbv_core::bench_io::resolve_db_file(db_root, &item.db_id)?;
        }
        return Ok(split);
    }
    let (split, warnings) = load_split(tasks, tables, db_root)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(split)
}

/// Optional-knob defaults loadable from a TOML file; explicit flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFileConfig {
    backend: Option<String>,
    cache_file: Option<PathBuf>,
    strict_replay: Option<bool>,
    script_file: Option<PathBuf>,
    no_planner: Option<bool>,
    no_cot: Option<bool>,
    no_validator: Option<bool>,
    no_checker: Option<bool>,
    parallel: Option<usize>,
    max_try_time: Option<usize>,
    sample_k: Option<usize>,
}

fn apply_file_config(args: &mut RunArgs) -> Result<(), CliError> {
    let Some(path) = &args.config else { return Ok(()) };
    require_file(path, "config file")?;
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunFileConfig =
        toml::from_str(&raw).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
    if let Some(backend) = cfg.backend {
        args.backend = match backend.as_str() {
            "live" => BackendChoice::Live,
            "cache" => BackendChoice::Cache,
            "scripted" => BackendChoice::Scripted,
            other => return Err(CliError::Usage(format!("bad config backend '{other}'"))),
        };
    }
    args.cache_file = args.cache_file.take().or(cfg.cache_file);
    args.script_file = args.script_file.take().or(cfg.script_file);
    args.strict_replay |= cfg.strict_replay.unwrap_or(false);
    args.no_planner |= cfg.no_planner.unwrap_or(false);
    args.no_cot |= cfg.no_cot.unwrap_or(false);
    args.no_validator |= cfg.no_validator.unwrap_or(false);
    args.no_checker |= cfg.no_checker.unwrap_or(false);
    if args.parallel == 1 {
        args.parallel = cfg.parallel.unwrap_or(1);
    }
    if args.max_try_time == 3 {
        args.max_try_time = cfg.max_try_time.unwrap_or(3);
    }
    if args.sample_k == 3 {
        args.sample_k = cfg.sample_k.unwrap_or(3);
    }
    Ok(())
}

fn build_backend(args: &RunArgs) -> Result<(Box<dyn LlmGateway + Sync>, Option<String>), CliError> {
    match args.backend {
        BackendChoice::Scripted => {
            let path = args
                .script_file
                .as_ref()
                .ok_or_else(|| CliError::Usage("--backend scripted requires --script-file".into()))?;
            require_file(path, "script file")?;
            let backend = ScriptedBackend::from_jsonl(path)?;
            Ok((Box::new(backend), None))
        }
        BackendChoice::Cache => {
            let path = args
                .cache_file
                .as_ref()
                .ok_or_else(|| CliError::Usage("--backend cache requires --cache-file".into()))?;
            let model = std::env::var("GBV_MODEL").unwrap_or_else(|_| "offline".to_string());
            let inner: Option<Box<dyn LlmGateway>> = if args.strict_replay {
                None
            } else {
                let live = LiveBackend::new(LiveConfig::from_env()?)?;
                Some(Box::new(live))
            };
            let backend = CacheBackend::open(path, &model, inner)?;
            Ok((Box::new(backend), Some(model)))
        }
        BackendChoice::Live => {
            let config = LiveConfig::from_env()?;
            let model = config.model.clone();
            Ok((Box::new(LiveBackend::new(config)?), Some(model)))
        }
    }
}

pub fn cmd_run(mut args: RunArgs) -> Result<RunSummary, CliError> {
    apply_file_config(&mut args)?;
    require_file(&args.tasks, "--tasks")?;
    require_file(&args.tables, "--tables")?;
    require_dir(&args.db_root, "--db-root")?;

    let split = load_tasks_flexible(&args.tasks, Some(&args.tables), &args.db_root)?;
    let (store, schema_warnings) = SchemaStore::load_for_split(&args.tables, &split, args.sample_k)?;
    for w in &schema_warnings {
        eprintln!("warning: {w}");
    }

    let config = RunConfig {
        planner: !args.no_planner,
        human_cot: !args.no_cot,
        validator: !args.no_validator,
        checker: !args.no_checker,
        checker_config: CheckerConfig { max_try_time: args.max_try_time, ..CheckerConfig::default() },
        parallelism: args.parallel,
        ..RunConfig::default()
    };
    let (backend, model) = build_backend(&args)?;

    let run_dir = match &args.out {
        Some(dir) => dir.clone(),
        None => {
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0);
            PathBuf::from("runs").join(stamp.to_string())
        }
    };

    let summary = run_split(&split, &store, &config, backend.as_ref(), &run_dir, model)?;
    println!(
        "run complete: {} items, {} item failure(s), artifacts in {}",
        summary.items,
        summary.failures,
        summary.run_dir.display()
    );
    Ok(summary)
}

pub fn cmd_eval(args: EvalArgs) -> Result<Report, CliError> {
    require_file(&args.tasks, "--tasks")?;
    require_dir(&args.db_root, "--db-root")?;
    let predictions_path = match (&args.run_dir, &args.predictions) {
        (Some(dir), None) => dir.join("predictions.txt"),
        (None, Some(path)) => path.clone(),
        _ => return Err(CliError::Usage("provide exactly one of --run-dir or --predictions".into())),
    };
    require_file(&predictions_path, "predictions file")?;

    let split = load_tasks_flexible(&args.tasks, None, &args.db_root)?;
    let predictions = read_predictions(&predictions_path)?;

    let task_ids: std::collections::BTreeSet<&str> =
        split.items.iter().map(|i| i.item_id.as_str()).collect();
    let pred_ids: std::collections::BTreeSet<&str> =
        predictions.iter().map(|(id, _)| id.as_str()).collect();
    let missing: Vec<&&str> = task_ids.difference(&pred_ids).collect();
    let unknown: Vec<&&str> = pred_ids.difference(&task_ids).collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(anyhow!(
            "predictions do not match tasks (missing predictions: {missing:?}; unknown ids: {unknown:?})"
        )
        .into());
    }

    let config = EvalConfig {
        timing_runs: args.timing_runs,
        semantics: match args.semantics {
            SemanticsChoice::Multiset => ExSemantics::Multiset,
            SemanticsChoice::Set => ExSemantics::Set,
        },
        ..EvalConfig::default()
    };

    let mut dbs: BTreeMap<String, SqliteDb> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    let pred_of: BTreeMap<&str, &str> =
        predictions.iter().map(|(id, sql)| (id.as_str(), sql.as_str())).collect();
    for item in &split.items {
        if !dbs.contains_key(&item.db_id) {
            let file = gbv_core::bench_io::resolve_db_file(Path::new(&split.db_root), &item.db_id)?;
            dbs.insert(item.db_id.clone(), SqliteDb::open_read_only(&file)?);
        }
        let db = &dbs[&item.db_id];
        records.push(eval_item(item, pred_of[item.item_id.as_str()], db, &config, &mut warnings));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let report = aggregate(records, &split.items);
    print!("{}", report.human_table());

    let out = args.out.clone().unwrap_or_else(|| match &args.run_dir {
        Some(dir) => dir.join("report.json"),
        None => PathBuf::from("report.json"),
    });
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    fs::write(&out, json + "\n").with_context(|| format!("writing {}", out.display()))?;
    println!("report written to {}", out.display());
    Ok(report)
}

pub fn cmd_audit(args: AuditArgs) -> Result<(), CliError> {
    require_file(&args.tasks, "--tasks")?;
    require_dir(&args.db_root, "--db-root")?;
    let split = load_tasks_flexible(&args.tasks, None, &args.db_root)?;
    let (candidates, warnings) = detect_candidates(&split, &args.db_root, &DeicticLexicon::default())?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_annotations(&candidates, &args.out)?;

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in &candidates {
        *counts.entry(c.subtype.clone()).or_insert(0) += 1;
    }
    println!("{} candidate(s) written to {}", candidates.len(), args.out.display());
    for (subtype, n) in &counts {
        println!("  {subtype}: {n}");
    }
    Ok(())
}

pub fn cmd_kappa(args: KappaArgs) -> Result<f64, CliError> {
    if args.annotations.len() != 2 {
        return Err(CliError::Usage(format!(
            "--annotations must be given exactly twice (got {})",
            args.annotations.len()
        )));
    }
    for path in &args.annotations {
        require_file(path, "annotation file")?;
    }
    let a = read_annotations(&args.annotations[0])?;
    let b = read_annotations(&args.annotations[1])?;
    let kappa = cohens_kappa(&a, &b)?;
    println!("kappa = {kappa:.4}");
    Ok(kappa)
}

pub fn cmd_clean(args: CleanArgs) -> Result<(), CliError> {
    require_file(&args.tasks, "--tasks")?;
    require_file(&args.tables, "--tables")?;
    require_dir(&args.db_root, "--db-root")?;
    require_file(&args.adjudicated, "--adjudicated")?;

    let split = load_tasks_flexible(&args.tasks, Some(&args.tables), &args.db_root)?;
    let adjudicated = read_annotations(&args.adjudicated)?;
    let hash = file_sha256(&args.adjudicated)?;
    let clean = clean_subset(&split, &adjudicated, &hash);
    let removed = split.items.len() - clean.items.len();
    write_split(&clean, &args.out)?;
    println!(
        "clean split written to {}: kept {} of {} item(s), removed {}",
        args.out.display(),
        clean.items.len(),
        split.items.len(),
        removed
    );
    Ok(())
}

pub fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    require_file(&args.report, "--report")?;
    require_file(&args.adjudicated, "--adjudicated")?;
    let raw = fs::read_to_string(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report: Report = serde_json::from_str(&raw).context("parsing eval report")?;
    let adjudicated = read_annotations(&args.adjudicated)?;
    let audit = audit_report(&report.records, &adjudicated);
    let json = serde_json::to_string_pretty(&audit).context("serializing audit report")?;
    fs::write(&args.out, json + "\n").with_context(|| format!("writing {}", args.out.display()))?;
    println!("audit report written to {}", args.out.display());
    if let Some(csv_path) = &args.csv {
        fs::write(csv_path, audit.to_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
        println!("csv written to {}", csv_path.display());
    }
    println!("{} flagged item(s), {} clean item(s)", audit.flagged.len(), audit.clean_item_ids.len());
    Ok(())
}
