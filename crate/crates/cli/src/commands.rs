//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::Datelike;

use rsl_core::data::{
    format_timestamp, generate_synthetic_climate, parse_timestamp, step_duration, steps_between, DatasetStore,
    TimeRange, Timestamp, VariableSet,
};
use rsl_core::eval::{evaluate_run, load_run_inputs, ScoreFile};
use rsl_core::grid::GridSpec;
use rsl_core::models::{Arch, SpecMode};
use rsl_core::report::write_report;
use rsl_core::train::{
    completed_record, normalization_for, run_dir, run_sweep, RunStatus, SweepManifest, TrainConfig,
};

use crate::config::ExperimentConfigFile;
use crate::{require_dir, CliError, GenDataArgs, ReportArgs, RolloutArgs, SweepArgs, TrainArgs};

fn parse_years(s: &str) -> Result<TimeRange, CliError> {
    let bad = || CliError::Config(format!("bad year range `{s}` (expected FIRST-LAST or YEAR)"));
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let a: i32 = a.trim().parse().map_err(|_| bad())?;
    let b: i32 = b.trim().parse().map_err(|_| bad())?;
    Ok(TimeRange::years(a, b)?)
}

fn dir_is_nonempty(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let file = ExperimentConfigFile::load(a.common.config.as_deref())?;
    let mut cfg = file.dataset.synthetic.clone().unwrap_or_default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(y) = a.years {
        cfg.years = y;
    }
    if let Some(y) = a.start_year {
        cfg.start_year = y;
    }
    if let Some(g) = &a.grid {
        cfg.grid = GridSpec::parse(g)?;
    }
    if let Some(t) = a.trend {
        cfg.trend_per_year = t;
    }
    match a.vars.as_deref() {
        None => {
            if let Some(k) = a.n_prognostic {
                cfg.n_prognostic = k;
            }
        }
        Some("vars8") => cfg.n_prognostic = 8,
        Some("vars33") => cfg.n_prognostic = 33,
        Some("custom") => {
            cfg.n_prognostic = a
                .n_prognostic
                .ok_or_else(|| CliError::Config("--vars custom needs --n-prognostic".into()))?
        }
        Some(v) => return Err(CliError::Config(format!("unknown variable set `{v}` (vars8, vars33, custom)"))),
    }
    if dir_is_nonempty(&a.out) {
        if !a.force {
            return Err(CliError::Config(format!(
                "{} exists and is not empty; pass --force to replace it",
                a.out.display()
            )));
        }
        fs::remove_dir_all(&a.out).map_err(|e| CliError::Run(format!("cannot clear {}: {e}", a.out.display())))?;
    }
    let store = generate_synthetic_climate(&cfg, &a.out)?;
    let m = store.manifest();
    let r = store.time_range();
    println!("dataset {}", a.out.display());
    println!("  format     {}", m.format);
    println!("  grid       {}x{}", store.grid().n_lon(), store.grid().n_lat());
    println!("  time       {} .. {} ({} steps)", format_timestamp(&r.start), format_timestamp(&r.end), r.n_steps());
    println!("  prognostic {} ({})", m.prognostic.len(), m.prognostic.join(","));
    println!("  forcings   {}", m.forcings.join(","));
    println!("  constants  {}", m.constants.join(","));
    Ok(())
}

fn open_store(p: &Path, what: &str) -> Result<DatasetStore, CliError> {
    require_dir(p, what)?;
    Ok(DatasetStore::open(p)?)
}

fn parse_flag<T: std::str::FromStr>(v: &Option<String>, what: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    v.as_deref()
        .map(|s| s.parse::<T>().map_err(|e| CliError::Config(format!("bad {what} `{s}`: {e}"))))
        .transpose()
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut file = ExperimentConfigFile::load(a.common.config.as_deref())?;
    let data = a
        .data
        .clone()
        .or(file.dataset.path.clone())
        .ok_or_else(|| CliError::Config("no dataset: pass --data or set dataset.path".into()))?;
    let store = open_store(&data, "dataset")?;

    // flags > file > replication defaults; the merged file is persisted
    let t = &mut file.training;
    t.mode = match a.mode.as_deref() {
        None => t.mode,
        Some("replication") => Some(SpecMode::Replication),
        Some("free") => Some(SpecMode::Free),
        Some(m) => return Err(CliError::Config(format!("bad mode `{m}` (replication, free)"))),
    };
    t.m_steps = a.m_steps.or(t.m_steps);
    t.seed = a.seed.or(t.seed);
    t.epochs = a.epochs.or(t.epochs);
    t.batch_size = a.batch_size.or(t.batch_size);
    t.lr_init = a.lr.or(t.lr_init);
    t.max_train_samples = a.max_train_samples.or(t.max_train_samples);
    t.max_val_samples = a.max_val_samples.or(t.max_val_samples);
    if let Some(s) = &a.train_years {
        t.train_range = Some(parse_years(s)?);
    }
    if let Some(s) = &a.val_years {
        t.val_range = Some(parse_years(s)?);
    }
    let mdl = &mut file.model;
    mdl.arch = parse_flag::<Arch>(&a.arch, "arch")?.or(mdl.arch);
    mdl.n_layers = a.layers.or(mdl.n_layers);
    mdl.hidden_dim = a.hidden.or(mdl.hidden_dim);

    let mut vars: VariableSet = match file.variable_set()? {
        Some(v) => v,
        None => store.variables()?,
    };
    if let Some(sub) = &file.evaluation.evaluation_subset {
        vars = vars.with_evaluation_subset(sub.clone())?;
    }
    let settings = file.settings();
    let cfg = TrainConfig::build(
        file.model.arch.unwrap_or(Arch::Sfno),
        vars,
        file.training.m_steps.unwrap_or(1),
        file.model.n_layers.unwrap_or(rsl_core::models::REPLICATION_LAYERS[0]),
        file.model.hidden_dim.unwrap_or(rsl_core::models::REPLICATION_HIDDEN[0]),
        file.seed(),
        &settings,
        &file.model.overrides,
    );
    cfg.validate(store.grid())?;
    let run_id = cfg.run_id(store.manifest())?;
    let dir = run_dir(&a.common.run_root(), &run_id);
    if !a.force {
        if let Some(rec) = completed_record(&dir) {
            println!("run {run_id} already complete ({:?}); pass --force to retrain", rec.status);
            println!("{}", dir.display());
            return status_result(rec.status, &run_id);
        }
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::Run(e.to_string()))?;
    file.dataset.path = Some(data);
    fs::write(
        dir.join("experiment.json"),
        serde_json::to_string_pretty(&file).map_err(|e| CliError::Run(e.to_string()))?,
    )
    .map_err(|e| CliError::Run(e.to_string()))?;
    let stats = normalization_for(&store, &cfg.train_range)?;
    let out = rsl_core::train::train::<f32>(&cfg, &store, &stats, Some(&dir))?;
    let r = &out.record;
    println!("run {run_id}");
    println!("  status        {:?}", r.status);
    println!("  epochs        {}", r.stopping_epoch);
    if let Some(v) = r.best_val_loss {
        println!("  best val loss {v:.6e} (epoch {})", r.best_epoch.unwrap_or(0));
    }
    println!("  persistence   {:.6e}", r.persistence_val_loss);
    println!("{}", dir.display());
    status_result(r.status, &run_id)
}

fn status_result(s: RunStatus, id: &str) -> Result<(), CliError> {
    match s {
        RunStatus::Failed => Err(CliError::Run(format!("run {id} FAILED: non-finite training loss"))),
        _ => Ok(()),
    }
}

/// Rollout start and length from flags, then the file, then defaults: the
/// step after the validation range and ten calendar years.
fn rollout_window(
    cfg: &TrainConfig,
    file: &ExperimentConfigFile,
    start: &Option<String>,
    steps: Option<usize>,
    years: Option<u32>,
) -> Result<(Timestamp, usize), CliError> {
    let start = match start.as_ref().or(file.rollout.start.as_ref()) {
        Some(s) => parse_timestamp(s)?,
        None => cfg.val_range.end + step_duration(),
    };
    let n = if let Some(n) = steps {
        n
    } else if let Some(y) = years {
        years_to_steps(&start, y)?
    } else if let Some(n) = file.rollout.steps {
        n
    } else {
        years_to_steps(&start, file.rollout.years.unwrap_or(10))?
    };
    if n == 0 {
        return Err(CliError::Config("rollout needs at least one step".into()));
    }
    Ok((start, n))
}

fn years_to_steps(start: &Timestamp, years: u32) -> Result<usize, CliError> {
    let end = start
        .with_year(start.year() + years as i32)
        .ok_or_else(|| CliError::Config("rollout start has no calendar match after the given years".into()))?;
    Ok(steps_between(start, &end) as usize)
}

fn print_score(s: &ScoreFile) {
    println!("run {}", s.run_id);
    println!("  period      {} + {} steps", format_timestamp(&s.start), s.n_steps);
    println!("  finite      {}", s.finite);
    if let Some(k) = s.first_nonfinite_step {
        println!("  blow-up     step {k}");
    }
    println!("  rmse mean   {}", s.rmse);
    println!("  rmse std    {}", s.rmse_std);
    println!("  climatology {}", s.climatology_rmse);
}

pub fn rollout(a: RolloutArgs) -> Result<(), CliError> {
    let file = ExperimentConfigFile::load(a.common.config.as_deref())?;
    let dir = run_dir(&a.common.run_root(), &a.run_id);
    if !dir.is_dir() {
        return Err(CliError::Config(format!("no run directory {}", dir.display())));
    }
    let (cfg, _) = load_run_inputs(&dir)?;
    let (start, n) = rollout_window(&cfg, &file, &a.start, a.steps, a.years)?;
    let reference = a
        .reference
        .clone()
        .or(file.rollout.reference.clone())
        .or(file.dataset.path.clone())
        .ok_or_else(|| CliError::Config("no reference dataset: pass --reference".into()))?;
    let ref_store = open_store(&reference, "reference")?;
    let train_store = match a.train_data.clone().or(file.dataset.path.clone()) {
        Some(p) => open_store(&p, "training dataset")?,
        None => ref_store.clone(),
    };
    let ckpt = a.checkpoint.clone().or(file.rollout.checkpoint.clone()).unwrap_or_else(|| "best.ckpt".into());
    let s = evaluate_run(&dir, &ckpt, &ref_store, &train_store, start, n)?;
    print_score(&s);
    println!("{}", dir.join("score.json").display());
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let file = ExperimentConfigFile::load(a.common.config.as_deref())?;
    let data = a
        .data
        .clone()
        .or(file.dataset.path.clone())
        .ok_or_else(|| CliError::Config("no dataset: pass --data or set dataset.path".into()))?;
    let store = open_store(&data, "dataset")?;
    let spec = file.sweep_spec();
    if spec.n_runs() == 0 {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let root = a.common.run_root();
    let out_dir = a.out.clone().unwrap_or_else(|| root.clone());
    let jobs = a.jobs.or(file.sweep.jobs).unwrap_or(1);
    let outcome = run_sweep(&spec, &store, &root, &out_dir, jobs)?;
    let runs = &outcome.manifest.runs;
    let count = |s: &str| runs.iter().filter(|r| r.status == s).count();
    println!(
        "sweep: {} runs ({} trained now), {} completed, {} early-stopped, {} failed, {} errors",
        runs.len(),
        outcome.executed.len(),
        count("COMPLETED"),
        count("EARLY_STOPPED"),
        count("FAILED"),
        count("ERROR")
    );
    if a.rollout || file.rollout.after_sweep.unwrap_or(false) {
        let reference = file.rollout.reference.clone().unwrap_or(data.clone());
        let ref_store = open_store(&reference, "reference")?;
        let ckpt = file.rollout.checkpoint.clone().unwrap_or_else(|| "best.ckpt".into());
        for r in runs.iter().filter(|r| r.status == "COMPLETED" || r.status == "EARLY_STOPPED") {
            let dir = run_dir(&root, &r.run_id);
            let (cfg, _) = load_run_inputs(&dir)?;
            let (start, n) = rollout_window(&cfg, &file, &None, None, None)?;
            let s = evaluate_run(&dir, &ckpt, &ref_store, &store, start, n)?;
            println!("  {} finite={} rmse={}", r.run_id, s.finite, s.rmse);
        }
    }
    println!("{}", out_dir.join("sweep.json").display());
    if count("ERROR") > 0 {
        return Err(CliError::Run(format!("{} runs raised errors", count("ERROR"))));
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let file = ExperimentConfigFile::load(a.common.config.as_deref())?;
    let root = a.common.run_root();
    let sweep_dir = a.sweep.clone().unwrap_or_else(|| root.clone());
    let path = sweep_dir.join("sweep.json");
    let text = fs::read_to_string(&path)
        .map_err(|_| CliError::Config(format!("no sweep manifest at {}", path.display())))?;
    let manifest: SweepManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid {}: {e}", path.display())))?;
    let reference = match a.reference.clone().or(file.rollout.reference.clone()) {
        Some(p) => Some(open_store(&p, "reference")?),
        None => None,
    };
    let out: PathBuf = a.out.clone().unwrap_or_else(|| sweep_dir.join("report"));
    let res = write_report(&manifest, &root, &out, reference.as_ref(), a.svg)?;
    println!("report: {} configurations, {} files", res.rows.len(), res.files.len());
    println!("{}", out.join("summary.csv").display());
    Ok(())
}
