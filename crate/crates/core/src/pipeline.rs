//! Pipeline stages behind the CLI subcommands: pretrain, evolve, finalize,
//! report. Every stage is deterministic given (config, seed), owns the run
//! directory through a lock file, and embeds the config hash and seed in
//! the artifacts it writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evolver::{self, GenerationRecord, Individual, Mode};
use crate::genome::{build_grouping, GroupedMask, GroupingMap, GroupingSpec};
use crate::net::ReferenceNet;
use crate::pareto::HypervolumeTrend;
use crate::sets;
use crate::taskbed::{self, JatBaseline, Suite};

pub fn arm_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Multitask => "multitask",
        Mode::Singletask => "singletask",
    }
}

/// Layout of one run directory.
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn suite_csv(&self) -> PathBuf {
        self.root.join("suite.csv")
    }

    pub fn suite_manifest(&self) -> PathBuf {
        self.root.join("suite_manifest.json")
    }

    pub fn jat_checkpoint(&self) -> PathBuf {
        self.root.join("jat.json")
    }

    pub fn jat_baseline(&self) -> PathBuf {
        self.root.join("jat_baseline.json")
    }

    pub fn arm_dir(&self, mode: Mode) -> PathBuf {
        self.root.join("evolve").join(arm_name(mode))
    }

    pub fn seed_dir(&self, mode: Mode, seed: u64) -> PathBuf {
        self.arm_dir(mode).join(format!("seed_{seed}"))
    }

    pub fn trend_csv(&self, mode: Mode, seed: u64) -> PathBuf {
        self.seed_dir(mode, seed).join("trend.csv")
    }

    pub fn audit_log(&self, mode: Mode, seed: u64) -> PathBuf {
        self.seed_dir(mode, seed).join("audit.jsonl")
    }

    pub fn final_population(&self, mode: Mode, seed: u64) -> PathBuf {
        self.seed_dir(mode, seed).join("final_population.json")
    }

    pub fn trend_mean_csv(&self, mode: Mode) -> PathBuf {
        self.arm_dir(mode).join("trend_mean.csv")
    }

    pub fn sets_dir(&self) -> PathBuf {
        self.root.join("sets")
    }

    pub fn manifest(&self) -> PathBuf {
        self.sets_dir().join("manifest.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn scatter_csv(&self, task_id: usize) -> PathBuf {
        self.report_dir().join(format!("scatter_task_{task_id}.csv"))
    }

    pub fn hv_trend_csv(&self) -> PathBuf {
        self.report_dir().join("hv_trend.csv")
    }

    pub fn summary_md(&self) -> PathBuf {
        self.report_dir().join("summary.md")
    }

    fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }
}

/// Exclusive ownership of a run directory for the duration of a stage.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(paths: &RunPaths) -> Result<LockGuard> {
        fs::create_dir_all(&paths.root)?;
        let path = paths.lock();
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn provenance_comment(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash},seed={seed}\n")
}

fn build_suite(config: &RunConfig) -> Result<Suite> {
    match config.suite.generator {
        taskbed::GeneratorKind::GaussianClusters => taskbed::generate_suite(&config.suite),
        taskbed::GeneratorKind::Csv => {
            let path = config.suite.csv_path.as_ref().ok_or_else(|| {
                Error::validation("suite.csv_path", "csv generator needs a source path")
            })?;
            taskbed::load_csv_suite(Path::new(path), &config.suite.task_splits)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigEcho {
    config_hash: String,
    seed: u64,
    config: RunConfig,
}

#[derive(Serialize, Deserialize)]
struct BaselineFile {
    config_hash: String,
    seed: u64,
    baselines: Vec<JatBaseline>,
}

#[derive(Serialize, Deserialize)]
struct SuiteManifestFile {
    config_hash: String,
    seed: u64,
    manifest: taskbed::SuiteManifest,
}

/// Generate (or load) the suite, pretrain the shared net, and write the
/// checkpoint, suite artifacts, and per-task reference metrics.
pub fn cmd_pretrain(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    let paths = RunPaths::new(&config.output_dir);
    let _lock = LockGuard::acquire(&paths)?;
    let hash = config.config_hash();
    let seed = config.engine.seed;

    fs::write(
        paths.config(),
        serde_json::to_string_pretty(&ConfigEcho {
            config_hash: hash.clone(),
            seed,
            config: config.clone(),
        })?,
    )?;

    let suite = build_suite(config)?;
    taskbed::export_suite_csv(&suite, &paths.suite_csv())?;
    fs::write(
        paths.suite_manifest(),
        serde_json::to_string_pretty(&SuiteManifestFile {
            config_hash: hash.clone(),
            seed,
            manifest: suite.manifest(&config.suite),
        })?,
    )?;

    let jat = taskbed::pretrain_jat(&config.arch, &suite.full_train, &config.jat_hyper)?;
    let checkpoint = paths.jat_checkpoint();
    fs::write(&checkpoint, jat.to_checkpoint_json())?;

    let baselines = taskbed::jat_baselines(&jat, &suite.tasks)?;
    fs::write(
        paths.jat_baseline(),
        serde_json::to_string_pretty(&BaselineFile {
            config_hash: hash,
            seed,
            baselines,
        })?,
    )?;
    Ok(checkpoint)
}

#[derive(Serialize, Deserialize)]
struct IndividualDump {
    id: u64,
    task: usize,
    mask_hex: String,
    phi1: f64,
    phi2: f64,
    parents: Option<(u64, u64)>,
    transfer: bool,
    born_gen: usize,
}

#[derive(Serialize, Deserialize)]
struct PopulationDump {
    config_hash: String,
    seed: u64,
    arm: Mode,
    grouping: GroupingSpec,
    populations: Vec<Vec<IndividualDump>>,
}

fn dump_populations(
    populations: &[Vec<Individual>],
    grouping: &GroupingMap,
    config_hash: &str,
    seed: u64,
    arm: Mode,
) -> PopulationDump {
    PopulationDump {
        config_hash: config_hash.to_string(),
        seed,
        arm,
        grouping: grouping.spec(),
        populations: populations
            .iter()
            .map(|pop| {
                pop.iter()
                    .map(|ind| IndividualDump {
                        id: ind.id,
                        task: ind.task,
                        mask_hex: ind.mask.to_hex(),
                        phi1: ind.phi1,
                        phi2: ind.phi2,
                        parents: ind.parents,
                        transfer: ind.transfer,
                        born_gen: ind.born_gen,
                    })
                    .collect()
            })
            .collect(),
    }
}

fn load_populations(path: &Path) -> Result<Vec<Vec<Individual>>> {
    let dump: PopulationDump = serde_json::from_str(&fs::read_to_string(path)?)?;
    let grouping = Arc::new(GroupingMap::from_spec(&dump.grouping)?);
    dump.populations
        .into_iter()
        .map(|pop| {
            pop.into_iter()
                .map(|d| {
                    Ok(Individual {
                        id: d.id,
                        task: d.task,
                        mask: GroupedMask::from_hex(&d.mask_hex, grouping.clone())?,
                        phi1: d.phi1,
                        phi2: d.phi2,
                        parents: d.parents,
                        transfer: d.transfer,
                        born_gen: d.born_gen,
                    })
                })
                .collect()
        })
        .collect()
}

fn write_trend_csv(path: &Path, trends: &[HypervolumeTrend], hash: &str, seed: u64) -> Result<()> {
    let mut text = provenance_comment(hash, seed);
    text.push_str("task_id,generation,hypervolume\n");
    for trend in trends {
        for &(generation, hv) in &trend.entries {
            text.push_str(&format!("{},{},{}\n", trend.task_id, generation, hv));
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Rows of a trend CSV: (task_id, generation, hypervolume).
pub fn parse_trend_csv(text: &str) -> Result<Vec<(usize, usize, f64)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("task_id") || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                column: 1,
                msg: format!("expected 3 fields, got {}", parts.len()),
            });
        }
        let parse_err = |column: usize, msg: String| Error::Parse {
            line: i + 1,
            column,
            msg,
        };
        rows.push((
            parts[0]
                .parse()
                .map_err(|e| parse_err(1, format!("{e}")))?,
            parts[1]
                .parse()
                .map_err(|e| parse_err(2, format!("{e}")))?,
            parts[2]
                .parse()
                .map_err(|e| parse_err(3, format!("{e}")))?,
        ));
    }
    Ok(rows)
}

/// Per-(task, generation) mean and population standard deviation over the
/// seeds, averaging in ascending seed order.
fn mean_trend(per_seed: &[Vec<(usize, usize, f64)>]) -> Vec<(usize, usize, f64, f64)> {
    let mut keys: Vec<(usize, usize)> = per_seed
        .first()
        .map(|rows| rows.iter().map(|&(t, g, _)| (t, g)).collect())
        .unwrap_or_default();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|(task, generation)| {
            let values: Vec<f64> = per_seed
                .iter()
                .flat_map(|rows| {
                    rows.iter()
                        .filter(move |&&(t, g, _)| t == task && g == generation)
                        .map(|&(_, _, hv)| hv)
                })
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (task, generation, mean, var.sqrt())
        })
        .collect()
}

fn write_mean_trend_csv(
    path: &Path,
    mode: Mode,
    stats: &[(usize, usize, f64, f64)],
    hash: &str,
    seed: u64,
) -> Result<()> {
    let mut text = provenance_comment(hash, seed);
    text.push_str("arm,task_id,generation,mean_hv,std_hv\n");
    for &(task, generation, mean, std) in stats {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            arm_name(mode),
            task,
            generation,
            mean,
            std
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

fn require_files(files: &[PathBuf]) -> Result<()> {
    let missing: Vec<String> = files
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingArtifacts(missing.join(", ")))
    }
}

/// Run every requested arm for every repeat seed. Writes per-seed trend
/// CSVs, audit logs, and final-population dumps, plus an averaged trend per
/// arm. Audit lines are flushed as generations finish, so partial logs
/// survive a failure.
pub fn cmd_evolve(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let paths = RunPaths::new(&config.output_dir);
    require_files(&[paths.jat_checkpoint()])?;
    let _lock = LockGuard::acquire(&paths)?;
    let hash = config.config_hash();

    let jat = ReferenceNet::from_checkpoint_json(&fs::read_to_string(paths.jat_checkpoint())?)?;
    let suite = build_suite(config)?;
    let grouping = Arc::new(build_grouping(&config.arch, config.engine.granularity)?);
    let k = suite.tasks.len();

    let jobs: Vec<(Mode, u64)> = config
        .arms
        .iter()
        .flat_map(|&mode| {
            (0..config.repeats).map(move |r| (mode, config.engine.seed + r as u64))
        })
        .collect();

    let results: Vec<Result<(Mode, u64, Vec<HypervolumeTrend>)>> = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let dir = paths.seed_dir(mode, seed);
            fs::create_dir_all(&dir)?;
            let engine_config = config.engine_config(mode, seed, k)?;

            let audit_path = paths.audit_log(mode, seed);
            let mut audit = std::io::BufWriter::new(fs::File::create(&audit_path)?);
            writeln!(
                audit,
                "{}",
                serde_json::json!({
                    "config_hash": hash,
                    "seed": seed,
                    "arm": arm_name(mode),
                })
            )?;

            let sink = |record: &GenerationRecord| -> Result<()> {
                writeln!(audit, "{}", serde_json::to_string(record)?)?;
                audit.flush()?;
                Ok(())
            };
            let out = evolver::run(&engine_config, &jat, &suite.tasks, grouping.clone(), sink)?;

            write_trend_csv(&paths.trend_csv(mode, seed), &out.trends, &hash, seed)?;
            fs::write(
                paths.final_population(mode, seed),
                serde_json::to_string(&dump_populations(
                    &out.populations,
                    &grouping,
                    &hash,
                    seed,
                    mode,
                ))?,
            )?;
            Ok((mode, seed, out.trends))
        })
        .collect();

    for &mode in &config.arms {
        let mut per_seed: Vec<(u64, Vec<(usize, usize, f64)>)> = Vec::new();
        for result in &results {
            match result {
                Ok((m, seed, trends)) if *m == mode => {
                    let rows = trends
                        .iter()
                        .flat_map(|t| {
                            t.entries
                                .iter()
                                .map(move |&(g, hv)| (t.task_id, g, hv))
                        })
                        .collect();
                    per_seed.push((*seed, rows));
                }
                Ok(_) => {}
                Err(e) => return Err(Error::MissingArtifacts(format!("evolve run failed: {e}"))),
            }
        }
        per_seed.sort_by_key(|&(seed, _)| seed);
        let rows: Vec<Vec<(usize, usize, f64)>> =
            per_seed.into_iter().map(|(_, rows)| rows).collect();
        write_mean_trend_csv(
            &paths.trend_mean_csv(mode),
            mode,
            &mean_trend(&rows),
            &hash,
            config.engine.seed,
        )?;
    }
    Ok(())
}

/// Arm whose final populations feed the fine-tuning stage.
fn finalize_arm(config: &RunConfig) -> Mode {
    if config.arms.contains(&Mode::Multitask) {
        Mode::Multitask
    } else {
        config.arms[0]
    }
}

/// Fine-tune the evolved Pareto candidates, assemble the union set, export
/// checkpoints and the manifest, and print the per-task summary table.
pub fn cmd_finalize(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    let paths = RunPaths::new(&config.output_dir);
    let arm = finalize_arm(config);
    let seed = config.engine.seed;
    require_files(&[
        paths.jat_checkpoint(),
        paths.jat_baseline(),
        paths.final_population(arm, seed),
    ])?;
    let _lock = LockGuard::acquire(&paths)?;
    let hash = config.config_hash();

    let jat = ReferenceNet::from_checkpoint_json(&fs::read_to_string(paths.jat_checkpoint())?)?;
    let suite = build_suite(config)?;
    let baseline_file: BaselineFile =
        serde_json::from_str(&fs::read_to_string(paths.jat_baseline())?)?;
    let populations = load_populations(&paths.final_population(arm, seed))?;

    let hyper = config.finetune_train_hyper(seed);
    let mut per_task = Vec::with_capacity(populations.len());
    for (population, task) in populations.iter().zip(&suite.tasks) {
        let candidates = sets::extract_candidates(population);
        let outcome = sets::finetune_all(&candidates, &jat, task, &hyper, &hash)?;
        for dropped in &outcome.dropped {
            eprintln!(
                "warning: task {} candidate {} dropped: {}",
                task.id, dropped.individual_id, dropped.reason
            );
        }
        per_task.push(outcome.models);
    }

    let set = sets::assemble(per_task, baseline_file.baselines.clone());
    let manifest_path = sets::export(
        &set,
        &config.arch,
        &paths.sets_dir(),
        serde_json::to_value(config)?,
        &hash,
        seed,
    )?;

    let total_params = config.arch.total_params();
    println!("task  models  baseline_loss  best_loss  baseline_acc  best_acc  max_size_reduction");
    for (task_set, baseline) in set.per_task.iter().zip(&set.jat_reference) {
        let best_loss = task_set
            .iter()
            .map(|m| m.metrics.test_loss)
            .fold(f64::INFINITY, f64::min);
        let best_acc = task_set
            .iter()
            .filter_map(|m| m.metrics.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        let smallest = task_set
            .iter()
            .map(|m| m.metrics.retained_params)
            .min()
            .unwrap_or(total_params);
        println!(
            "{:<5} {:<7} {:<14.6} {:<10.6} {:<13.4} {:<9.4} {:.1}%",
            baseline.task_id,
            task_set.len(),
            baseline.test_loss,
            best_loss,
            baseline.test_accuracy,
            best_acc,
            100.0 * (1.0 - smallest as f64 / total_params as f64),
        );
    }
    Ok(manifest_path)
}

#[derive(Deserialize)]
struct ManifestView {
    config_hash: String,
    seed: u64,
    jat_reference: Vec<JatBaseline>,
    models: Vec<ManifestModelView>,
}

#[derive(Deserialize)]
struct ManifestModelView {
    task_id: usize,
    retained_params: usize,
    size_bytes: usize,
    test_loss: f64,
    test_accuracy: Option<f64>,
}

/// Emit plot-ready artifacts: per-task objective-space scatter CSVs with
/// the shared net marked, the averaged hypervolume trend across arms, and
/// a markdown summary with the per-task final-hypervolume ratio.
pub fn cmd_report(run_dir: &Path) -> Result<()> {
    let paths = RunPaths::new(run_dir);
    require_files(&[paths.config(), paths.manifest(), paths.jat_checkpoint()])?;
    let echo: ConfigEcho = serde_json::from_str(&fs::read_to_string(paths.config())?)?;
    let config = echo.config;
    let _lock = LockGuard::acquire(&paths)?;

    let mut expected_trends: Vec<PathBuf> = Vec::new();
    for &mode in &config.arms {
        for r in 0..config.repeats {
            expected_trends.push(paths.trend_csv(mode, config.engine.seed + r as u64));
        }
    }
    require_files(&expected_trends)?;

    let manifest: ManifestView = serde_json::from_str(&fs::read_to_string(paths.manifest())?)?;
    fs::create_dir_all(paths.report_dir())?;
    let comment = provenance_comment(&manifest.config_hash, manifest.seed);

    let jat_size = fs::metadata(paths.jat_checkpoint())?.len();
    let total_params = config.arch.total_params();
    for baseline in &manifest.jat_reference {
        let mut text = comment.clone();
        text.push_str("task_id,source,retained_params,size_bytes,test_loss,test_accuracy\n");
        for model in manifest.models.iter().filter(|m| m.task_id == baseline.task_id) {
            text.push_str(&format!(
                "{},specialist,{},{},{},{}\n",
                model.task_id,
                model.retained_params,
                model.size_bytes,
                model.test_loss,
                model
                    .test_accuracy
                    .map(|a| a.to_string())
                    .unwrap_or_default(),
            ));
        }
        text.push_str(&format!(
            "{},jat,{},{},{},{}\n",
            baseline.task_id, total_params, jat_size, baseline.test_loss, baseline.test_accuracy
        ));
        fs::write(paths.scatter_csv(baseline.task_id), text)?;
    }

    // Averaged hypervolume trend per arm, recomputed from the raw per-seed
    // files.
    let mut all_stats: Vec<(Mode, Vec<(usize, usize, f64, f64)>)> = Vec::new();
    let mut text = comment.clone();
    text.push_str("arm,task_id,generation,mean_hv,std_hv\n");
    for &mode in &config.arms {
        let mut rows = Vec::new();
        for r in 0..config.repeats {
            let seed = config.engine.seed + r as u64;
            rows.push(parse_trend_csv(&fs::read_to_string(
                paths.trend_csv(mode, seed),
            )?)?);
        }
        let stats = mean_trend(&rows);
        for &(task, generation, mean, std) in &stats {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                arm_name(mode),
                task,
                generation,
                mean,
                std
            ));
        }
        all_stats.push((mode, stats));
    }
    fs::write(paths.hv_trend_csv(), text)?;

    let mut md = String::new();
    md.push_str("# Run report\n\n");
    md.push_str(&format!(
        "- config hash: `{}`\n- seed: {}\n\n",
        manifest.config_hash, manifest.seed
    ));
    md.push_str("## Per-task results\n\n");
    md.push_str("| task | specialists | jat test loss | best test loss | smallest model | size reduction |\n");
    md.push_str("|------|-------------|---------------|----------------|----------------|----------------|\n");
    for baseline in &manifest.jat_reference {
        let models: Vec<&ManifestModelView> = manifest
            .models
            .iter()
            .filter(|m| m.task_id == baseline.task_id)
            .collect();
        let best = models
            .iter()
            .map(|m| m.test_loss)
            .fold(f64::INFINITY, f64::min);
        let smallest = models
            .iter()
            .map(|m| m.retained_params)
            .min()
            .unwrap_or(total_params);
        md.push_str(&format!(
            "| {} | {} | {:.6} | {:.6} | {} params | {:.1}% |\n",
            baseline.task_id,
            models.len(),
            baseline.test_loss,
            best,
            smallest,
            100.0 * (1.0 - smallest as f64 / total_params as f64),
        ));
    }

    let multi = all_stats.iter().find(|(m, _)| *m == Mode::Multitask);
    let single = all_stats.iter().find(|(m, _)| *m == Mode::Singletask);
    if let (Some((_, multi)), Some((_, single))) = (multi, single) {
        md.push_str("\n## Final hypervolume: multitask vs singletask\n\n");
        md.push_str("| task | multitask | singletask | ratio |\n");
        md.push_str("|------|-----------|------------|-------|\n");
        let last_gen = multi.iter().map(|&(_, g, _, _)| g).max().unwrap_or(0);
        for baseline in &manifest.jat_reference {
            let pick = |stats: &[(usize, usize, f64, f64)]| {
                stats
                    .iter()
                    .find(|&&(t, g, _, _)| t == baseline.task_id && g == last_gen)
                    .map(|&(_, _, mean, _)| mean)
            };
            if let (Some(m), Some(s)) = (pick(multi), pick(single)) {
                md.push_str(&format!(
                    "| {} | {:.6} | {:.6} | {:.4} |\n",
                    baseline.task_id,
                    m,
                    s,
                    m / s
                ));
            }
        }
    }
    fs::write(paths.summary_md(), md)?;
    Ok(())
}

/// All four stages in order.
pub fn cmd_run(config: &RunConfig) -> Result<()> {
    cmd_pretrain(config)?;
    cmd_evolve(config)?;
    cmd_finalize(config)?;
    cmd_report(Path::new(&config.output_dir))?;
    Ok(())
}
