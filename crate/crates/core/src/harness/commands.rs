use std::collections::BTreeSet;
use std::path::PathBuf;

use rayon::prelude::*;

use super::adjacency::{heatmap_ppm, AdjacencyMatrix};
use super::io::{read_paths, read_stable, write_file, write_metrics_csv, write_stable, MetricsRow, MetricsTable, PathsFile, RunMeta, TreeFile};
use super::{ExperimentConfig, HarnessError};
use crate::baselines::{run_ablation_grid, run_predictive_sampling_all, Method};
use crate::metrics::{coverage_from_tree, MetricsReport};
use crate::physics::SceneSpec;
use crate::planner::{plan as plan_tree, Path, SearchTree};
use crate::stability::{sample_stable_states, SamplingStats, StableState};

/// Rows written by a run, the seeds that failed and the files produced.
#[derive(Debug, Clone)]
pub struct PlanSummary {
    pub rows: Vec<MetricsRow>,
    pub mean: MetricsRow,
    pub failures: Vec<(u64, String)>,
    pub files: Vec<PathBuf>,
}

struct SeedRun {
    seed: u64,
    report: MetricsReport,
    paths: Vec<Path>,
    tree: Option<SearchTree>,
    sim_steps: u64,
    epsilon: f64,
    d_min: f64,
}

fn meta(config: &ExperimentConfig, command: &str) -> RunMeta {
    RunMeta {
        command: command.into(),
        config: config.clone(),
        seed: None,
        goal_bias: (config.method == Method::RrtSim).then_some(config.goal_bias),
        epsilon: None,
        d_min: None,
        sim_steps: None,
    }
}

fn file_stem(config: &ExperimentConfig, label: &str) -> String {
    format!("{}_{}", config.scene_name(), label.replace('=', ""))
}

/// Samples the stable set, writes it with its metadata sidecar and returns it.
pub fn sample_stable(config: &ExperimentConfig) -> Result<(Vec<StableState>, SamplingStats), HarnessError> {
    let scene = config.scene.resolve()?;
    let (states, stats) = sample_stable_states(config.stable_count(), &scene, config.stable_seed, &config.sampler)?;
    let mut m = meta(config, "sample-stable");
    m.seed = Some(config.stable_seed);
    write_stable(&config.stable_path(), &states, &m)?;
    Ok((states, stats))
}

/// Reads the configured stable-set file, sampling and writing it first when absent.
fn load_or_sample(config: &ExperimentConfig) -> Result<Vec<StableState>, HarnessError> {
    let path = config.stable_path();
    let states = if path.exists() { read_stable(&path)? } else { sample_stable(config)?.0 };
    let need = config.stable_count();
    if states.len() < need {
        return Err(HarnessError::Validation(format!(
            "{} holds {} stable states, need {need}",
            path.display(),
            states.len()
        )));
    }
    Ok(states)
}

fn run_seed(config: &ExperimentConfig, scene: &SceneSpec, stable: &[StableState], seed: u64) -> Result<SeedRun, HarnessError> {
    let pc = config.planner_for(seed);
    let epsilon = pc.epsilon_for(scene);
    let d_min = pc.d_min_for(scene);
    if config.method == Method::PredictiveSampling {
        let (outcomes, report) = run_predictive_sampling_all(&config.predictive_sampling, &pc, stable, scene)?;
        let paths: Vec<Path> = outcomes.iter().filter(|o| o.success).map(|o| o.path.clone()).collect();
        let report = MetricsReport::from_paths(&paths, report.coverage_pct, &pc.weights, &config.entropy, seed);
        let sim_steps = outcomes.iter().map(|o| o.sim_steps).sum();
        return Ok(SeedRun { seed, report, paths, tree: None, sim_steps, epsilon, d_min });
    }
    let c = config.method.planner_config(&pc, config.goal_bias).expect("tree method");
    let outcome = plan_tree(&c, stable, scene)?;
    let report = MetricsReport::from_outcome(&outcome, c.stable_subset(stable), &c.weights, &config.entropy, seed);
    Ok(SeedRun {
        seed,
        report,
        sim_steps: outcome.stats.sim_steps,
        paths: outcome.paths,
        tree: config.emit.tree.then_some(outcome.tree),
        epsilon,
        d_min,
    })
}

/// Runs the configured method once per seed and writes paths, trees,
/// metrics, adjacency and run metadata. A failing seed is reported in the
/// summary and does not stop the others.
pub fn plan(config: &ExperimentConfig) -> Result<PlanSummary, HarnessError> {
    config.validate()?;
    let scene = config.scene.resolve()?;
    let stable = load_or_sample(config)?;
    let subset = &stable[..config.m];
    let runs: Vec<Result<SeedRun, HarnessError>> =
        config.seeds.par_iter().map(|&s| run_seed(config, &scene, subset, s)).collect();

    let method = config.method.name();
    let stem = file_stem(config, method);
    let base = meta(config, "plan");
    let mut files = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut all_paths = Vec::new();
    for (seed, run) in config.seeds.iter().zip(runs) {
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                failures.push((*seed, e.to_string()));
                continue;
            }
        };
        let m = RunMeta {
            seed: Some(run.seed),
            epsilon: Some(run.epsilon),
            d_min: Some(run.d_min),
            sim_steps: Some(run.sim_steps),
            ..base.clone()
        };
        if config.emit.paths {
            let f = config.output(&format!("{stem}_{}.jsonl", run.seed));
            write_file(&f, PathsFile { meta: m.clone(), paths: run.paths.clone() }.to_jsonl().as_bytes())?;
            files.push(f);
        }
        if let Some(tree) = run.tree {
            let f = config.output(&format!("{stem}_{}_tree.json", run.seed));
            let text = serde_json::to_string(&TreeFile { meta: m, tree }).expect("tree serializes") + "\n";
            write_file(&f, text.as_bytes())?;
            files.push(f);
        }
        rows.push(MetricsRow::from_report(config.scene_name(), method, run.seed, &run.report));
        all_paths.extend(run.paths);
    }
    let mean = MetricsRow::mean(config.scene_name(), method, &rows);
    if config.emit.metrics {
        let f = config.output(&format!("{stem}_metrics.csv"));
        let mut table_rows = rows.clone();
        table_rows.push(mean.clone());
        write_metrics_csv(&f, &MetricsTable { meta: Some(base.to_line()), rows: table_rows })?;
        files.push(f);
    }
    if config.emit.adjacency {
        let a = AdjacencyMatrix::from_paths(subset.iter().map(|s| s.id).collect(), &all_paths)?;
        files.extend(write_adjacency(config, &stem, &a, &base)?);
    }
    let f = config.output(&format!("{stem}_meta.json"));
    write_file(&f, (serde_json::to_string_pretty(&base).expect("metadata serializes") + "\n").as_bytes())?;
    files.push(f);
    Ok(PlanSummary { rows, mean, failures, files })
}

fn write_adjacency(config: &ExperimentConfig, stem: &str, a: &AdjacencyMatrix, m: &RunMeta) -> Result<Vec<PathBuf>, HarnessError> {
    let line = m.to_line();
    let csv = config.output(&format!("{stem}_adjacency.csv"));
    write_file(&csv, a.to_csv(Some(&line)).as_bytes())?;
    let ppm = config.output(&format!("{stem}_adjacency.ppm"));
    write_file(&ppm, &heatmap_ppm(a, Some(&line)))?;
    Ok(vec![csv, ppm])
}

/// Recomputes the metrics of a finished `plan` run from its path files, and
/// from its tree files where present; without a tree, coverage counts the
/// goals some retained path reaches. Writes `<scene>_<method>_evaluation.csv`.
pub fn evaluate(config: &ExperimentConfig) -> Result<PlanSummary, HarnessError> {
    config.validate()?;
    let stable = read_stable(&config.stable_path())?;
    if stable.len() < config.m {
        return Err(HarnessError::Validation(format!("stable set holds {} states, need {}", stable.len(), config.m)));
    }
    let subset = &stable[..config.m];
    let method = config.method.name();
    let stem = file_stem(config, method);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        let file = match read_paths(&config.output(&format!("{stem}_{seed}.jsonl"))) {
            Ok(f) => f,
            Err(e) => {
                failures.push((seed, e.to_string()));
                continue;
            }
        };
        let tree_path = config.output(&format!("{stem}_{seed}_tree.json"));
        let w = &config.planner.weights;
        let coverage = if tree_path.exists() {
            let t = TreeFile::read(&tree_path)?;
            let eps = file.meta.epsilon.unwrap_or_else(|| config.planner.epsilon_for(&config.scene.resolve().expect("validated")));
            coverage_from_tree(&t.tree, subset, eps, w)
        } else {
            let reached: BTreeSet<usize> = file.paths.iter().map(|p| p.goal_id).collect();
            let goals = (subset.len() - 1).max(1);
            100.0 * reached.len() as f64 / goals as f64
        };
        let report = MetricsReport::from_paths(&file.paths, coverage, w, &config.entropy, seed);
        rows.push(MetricsRow::from_report(config.scene_name(), method, seed, &report));
    }
    let mean = MetricsRow::mean(config.scene_name(), method, &rows);
    let f = config.output(&format!("{stem}_evaluation.csv"));
    let mut table_rows = rows.clone();
    table_rows.push(mean.clone());
    write_metrics_csv(&f, &MetricsTable { meta: Some(meta(config, "evaluate").to_line()), rows: table_rows })?;
    Ok(PlanSummary { rows, mean, failures, files: vec![f] })
}

/// Accumulates the paths of `files` into an adjacency matrix over the
/// configured stable set and writes it as CSV and PPM heatmap. With no files
/// given, the per-seed path files of the configured run are used.
pub fn adjacency_from_files(config: &ExperimentConfig, files: &[PathBuf]) -> Result<(AdjacencyMatrix, Vec<PathBuf>), HarnessError> {
    config.validate()?;
    let stable = read_stable(&config.stable_path())?;
    let ids: Vec<usize> = stable.iter().take(config.m).map(|s| s.id).collect();
    let stem = file_stem(config, config.method.name());
    let files: Vec<PathBuf> = if files.is_empty() {
        config.seeds.iter().map(|s| config.output(&format!("{stem}_{s}.jsonl"))).collect()
    } else {
        files.to_vec()
    };
    let mut a = AdjacencyMatrix::zeros(ids);
    for f in &files {
        for p in &read_paths(f)?.paths {
            a.add(p)?;
        }
    }
    let written = write_adjacency(config, &stem, &a, &meta(config, "adjacency"))?;
    Ok((a, written))
}

/// Runs the ablation grid of the five planner variants and the configured
/// sweeps. Writes `<scene>_ablation_metrics.csv` with one row per cell and a
/// mean row per configuration, and per-cell path files.
pub fn ablate(config: &ExperimentConfig) -> Result<PlanSummary, HarnessError> {
    config.validate()?;
    let scene = config.scene.resolve()?;
    let stable = load_or_sample(config)?;
    let base_cfg = config.planner_for(0);
    let cells = run_ablation_grid(&scene, &stable, &base_cfg, &config.seeds, &config.sweeps, &config.entropy)?;
    let base = meta(config, "ablate");
    let mut files = Vec::new();
    let mut table = Vec::new();
    let mut rows = Vec::new();
    for group in cells.chunk_by(|a, b| a.label == b.label) {
        let label = &group[0].label;
        let group_rows: Vec<MetricsRow> = group
            .iter()
            .map(|c| MetricsRow::from_report(config.scene_name(), label, c.seed, &c.report))
            .collect();
        if config.emit.paths {
            for c in group {
                let f = config.output(&format!("{}_{}.jsonl", file_stem(config, label), c.seed));
                let m = RunMeta {
                    seed: Some(c.seed),
                    epsilon: Some(c.config.epsilon_for(&scene)),
                    d_min: Some(c.config.d_min_for(&scene)),
                    sim_steps: Some(c.stats.sim_steps),
                    ..base.clone()
                };
                write_file(&f, PathsFile { meta: m, paths: c.paths.clone() }.to_jsonl().as_bytes())?;
                files.push(f);
            }
        }
        table.extend(group_rows.iter().cloned());
        table.push(MetricsRow::mean(config.scene_name(), label, &group_rows));
        rows.extend(group_rows);
    }
    let f = config.output(&format!("{}_ablation_metrics.csv", config.scene_name()));
    write_metrics_csv(&f, &MetricsTable { meta: Some(base.to_line()), rows: table })?;
    files.push(f);
    let mean = MetricsRow::mean(config.scene_name(), "all", &rows);
    Ok(PlanSummary { rows, mean, failures: vec![], files })
}
