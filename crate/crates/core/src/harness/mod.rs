//! Experiment orchestration: benchmark sweeps, searches, permutation tests,
//! multi-seed aggregation and reports.
//!
//! Layout of a run: `out/{command}/{env}/{config-hash}/seed-{n}/` holding
//! `metadata.json`, `curves.csv` and `search-trace.jsonl` or
//! `importance.csv`. Aggregates and plots land in the run directory itself.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::channels::{ChannelRegistry, ObservationSpace};
use crate::error::{Error, Result};
use crate::learner::train;
use crate::permtest::{heatmap_svg, report_csv, run_permtest, ImportanceReport, PermTestConfig, Verdict};
use crate::rng::{derive, Stream};
use crate::search::{run_search, SacTrainer, SearchState};

pub mod config;
pub mod plot;
pub mod record;

pub use config::{Command, ExperimentConfig};
pub use record::{AggregatePoint, RunRecord, SeedMeta, SeriesRecord};

use record::{bucketize, final_mean, mean_stderr, write_aggregate, write_curves, write_json, write_rows, CurveRow};

/// Number of final training episodes averaged into a run's final return.
pub const FINAL_EPISODES: usize = 10;

/// Root seed of the `index`-th seed of a run.
pub fn seed_for(config: &ExperimentConfig, index: usize) -> u64 {
    derive(config.root_seed, Stream::Seed, index as u64)
}

/// Creates (or, with `force`, recreates) a run directory.
pub fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::RunExists(dir.to_path_buf()));
        }
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct SeedRun<T> {
    meta: SeedMeta,
    value: Option<T>,
}

/// Runs `f` for every seed on a pool of `config.workers` threads. Results
/// come back in seed order whatever the scheduling.
fn run_seeds<T: Send>(config: &ExperimentConfig, f: impl Fn(usize, u64) -> Result<T> + Sync) -> Result<Vec<SeedRun<T>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let runs = pool.install(|| {
        (0..config.seeds)
            .into_par_iter()
            .map(|index| {
                let seed = seed_for(config, index);
                let start = Instant::now();
                let result = f(index, seed);
                let wall_seconds = start.elapsed().as_secs_f64();
                let (ok, error, value) = match result {
                    Ok(v) => (true, None, Some(v)),
                    Err(e) => {
                        log::warn!("seed {index} failed: {e}");
                        (false, Some(e.to_string()), None)
                    }
                };
                SeedRun {
                    meta: SeedMeta {
                        index,
                        seed,
                        ok,
                        error,
                        wall_seconds,
                    },
                    value,
                }
            })
            .collect::<Vec<_>>()
    });
    if runs.iter().all(|r| !r.meta.ok) {
        let first = runs.iter().find_map(|r| r.meta.error.clone()).unwrap_or_default();
        return Err(Error::AllSeedsFailed(first));
    }
    Ok(runs)
}

fn seed_dir(run_dir: &Path, index: usize) -> Result<PathBuf> {
    let dir = run_dir.join(format!("seed-{index}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

#[derive(Serialize)]
struct SeedMetadata<'a, T: Serialize> {
    command: &'a str,
    env: &'a str,
    config_hash: &'a str,
    seed_index: usize,
    seed: u64,
    bucket_steps: usize,
    wall_seconds: f64,
    started_unix: u64,
    details: T,
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn write_seed_meta<T: Serialize>(
    dir: &Path,
    config: &ExperimentConfig,
    command: Command,
    index: usize,
    seed: u64,
    wall_seconds: f64,
    details: T,
) -> Result<()> {
    let meta = SeedMetadata {
        command: command.as_str(),
        env: config.env_id()?,
        config_hash: &config.content_hash(),
        seed_index: index,
        seed,
        bucket_steps: config.bucket_steps,
        wall_seconds,
        started_unix: unix_now(),
        details,
    };
    write_json(&dir.join("metadata.json"), &meta)
}

fn series_from<T>(
    runs: &[SeedRun<T>],
    labels: &[String],
    curve: impl Fn(&T, &str) -> Option<Vec<(usize, f64)>>,
) -> Vec<SeriesRecord> {
    labels
        .iter()
        .map(|label| {
            let per_seed = runs
                .iter()
                .filter_map(|r| r.value.as_ref().and_then(|v| curve(v, label)).map(|c| (r.meta.index, c)))
                .collect();
            SeriesRecord::new(label.clone(), per_seed)
        })
        .collect()
}

#[derive(Serialize)]
struct ComparisonRow {
    series: String,
    seeds: usize,
    final_mean: f64,
    final_stderr: f64,
    auc_mean: f64,
}

fn finish_run(
    run_dir: &Path,
    config: &ExperimentConfig,
    command: Command,
    seeds: Vec<SeedMeta>,
    series: Vec<SeriesRecord>,
    finals: &[(String, Vec<f64>)],
    started: Instant,
) -> Result<RunRecord> {
    write_aggregate(&run_dir.join("aggregate.csv"), &series)?;
    let rows: Vec<ComparisonRow> = finals
        .iter()
        .map(|(label, values)| {
            let (m, s) = mean_stderr(values);
            ComparisonRow {
                series: label.clone(),
                seeds: values.len(),
                final_mean: m,
                final_stderr: s,
                auc_mean: series.iter().find(|r| &r.label == label).map_or(f64::NAN, |r| r.mean_auc()),
            }
        })
        .collect();
    write_rows(&run_dir.join("comparison.csv"), &rows)?;
    let bands: Vec<plot::BandSeries> = series
        .iter()
        .map(|s| plot::BandSeries {
            label: format!("{} (n={})", s.label, s.per_seed.len()),
            points: &s.aggregate,
        })
        .collect();
    let title = format!("{} on {}", command.as_str(), config.env_id()?);
    let svg = plot::band_plot(&title, "environment steps", "episode return", &bands);
    let plot_path = run_dir.join("curves.svg");
    std::fs::write(&plot_path, svg).map_err(|e| Error::io(&plot_path, e))?;
    let record = RunRecord {
        command: command.as_str().into(),
        env: config.env_id()?.into(),
        config_hash: config.content_hash(),
        config: config.clone(),
        bucket_steps: config.bucket_steps,
        seeds,
        series,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&run_dir.join("record.json"), &record)?;
    Ok(record)
}

struct BenchSeed {
    curves: Vec<(String, Vec<(usize, f64)>)>,
    finals: Vec<(String, f64)>,
}

/// Trains every preset on every seed and compares the learning curves.
pub fn run_bench(config: &ExperimentConfig, force: bool) -> Result<RunRecord> {
    config.validate(Command::Bench)?;
    let started = Instant::now();
    let run_dir = config.run_dir(Command::Bench)?;
    prepare_run_dir(&run_dir, force)?;
    let steps = config.steps()?;
    let train_cfg = config.train_config()?;
    let spaces: Vec<ObservationSpace> = config.presets.iter().map(|p| config.space(p)).collect::<Result<_>>()?;
    let runs = run_seeds(config, |index, seed| {
        let t = Instant::now();
        let mut env = config.build_env()?;
        let mut rows = Vec::new();
        let mut out = BenchSeed {
            curves: Vec::new(),
            finals: Vec::new(),
        };
        for (label, space) in config.presets.iter().zip(&spaces) {
            let model = train(env.as_mut(), space, steps, &train_cfg, 0.0, seed)?;
            rows.extend(model.reward_history.iter().map(|&(step, ret)| CurveRow {
                series: label.clone(),
                step,
                ret,
            }));
            out.finals.push((label.clone(), final_mean(&model.reward_history, FINAL_EPISODES)));
            out.curves.push((label.clone(), bucketize(&model.reward_history, config.bucket_steps, steps)));
        }
        let dir = seed_dir(&run_dir, index)?;
        write_curves(&dir.join("curves.csv"), &rows)?;
        let finals: Vec<_> = out.finals.clone();
        write_seed_meta(&dir, config, Command::Bench, index, seed, t.elapsed().as_secs_f64(), serde_json::json!({
            "steps": steps,
            "final_returns": finals,
        }))?;
        Ok(out)
    })?;
    let series = series_from(&runs, &config.presets, |v, label| {
        v.curves.iter().find(|(l, _)| l == label).map(|(_, c)| c.clone())
    });
    let finals = collect_finals(&runs, &config.presets, |v| &v.finals);
    finish_run(&run_dir, config, Command::Bench, runs.into_iter().map(|r| r.meta).collect(), series, &finals, started)
}

fn collect_finals<T>(runs: &[SeedRun<T>], labels: &[String], get: impl Fn(&T) -> &Vec<(String, f64)>) -> Vec<(String, Vec<f64>)> {
    labels
        .iter()
        .map(|label| {
            let values = runs
                .iter()
                .filter_map(|r| r.value.as_ref())
                .filter_map(|v| get(v).iter().find(|(l, _)| l == label).map(|(_, f)| *f))
                .collect();
            (label.clone(), values)
        })
        .collect()
}

/// Result of one seed of `search`.
#[derive(Clone, Debug)]
pub struct SearchSeed {
    pub best: ObservationSpace,
    pub state: SearchState,
    pub curves: Vec<(String, Vec<(usize, f64)>)>,
    pub finals: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct SelectionRow {
    group: String,
    selected: usize,
    accepted: usize,
    runs: usize,
}

pub const SEARCH_SERIES: &str = "search";

/// Runs the search on every seed, then retrains the found space and the
/// initial space for comparison.
pub fn run_search_cmd(config: &ExperimentConfig, force: bool) -> Result<(RunRecord, Vec<Option<SearchSeed>>)> {
    config.validate(Command::Search)?;
    let started = Instant::now();
    let run_dir = config.run_dir(Command::Search)?;
    prepare_run_dir(&run_dir, force)?;
    let search_cfg = config.search_config()?;
    let train_cfg = config.train_config()?;
    let init = config.space(&config.init_preset)?;
    let steps = search_cfg.k_steps;
    let labels = vec![SEARCH_SERIES.to_string(), config.init_preset.clone()];
    let runs = run_seeds(config, |index, seed| {
        let t = Instant::now();
        let env = config.build_env()?;
        let registry = ChannelRegistry::for_env(env.spec());
        let mut trainer = SacTrainer::new(env, train_cfg.clone(), config.permtest.clone(), &search_cfg);
        let (best, state) = run_search(&mut trainer, &registry, &init, &search_cfg, seed)?;
        let retrain_seed = derive(seed, Stream::Learner, 1);
        let mut env = config.build_env()?;
        let mut rows = Vec::new();
        let mut curves = Vec::new();
        let mut finals = Vec::new();
        for (label, space) in [(SEARCH_SERIES, &best), (config.init_preset.as_str(), &init)] {
            let model = train(env.as_mut(), space, steps, &train_cfg, 0.0, retrain_seed)?;
            rows.extend(model.reward_history.iter().map(|&(step, ret)| CurveRow {
                series: label.to_string(),
                step,
                ret,
            }));
            finals.push((label.to_string(), final_mean(&model.reward_history, FINAL_EPISODES)));
            curves.push((label.to_string(), bucketize(&model.reward_history, config.bucket_steps, steps)));
        }
        let dir = seed_dir(&run_dir, index)?;
        write_curves(&dir.join("curves.csv"), &rows)?;
        std::fs::write(dir.join("search-trace.jsonl"), state.trace_jsonl()?).map_err(|e| Error::io(&dir, e))?;
        std::fs::write(dir.join("best-space.json"), best.to_json()? + "\n").map_err(|e| Error::io(&dir, e))?;
        write_seed_meta(&dir, config, Command::Search, index, seed, t.elapsed().as_secs_f64(), serde_json::json!({
            "k_steps": steps,
            "best_channels": best.channel_names(),
            "best_score": if state.best_score.is_finite() { Some(state.best_score) } else { None },
            "iterations": state.trace.len() - 1,
            "final_returns": finals,
        }))?;
        Ok(SearchSeed {
            best,
            state,
            curves,
            finals,
        })
    })?;

    let completed: Vec<&SearchSeed> = runs.iter().filter_map(|r| r.value.as_ref()).collect();
    let counts: Vec<SelectionRow> = search_cfg
        .candidate_groups
        .iter()
        .map(|g| SelectionRow {
            group: g.name.clone(),
            selected: completed
                .iter()
                .filter(|s| g.members.iter().all(|m| s.best.contains(m)))
                .count(),
            accepted: completed
                .iter()
                .filter(|s| s.state.trace.iter().any(|e| e.accepted && e.group == g.name))
                .count(),
            runs: completed.len(),
        })
        .collect();
    write_rows(&run_dir.join("selection-counts.csv"), &counts)?;
    let series = series_from(&runs, &labels, |v, label| {
        v.curves.iter().find(|(l, _)| l == label).map(|(_, c)| c.clone())
    });
    let finals = collect_finals(&runs, &labels, |v| &v.finals);
    let metas = runs.iter().map(|r| r.meta.clone()).collect();
    let record = finish_run(&run_dir, config, Command::Search, metas, series, &finals, started)?;
    Ok((record, runs.into_iter().map(|r| r.value).collect()))
}

/// Result of one seed of `permtest`: one report per dropout rate.
#[derive(Clone, Debug)]
pub struct PermtestSeed {
    pub reports: Vec<ImportanceReport>,
    pub aux_finals: Vec<(String, f64)>,
    pub curves: Vec<(String, Vec<(usize, f64)>)>,
}

pub fn rate_label(d: f64) -> String {
    format!("d={d}")
}

#[derive(Serialize)]
struct ImportanceSummaryRow {
    dropout_rate: f64,
    channel: String,
    mean_importance: f64,
    stderr: f64,
    essential: usize,
    neutral: usize,
    malicious: usize,
}

/// Trains auxiliary dropout models for every rate and seed and reports
/// channel importances.
pub fn run_permtest_cmd(config: &ExperimentConfig, force: bool) -> Result<(RunRecord, Vec<Option<PermtestSeed>>)> {
    config.validate(Command::Permtest)?;
    let started = Instant::now();
    let run_dir = config.run_dir(Command::Permtest)?;
    prepare_run_dir(&run_dir, force)?;
    let train_cfg = config.train_config()?;
    let steps = config.steps()?;
    let space = config.permtest_space()?;
    let rates = config.dropout_rates();
    let labels: Vec<String> = rates.iter().map(|&d| rate_label(d)).collect();
    let runs = run_seeds(config, |index, seed| {
        let t = Instant::now();
        let mut env = config.build_env()?;
        let dir = seed_dir(&run_dir, index)?;
        let mut out = PermtestSeed {
            reports: Vec::new(),
            aux_finals: Vec::new(),
            curves: Vec::new(),
        };
        let mut rows = Vec::new();
        for (&d, label) in rates.iter().zip(&labels) {
            let pcfg = PermTestConfig {
                dropout_rate: d,
                ..config.permtest.clone()
            };
            let (report, model) = run_permtest(env.as_mut(), &space, &train_cfg, &pcfg, steps, seed)?;
            rows.extend(model.reward_history.iter().map(|&(step, ret)| CurveRow {
                series: label.clone(),
                step,
                ret,
            }));
            let aux_steps = pcfg.aux_train_steps.unwrap_or(steps);
            out.curves.push((label.clone(), bucketize(&model.reward_history, config.bucket_steps, aux_steps)));
            out.aux_finals.push((label.clone(), final_mean(&model.reward_history, FINAL_EPISODES)));
            let name = if rates.len() == 1 {
                "importance.csv".to_string()
            } else {
                format!("importance-d{d}.csv")
            };
            let path = dir.join(name);
            std::fs::write(&path, report_csv(&report)).map_err(|e| Error::io(&path, e))?;
            out.reports.push(report);
        }
        if rates.len() > 1 {
            // the first rate doubles as the run's primary importance table
            let path = dir.join("importance.csv");
            std::fs::write(&path, report_csv(&out.reports[0])).map_err(|e| Error::io(&path, e))?;
        }
        let heat_rows: Vec<(String, &ImportanceReport)> = labels.iter().cloned().zip(out.reports.iter()).collect();
        let path = dir.join("heatmap.svg");
        std::fs::write(&path, heatmap_svg(&heat_rows)).map_err(|e| Error::io(&path, e))?;
        write_curves(&dir.join("curves.csv"), &rows)?;
        write_seed_meta(&dir, config, Command::Permtest, index, seed, t.elapsed().as_secs_f64(), serde_json::json!({
            "steps": steps,
            "channels": space.channel_names(),
            "base_scores": out.reports.iter().map(|r| r.base_score).collect::<Vec<_>>(),
            "reports": &out.reports,
        }))?;
        Ok(out)
    })?;

    let completed: Vec<&PermtestSeed> = runs.iter().filter_map(|r| r.value.as_ref()).collect();
    let mut summary = Vec::new();
    let mut mean_reports = Vec::new();
    for (k, &d) in rates.iter().enumerate() {
        let mut scores = Vec::new();
        for name in space.channel_names() {
            let entries: Vec<_> = completed.iter().filter_map(|s| s.reports[k].get(&name)).collect();
            let imps: Vec<f64> = entries.iter().map(|e| e.importance).collect();
            let (m, se) = mean_stderr(&imps);
            let count = |v: Verdict| entries.iter().filter(|e| e.verdict == v).count();
            summary.push(ImportanceSummaryRow {
                dropout_rate: d,
                channel: name.clone(),
                mean_importance: m,
                stderr: se,
                essential: count(Verdict::Essential),
                neutral: count(Verdict::Neutral),
                malicious: count(Verdict::Malicious),
            });
            scores.push((name, m));
        }
        // synthetic report carrying the mean importances, for the heatmap
        let mut r = ImportanceReport::from_scores(1.0, &[], d, config.permtest.keep_threshold, config.root_seed);
        for (name, imp) in scores {
            r.channels.push(crate::permtest::ChannelImportance {
                verdict: crate::permtest::verdict(imp, config.permtest.keep_threshold),
                channel: name,
                score: f64::NAN,
                importance: imp,
            });
        }
        mean_reports.push(r);
    }
    write_rows(&run_dir.join("importance-summary.csv"), &summary)?;
    let heat_rows: Vec<(String, &ImportanceReport)> = labels.iter().cloned().zip(mean_reports.iter()).collect();
    let path = run_dir.join("heatmap.svg");
    std::fs::write(&path, heatmap_svg(&heat_rows)).map_err(|e| Error::io(&path, e))?;

    let series = series_from(&runs, &labels, |v, label| {
        v.curves.iter().find(|(l, _)| l == label).map(|(_, c)| c.clone())
    });
    let finals = collect_finals(&runs, &labels, |v| &v.aux_finals);
    let metas = runs.iter().map(|r| r.meta.clone()).collect();
    let record = finish_run(&run_dir, config, Command::Permtest, metas, series, &finals, started)?;
    Ok((record, runs.into_iter().map(|r| r.value).collect()))
}

fn find_records(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    let mut children: Vec<PathBuf> = entries.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    children.sort();
    for c in children {
        if c.is_dir() && c.file_name().is_some_and(|n| n != "report") {
            find_records(&c, out);
        } else if c.file_name().is_some_and(|n| n == "record.json") {
            out.push(c);
        }
    }
}

/// Collects every `record.json` under `dir` into `dir/report/`: one
/// `aggregate.csv` and an overlay plot with one band per run and series.
/// Unreadable records are skipped with a warning.
pub fn run_report(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    find_records(dir, &mut paths);
    let mut series = Vec::new();
    for path in &paths {
        let record: RunRecord = match std::fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
        {
            Ok(r) => r,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let missing = record.seeds.len() - record.completed();
        for mut s in record.series {
            s.label = format!("{}/{}/{}:{}", record.command, record.env, record.config_hash, s.label);
            if missing > 0 {
                log::warn!("{}: {missing} of {} seeds missing", s.label, record.seeds.len());
            }
            series.push(s);
        }
    }
    if series.is_empty() {
        return Err(Error::Config(format!("no run records found under {}", dir.display())));
    }
    let out_dir = dir.join("report");
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let agg = out_dir.join("aggregate.csv");
    write_aggregate(&agg, &series)?;
    let bands: Vec<plot::BandSeries> = series
        .iter()
        .map(|s| plot::BandSeries {
            label: format!("{} (n={})", s.label, s.per_seed.len()),
            points: &s.aggregate,
        })
        .collect();
    let svg = plot::band_plot("learning curves", "environment steps", "episode return", &bands);
    let plot_path = out_dir.join("comparison.svg");
    std::fs::write(&plot_path, svg).map_err(|e| Error::io(&plot_path, e))?;
    Ok(vec![agg, plot_path])
}
