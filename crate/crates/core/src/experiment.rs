//! Experiment orchestration and output files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Finding, RunConfig};
use crate::error::{Error, Result};
use crate::latency::{latency_ratio_asymptotic, latency_ratios, LatencyDistribution};
use crate::metrics::{MetricsRecord, RunningMeans, CSV_HEADER};
use crate::protocol::{RoundEvent, Simulator};
use crate::rng::{stream, Domain};

/// Full trace of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// `rounds + 1` records, starting with the initial state.
    pub records: Vec<MetricsRecord>,
    pub events: Vec<RoundEvent>,
}

impl SeedRun {
    pub fn running_means(&self) -> RunningMeans {
        RunningMeans::trajectory(&self.records)
            .last()
            .copied()
            .unwrap_or_default()
    }
}

/// Simulator for one seed of `cfg`, before its first round.
pub fn build_simulator(cfg: &RunConfig, seed: u64) -> Result<Simulator> {
    let (problem, tests) = cfg.build_problem(seed)?;
    let sim_cfg = cfg.sim_config(seed)?;
    let x0 = cfg.initial_model(&problem);
    Simulator::new(problem, sim_cfg, x0, tests)
}

/// Runs `cfg.rounds` rounds for one seed, in memory.
pub fn run_simulation(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let mut sim = build_simulator(cfg, seed)?;
    let mut records = Vec::with_capacity(cfg.rounds as usize + 1);
    records.push(sim.initial_record()?);
    let mut events = Vec::new();
    for _ in 0..cfg.rounds {
        let out = sim.step()?;
        records.push(out.record);
        events.extend(out.events);
    }
    Ok(SeedRun {
        seed,
        records,
        events,
    })
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_ndjson<W: Write>(events: &[RoundEvent], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub metrics_file: String,
    pub events_file: String,
    pub total_sim_time: f64,
    pub final_metrics: MetricsRecord,
    pub running_means: RunningMeans,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedSummary>,
    pub warnings: Vec<Finding>,
    pub config: RunConfig,
}

/// Runs every seed (in parallel) and writes `metrics_<seed>.csv`,
/// `events_<seed>.ndjson` and `summary.json` under `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    let warnings = cfg.validate().into_result()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let per_seed: Vec<SeedSummary> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedSummary> {
            let run = run_simulation(cfg, seed)?;
            let metrics_file = format!("metrics_{seed}.csv");
            let events_file = format!("events_{seed}.ndjson");
            write_metrics_csv(&run.records, create(&out_dir.join(&metrics_file))?)?;
            write_events_ndjson(&run.events, create(&out_dir.join(&events_file))?)?;
            let last = run.records.last().cloned().expect("initial record");
            Ok(SeedSummary {
                seed,
                metrics_file,
                events_file,
                total_sim_time: last.sim_time,
                running_means: run.running_means(),
                final_metrics: last,
            })
        })
        .collect::<Result<_>>()?;
    let summary = RunSummary {
        seeds: cfg.seeds.clone(),
        per_seed,
        warnings,
        config: cfg.clone(),
    };
    let mut f = BufWriter::new(create(&out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(summary)
}

fn create(path: &PathBuf) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Rows requested from a latency study.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyAxis {
    /// Explicit numbers of aggregated servers.
    Servers(Vec<usize>),
    /// Fractions `beta = B / N`, rounded to the nearest `B` in `1..=N`.
    Fractions(Vec<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub b: usize,
    pub beta: f64,
    pub empirical: f64,
    pub std_error: f64,
    /// Large-`N` quantile approximation (exactly 1 at `B = N`).
    pub asymptotic: f64,
    pub abs_gap: f64,
    /// `beta` is one of the balanced choices 0.3 or 0.5.
    pub highlighted: bool,
}

/// Empirical and approximate latency ratios for several `B` at fixed `N`,
/// all estimated from the same draws.
pub fn run_latency_study(
    dist: &LatencyDistribution,
    n: usize,
    axis: &StudyAxis,
    trials: usize,
    seed: u64,
) -> Result<Vec<StudyRow>> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let bs: Vec<usize> = match axis {
        StudyAxis::Servers(bs) => bs.clone(),
        StudyAxis::Fractions(betas) => betas
            .iter()
            .map(|&beta| {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "beta = {beta} outside (0, 1]"
                    )));
                }
                Ok(((beta * n as f64).round() as usize).clamp(1, n))
            })
            .collect::<Result<_>>()?,
    };
    let est = latency_ratios(
        dist,
        n,
        &bs,
        trials,
        &mut stream(seed, Domain::Study, 0, n as u64),
    )?;
    bs.iter()
        .zip(est)
        .map(|(&b, e)| {
            let beta = b as f64 / n as f64;
            let asymptotic = if b == n || n < 2 {
                1.0
            } else {
                latency_ratio_asymptotic(dist, n, beta)?
            };
            Ok(StudyRow {
                b,
                beta,
                empirical: e.mean,
                std_error: e.std_error,
                asymptotic,
                abs_gap: (e.mean - asymptotic).abs(),
                highlighted: (beta - 0.3).abs() < 1e-9 || (beta - 0.5).abs() < 1e-9,
            })
        })
        .collect()
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "b",
        "beta",
        "empirical",
        "std_error",
        "asymptotic",
        "abs_gap",
        "highlighted",
    ])?;
    for r in rows {
        w.write_record([
            r.b.to_string(),
            r.beta.to_string(),
            r.empirical.to_string(),
            r.std_error.to_string(),
            r.asymptotic.to_string(),
            r.abs_gap.to_string(),
            r.highlighted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
