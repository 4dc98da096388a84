//! Run configuration (TOML), validation report, and problem construction.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{AggregationWeights, BaselineKind};
use crate::data::{self, PartitionSpec, SyntheticSpec};
use crate::edge::{BatchMode, EdgeHyper};
use crate::error::{Error, Result};
use crate::latency::{EpochScaling, LatencyDistribution};
use crate::metrics::TestSets;
use crate::model::{BoxSet, Device, FedProblem, LocalDataset, LossKind, ModelVec, Sample};
use crate::protocol::{
    ActivationSampler, Algorithm, ProtocolKind, SelectionMode, SimConfig, SyncAggregation,
};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Fedbcd,
    FedbcdI,
    Fedavg,
    Fedprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    SyncCloud,
    AsyncCloudSimple,
    AsyncCloudRigorous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    LeastSquares,
    Logistic,
    MultinomialLogistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: ProtocolName,
    /// Servers per asynchronous aggregation; must be unset for `sync_cloud`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    pub sync_aggregation: SyncAggregation,
    /// Cloud iterations per round.
    pub cloud_steps: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            kind: ProtocolName::SyncCloud,
            b: None,
            sync_aggregation: SyncAggregation::Global,
            cloud_steps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub servers: usize,
    pub devices_per_server: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            servers: 2,
            devices_per_server: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub loss: LossName,
    /// Number of classes for multinomial logistic regression.
    pub classes: usize,
    /// Raw synthetic features (a bias feature is appended).
    pub features: usize,
    pub separation: f64,
    pub noise: f64,
    /// Training data from CSV instead of the synthetic generator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
    pub diversity: usize,
    pub samples_per_device: usize,
    pub test_samples_per_device: usize,
    /// Seed for data generation; the run seed is used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    pub box_lower: f64,
    pub box_upper: f64,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            loss: LossName::MultinomialLogistic,
            classes: 4,
            features: 8,
            separation: 1.5,
            noise: 1.0,
            train_csv: None,
            test_csv: None,
            diversity: 2,
            samples_per_device: 60,
            test_samples_per_device: 40,
            data_seed: None,
            box_lower: -2.0,
            box_upper: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub eta_x: f64,
    pub zeta: f64,
    pub eta_z: f64,
    /// Penalty weight of every device; defaults to 1 (0.2 for `fedbcd_i`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub mu: f64,
    pub batch_size: usize,
    pub exact_gradients: bool,
    pub epochs_min: usize,
    pub epochs_max: usize,
    pub offline_budget: u32,
    /// `|Q_n^(t)|`.
    pub active_per_server: usize,
    /// `|Q~_n^(t)|` for `fedbcd_i`.
    pub available_per_server: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_period: Option<usize>,
    pub selection: SelectionMode,
    pub fedavg_weights: AggregationWeights,
}

impl Default for HyperSection {
    fn default() -> Self {
        HyperSection {
            eta_x: 0.005,
            zeta: 0.9,
            eta_z: 0.5,
            gamma: None,
            mu: 5.0,
            batch_size: 32,
            exact_gradients: false,
            epochs_min: 1,
            epochs_max: 5,
            offline_budget: 4,
            active_per_server: 3,
            available_per_server: 8,
            coverage_period: None,
            selection: SelectionMode::ShortestArrival,
            fedavg_weights: AggregationWeights::DataSize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySection {
    pub arrival: LatencyDistribution,
    pub process: LatencyDistribution,
    pub epoch_scaling: EpochScaling,
}

impl Default for LatencySection {
    fn default() -> Self {
        LatencySection {
            arrival: LatencyDistribution::Exponential { mean: 2.0 },
            process: LatencyDistribution::Exponential { mean: 1.0 },
            epoch_scaling: EpochScaling::SingleDraw,
        }
    }
}

/// Complete description of an experiment. Every field has a default, so an
/// empty file is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: AlgorithmName,
    pub rounds: u64,
    pub seeds: Vec<u64>,
    pub protocol: ProtocolSection,
    pub topology: TopologySection,
    pub problem: ProblemSection,
    pub hyper: HyperSection,
    pub latency: LatencySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: AlgorithmName::Fedbcd,
            rounds: 100,
            seeds: vec![1],
            protocol: ProtocolSection::default(),
            topology: TopologySection::default(),
            problem: ProblemSection::default(),
            hyper: HyperSection::default(),
            latency: LatencySection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    fn warn(&mut self, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Warning,
            message: message.into(),
        });
    }

    fn error(&mut self, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Error,
            message: message.into(),
        });
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    /// Turns the first error finding into an [`Error::Config`].
    pub fn into_result(self) -> Result<Vec<Finding>> {
        match self.findings.iter().find(|f| f.severity == Severity::Error) {
            Some(f) => Err(Error::Config(f.message.clone())),
            None => Ok(self.findings),
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "ok: no findings");
        }
        for x in &self.findings {
            let tag = match x.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            writeln!(f, "{tag}: {}", x.message)?;
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Data paths are relative to the configuration file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.problem.train_csv, &mut cfg.problem.test_csv]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn gamma(&self) -> f64 {
        self.hyper.gamma.unwrap_or(match self.algorithm {
            AlgorithmName::FedbcdI => 0.2,
            _ => 1.0,
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.problem.loss {
            LossName::LeastSquares => LossKind::LeastSquares,
            LossName::Logistic => LossKind::Logistic,
            LossName::MultinomialLogistic => LossKind::MultinomialLogistic {
                classes: self.problem.classes,
            },
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self.algorithm {
            AlgorithmName::Fedbcd => Algorithm::FedBcd,
            AlgorithmName::FedbcdI => Algorithm::FedBcdI,
            AlgorithmName::Fedavg => Algorithm::Baseline(BaselineKind::FedAvg),
            AlgorithmName::Fedprox => {
                Algorithm::Baseline(BaselineKind::FedProx { mu: self.hyper.mu })
            }
        }
    }

    pub fn protocol_kind(&self) -> Result<ProtocolKind> {
        let b = || {
            self.protocol
                .b
                .ok_or_else(|| Error::Config("asynchronous protocols need `protocol.b`".into()))
        };
        Ok(match self.protocol.kind {
            ProtocolName::SyncCloud => ProtocolKind::SyncCloud,
            ProtocolName::AsyncCloudSimple => ProtocolKind::AsyncCloudSimple { b: b()? },
            ProtocolName::AsyncCloudRigorous => ProtocolKind::AsyncCloudRigorous { b: b()? },
        })
    }

    pub fn edge_hyper(&self) -> EdgeHyper {
        EdgeHyper {
            eta_x: self.hyper.eta_x,
            zeta: self.hyper.zeta,
            epochs_min: self.hyper.epochs_min,
            epochs_max: self.hyper.epochs_max,
            batch: if self.hyper.exact_gradients {
                BatchMode::Exact
            } else {
                BatchMode::Minibatch(self.hyper.batch_size)
            },
            offline_budget: self.hyper.offline_budget,
        }
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        Ok(SimConfig {
            algorithm: self.algorithm(),
            protocol: self.protocol_kind()?,
            sync_aggregation: self.protocol.sync_aggregation,
            edge: self.edge_hyper(),
            eta_z: self.hyper.eta_z,
            cloud_steps: self.protocol.cloud_steps,
            sampler: ActivationSampler {
                per_server_count: self.hyper.active_per_server,
                available_count: self.hyper.available_per_server,
                coverage_period: self.hyper.coverage_period,
                mode: self.hyper.selection,
            },
            arrival: self.latency.arrival,
            process: self.latency.process,
            epoch_scaling: self.latency.epoch_scaling,
            aggregation_weights: self.hyper.fedavg_weights,
            seed,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.topology.servers * self.topology.devices_per_server
    }

    /// Structural checks (errors) and checks of the convergence assumptions
    /// that do not need the data (warnings).
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let h = &self.hyper;
        let t = &self.topology;
        let p = &self.problem;
        if self.seeds.is_empty() {
            r.error("at least one seed is required");
        }
        if t.servers == 0 || t.devices_per_server == 0 {
            r.error("topology needs at least one server and one device per server");
        }
        match (self.protocol.kind, self.protocol.b) {
            (ProtocolName::SyncCloud, Some(_)) => {
                r.error("`protocol.b` must not be set for sync_cloud")
            }
            (ProtocolName::SyncCloud, None) => {}
            (_, None) => r.error("asynchronous protocols need `protocol.b`"),
            (_, Some(b)) if b == 0 || b > t.servers => {
                r.error(format!("B = {b} must lie in 1..={}", t.servers))
            }
            _ => {}
        }
        if self.protocol.cloud_steps == 0 {
            r.error("`protocol.cloud_steps` must be at least 1");
        }
        if matches!(
            self.algorithm,
            AlgorithmName::Fedavg | AlgorithmName::Fedprox
        ) && self.protocol.kind != ProtocolName::SyncCloud
        {
            r.error("FedAvg and FedProx run only under sync_cloud");
        }
        if !(p.box_lower < p.box_upper && p.box_lower.is_finite() && p.box_upper.is_finite()) {
            r.error("box bounds must be finite with lower < upper");
        } else if !(p.box_lower <= 0.0 && 0.0 <= p.box_upper) {
            r.error("the box must contain the zero initialization");
        }
        let classes = self.loss_kind().num_classes();
        if self.problem.loss == LossName::MultinomialLogistic && p.classes < 2 {
            r.error("multinomial logistic regression needs at least 2 classes");
        }
        if p.diversity == 0 || p.diversity > classes {
            r.error(format!(
                "diversity {} must lie in 1..={classes}",
                p.diversity
            ));
        }
        if p.samples_per_device < p.diversity.max(1) {
            r.error("samples_per_device must be at least the diversity");
        }
        if p.train_csv.is_none() && p.features == 0 {
            r.error("synthetic data needs at least one feature");
        }
        if !(h.eta_x > 0.0 && h.eta_x.is_finite()) {
            r.error("eta_x must be positive");
        }
        if !(0.0..1.0).contains(&h.zeta) {
            r.error("zeta must lie in [0, 1)");
        }
        if !(h.eta_z >= 0.0 && h.eta_z.is_finite()) {
            r.error("eta_z must be nonnegative");
        }
        let gamma = self.gamma();
        if !(gamma > 0.0 && gamma.is_finite()) {
            r.error("gamma must be positive");
        }
        if self.algorithm == AlgorithmName::FedbcdI && gamma > 1.0 {
            r.error(format!(
                "fedbcd_i uses gamma as its adjustment step; gamma = {gamma} must be <= 1"
            ));
        }
        if self.algorithm == AlgorithmName::Fedprox && !(h.mu > 0.0 && h.mu.is_finite()) {
            r.error("FedProx needs mu > 0");
        }
        if !h.exact_gradients && h.batch_size == 0 {
            r.error("batch_size must be at least 1");
        }
        if h.epochs_min == 0 || h.epochs_min > h.epochs_max {
            r.error("epoch range must satisfy 1 <= epochs_min <= epochs_max");
        }
        if h.active_per_server > t.devices_per_server {
            r.error(format!(
                "active_per_server = {} exceeds the {} devices of a server",
                h.active_per_server, t.devices_per_server
            ));
        }
        if self.algorithm == AlgorithmName::FedbcdI {
            if h.available_per_server < h.active_per_server {
                r.error("available_per_server must be at least active_per_server");
            }
            if h.available_per_server > t.devices_per_server {
                r.warn(format!(
                    "available_per_server = {} is capped at {} devices per server",
                    h.available_per_server, t.devices_per_server
                ));
            }
        }
        match h.coverage_period {
            Some(0) => r.error("coverage_period must be at least 1"),
            Some(period) if h.active_per_server * period < t.devices_per_server => {
                r.error(format!(
                    "{} activations per round cannot cover {} devices every {period} rounds",
                    h.active_per_server, t.devices_per_server
                ))
            }
            None if h.active_per_server < t.devices_per_server => r.warn(
                "coverage_period is unset: devices are not guaranteed to be activated periodically",
            ),
            _ => {}
        }
        // Feasibility of the cloud iterates needs eta_z * sum(gamma) <= 1 over
        // the devices entering one penalty step.
        let penalty_devices = match (self.protocol.kind, self.protocol.sync_aggregation) {
            (ProtocolName::SyncCloud, SyncAggregation::Global) => self.num_devices(),
            _ => t.devices_per_server,
        };
        let load = h.eta_z * gamma * penalty_devices as f64;
        if load > 1.0 {
            r.warn(format!(
                "eta_z * gamma * {penalty_devices} devices = {load} > 1: server models may leave the box"
            ));
        }
        if self.protocol.kind == ProtocolName::AsyncCloudSimple {
            r.warn("the simple asynchronous protocol uses a time-varying server stepsize");
        }
        r
    }

    /// [`validate`](Self::validate) plus checks that need the generated data.
    pub fn validate_with_problem(&self, problem: &FedProblem) -> ValidationReport {
        let mut r = self.validate();
        if r.has_errors() {
            return r;
        }
        let bound = EdgeHyper::stepsize_bound(problem);
        if self.hyper.eta_x > bound {
            r.warn(format!(
                "eta_x = {} exceeds the smoothness bound 1/(L + gamma) = {bound:.4e}",
                self.hyper.eta_x
            ));
        }
        r
    }

    /// Builds the problem and test sets for `seed`.
    pub fn build_problem(&self, seed: u64) -> Result<(FedProblem, TestSets)> {
        self.validate().into_result()?;
        let kind = self.loss_kind();
        let devices = self.num_devices();
        let data_seed = self.problem.data_seed.unwrap_or(seed);
        let spec = PartitionSpec {
            diversity: self.problem.diversity,
            samples_per_device: self.problem.samples_per_device,
        };
        let test_spec = PartitionSpec {
            diversity: self.problem.diversity,
            samples_per_device: self.problem.test_samples_per_device,
        };
        let (train_pool, test_pool) = match &self.problem.train_csv {
            Some(path) => {
                let train = data::load_csv(path, kind)?;
                let test = match &self.problem.test_csv {
                    Some(t) => data::load_csv(t, kind)?,
                    None => Vec::new(),
                };
                (train, test)
            }
            None => {
                let synth = |per_class| SyntheticSpec {
                    kind,
                    features: self.problem.features,
                    separation: self.problem.separation,
                    noise: self.problem.noise,
                    samples_per_class: per_class,
                };
                // Train and test share the class centers: generate one pool
                // and split it by position within each class.
                let train_need = max_class_demand(devices, &spec, kind.num_classes());
                let test_need = if kind.is_classification() {
                    max_class_demand(devices, &test_spec, kind.num_classes())
                } else {
                    0
                };
                let pool = data::synthetic_pool(
                    &synth(train_need + test_need),
                    &mut stream(data_seed, Domain::Data, 0, 0),
                )?;
                split_pool(pool, kind, train_need)
            }
        };
        let parts = data::partition_by_diversity(
            &train_pool,
            kind,
            devices,
            &spec,
            &mut stream(data_seed, Domain::Data, 0, 1),
        )?;
        let train = data::build_datasets(&train_pool, kind, &parts)?;
        let gamma = self.gamma();
        let dps = self.topology.devices_per_server;
        let servers = (0..self.topology.servers)
            .map(|n| (n * dps..(n + 1) * dps).collect())
            .collect();
        let feasible = BoxSet::new(self.problem.box_lower, self.problem.box_upper)?;
        let problem = FedProblem::new(
            feasible,
            servers,
            train
                .into_iter()
                .map(|dataset| Device { dataset, gamma })
                .collect(),
        )?;
        let tests = if kind.is_classification()
            && !test_pool.is_empty()
            && test_spec.samples_per_device > 0
        {
            let parts = data::partition_by_diversity(
                &test_pool,
                kind,
                devices,
                &test_spec,
                &mut stream(data_seed, Domain::Data, 1, 1),
            )?;
            let personal = data::build_datasets(&test_pool, kind, &parts)?;
            let union: Vec<Sample> = personal
                .iter()
                .flat_map(|d| d.samples().iter().cloned())
                .collect();
            TestSets {
                global: Some(LocalDataset::new(kind, union)?),
                personal,
            }
        } else {
            TestSets::default()
        };
        Ok((problem, tests))
    }

    /// Zero initialization of every model.
    pub fn initial_model(&self, problem: &FedProblem) -> ModelVec {
        ModelVec::zeros(problem.dim())
    }
}

fn max_class_demand(devices: usize, spec: &PartitionSpec, classes: usize) -> usize {
    let mut need = vec![0usize; classes];
    for d in 0..devices {
        for (j, c) in data::device_classes(d, spec.diversity, classes)
            .into_iter()
            .enumerate()
        {
            need[c] += spec.samples_per_device / spec.diversity
                + usize::from(j < spec.samples_per_device % spec.diversity);
        }
    }
    need.into_iter().max().unwrap_or(0)
}

/// First `train_per_class` samples of every class go to training.
fn split_pool(
    pool: Vec<Sample>,
    kind: LossKind,
    train_per_class: usize,
) -> (Vec<Sample>, Vec<Sample>) {
    let mut seen = vec![0usize; kind.num_classes()];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in pool {
        let c = kind.class_of(s.label);
        if seen[c] < train_per_class {
            train.push(s);
        } else {
            test.push(s);
        }
        seen[c] += 1;
    }
    (train, test)
}
