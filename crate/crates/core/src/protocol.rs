//! Round-by-round simulation of the cloud protocols.
//!
//! A round has a response-and-update phase (devices are activated, train and
//! upload) followed by an aggregation phase at the coordinator. The
//! synchronous protocol waits for every server; the asynchronous protocols
//! aggregate the first `B` servers to report. Simulated time advances by the
//! latency of the aggregation that closes the round; aggregation compute and
//! server-to-server transfer are free.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{self, AggregationWeights, BaselineKind};
use crate::cloud::{
    consensus_mean, dgd_step, server_penalty_step, sync_update, CloudState, MixingMatrix,
    ServerRole,
};
use crate::edge::{fedbcd_i_adjust, fedbcd_i_offline, run_epochs, EdgeHyper, EdgeState};
use crate::error::{Error, Result};
use crate::latency::{sample_device_latency, DeviceLatency, EpochScaling, LatencyDistribution};
use crate::metrics::{compute_record, MetricsRecord, TestSets};
use crate::model::{FedProblem, ModelVec};
use crate::rng::{stream, Domain, SimRng};

/// Communication protocol between the cloud servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Wait for all servers every round.
    SyncCloud,
    /// Aggregate the first `b` servers; the others keep their models.
    AsyncCloudSimple { b: usize },
    /// Aggregate the first `b` servers; the others take a local penalty step
    /// from their own model.
    AsyncCloudRigorous { b: usize },
}

impl ProtocolKind {
    pub fn is_sync(&self) -> bool {
        matches!(self, ProtocolKind::SyncCloud)
    }

    /// Servers per aggregation (all of them for the synchronous protocol).
    pub fn servers_per_round(&self, servers: usize) -> usize {
        match *self {
            ProtocolKind::SyncCloud => servers,
            ProtocolKind::AsyncCloudSimple { b } | ProtocolKind::AsyncCloudRigorous { b } => b,
        }
    }
}

/// Cloud update used by the synchronous protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncAggregation {
    /// One shared model updated with the penalty gradients of all devices.
    #[default]
    Global,
    /// DGD with the uniform averaging matrix.
    UniformMixing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    FedBcd,
    FedBcdI,
    Baseline(BaselineKind),
}

/// How the active devices of a server are chosen beyond coverage constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Uniform,
    /// Devices with the smallest arrival draws this round.
    #[default]
    ShortestArrival,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationSampler {
    /// `|Q_n^(t)|`, capped at `|Q_n|`.
    pub per_server_count: usize,
    /// `|Q~_n^(t)|`: devices training offline or online in the intermittent
    /// variant, capped at `|Q_n|`.
    pub available_count: usize,
    /// When set, every device is activated at least once in any window of
    /// this many consecutive rounds.
    pub coverage_period: Option<usize>,
    pub mode: SelectionMode,
}

impl ActivationSampler {
    pub fn validate(&self, problem: &FedProblem) -> Result<()> {
        if let Some(p) = self.coverage_period {
            if p == 0 {
                return Err(Error::InvalidHyper(
                    "coverage period must be at least 1".into(),
                ));
            }
            for (n, q) in problem.servers().iter().enumerate() {
                let count = self.per_server_count.min(q.len());
                if count * p < q.len() {
                    return Err(Error::InvalidHyper(format!(
                        "server {n}: {count} activations per round cannot cover {} devices every {p} rounds",
                        q.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub algorithm: Algorithm,
    pub protocol: ProtocolKind,
    pub sync_aggregation: SyncAggregation,
    pub edge: EdgeHyper,
    pub eta_z: f64,
    /// Cloud iterations per round.
    pub cloud_steps: usize,
    pub sampler: ActivationSampler,
    pub arrival: LatencyDistribution,
    pub process: LatencyDistribution,
    pub epoch_scaling: EpochScaling,
    pub aggregation_weights: AggregationWeights,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self, problem: &FedProblem) -> Result<()> {
        self.edge.validate()?;
        self.sampler.validate(problem)?;
        if !(self.eta_z >= 0.0 && self.eta_z.is_finite()) {
            return Err(Error::InvalidHyper(format!(
                "eta_z = {} must be >= 0",
                self.eta_z
            )));
        }
        if self.cloud_steps == 0 {
            return Err(Error::InvalidHyper(
                "at least one cloud step per round is required".into(),
            ));
        }
        let servers = problem.num_servers();
        let b = self.protocol.servers_per_round(servers);
        if b == 0 || b > servers {
            return Err(Error::InvalidHyper(format!(
                "B = {b} must lie in 1..={servers}"
            )));
        }
        match self.algorithm {
            Algorithm::Baseline(kind) => {
                kind.validate()?;
                if !self.protocol.is_sync() {
                    return Err(Error::InvalidHyper(
                        "FedAvg and FedProx run only under the synchronous protocol".into(),
                    ));
                }
            }
            Algorithm::FedBcdI => {
                if self.sampler.available_count < self.sampler.per_server_count {
                    return Err(Error::InvalidHyper(format!(
                        "available count {} is smaller than the activation count {}",
                        self.sampler.available_count, self.sampler.per_server_count
                    )));
                }
                if let Some(i) = (0..problem.num_devices()).find(|&i| problem.gamma(i) > 1.0) {
                    return Err(Error::InvalidHyper(format!(
                        "device {i}: gamma = {} must lie in (0, 1] for the adjustment step",
                        problem.gamma(i)
                    )));
                }
            }
            Algorithm::FedBcd => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    DeviceRequest,
    DeviceUpload,
    ServerReady,
    CoordinatorAggregate,
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Actor {
    Device(usize),
    Server(usize),
    Coordinator,
}

impl Serialize for Actor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Actor::Device(i) => s.serialize_str(&format!("device:{i}")),
            Actor::Server(n) => s.serialize_str(&format!("server:{n}")),
            Actor::Coordinator => s.serialize_str("coordinator"),
        }
    }
}

/// Timestamped step of the simulated protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundEvent {
    pub round: u64,
    pub kind: EventKind,
    pub actor: Actor,
    pub sim_time: f64,
}

/// Per-device randomness of one round.
#[derive(Debug, Clone)]
pub struct DeviceDraw {
    pub epochs: usize,
    pub latency: DeviceLatency,
}

/// Draws the epoch counts and latencies of every device for `round`, and
/// returns the edge streams positioned right after the epoch draw.
pub fn draw_devices(
    cfg: &SimConfig,
    devices: usize,
    round: u64,
) -> Result<(Vec<DeviceDraw>, Vec<SimRng>)> {
    let mut draws = Vec::with_capacity(devices);
    let mut rngs = Vec::with_capacity(devices);
    for i in 0..devices {
        let mut edge_rng = stream(cfg.seed, Domain::Edge, round, i as u64);
        let epochs = cfg.edge.draw_epochs(&mut edge_rng);
        let mut lat_rng = stream(cfg.seed, Domain::Latency, round, i as u64);
        let latency = sample_device_latency(
            &cfg.arrival,
            &cfg.process,
            epochs,
            cfg.epoch_scaling,
            &mut lat_rng,
        )?;
        draws.push(DeviceDraw { epochs, latency });
        rngs.push(edge_rng);
    }
    Ok((draws, rngs))
}

/// Chooses `Q_n^(t)` for one server. `last_active` is indexed by device id.
/// Devices whose coverage deadline cannot otherwise be met are taken first,
/// earliest deadline first; the remaining slots follow `mode`.
pub fn select_devices(
    sampler: &ActivationSampler,
    devices: &[usize],
    round: u64,
    last_active: &[Option<u64>],
    draws: &[DeviceDraw],
    rng: &mut SimRng,
) -> Vec<usize> {
    let count = sampler.per_server_count.min(devices.len());
    if count == devices.len() {
        let mut all = devices.to_vec();
        all.sort_unstable();
        return all;
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    if let Some(p) = sampler.coverage_period {
        let p = p as i64;
        let mut by_deadline: Vec<(i64, usize)> = devices
            .iter()
            .map(|&i| (last_active[i].map_or(-1, |l| l as i64) + p, i))
            .collect();
        by_deadline.sort_unstable();
        let t = round as i64;
        let forced = by_deadline
            .iter()
            .enumerate()
            .map(|(k, &(d, _))| (k as i64 + 1) - count as i64 * (d - t))
            .max()
            .unwrap_or(0)
            .clamp(0, count as i64) as usize;
        chosen.extend(by_deadline[..forced].iter().map(|&(_, i)| i));
    }
    let mut rest: Vec<usize> = devices
        .iter()
        .copied()
        .filter(|i| !chosen.contains(i))
        .collect();
    rest.sort_unstable();
    let need = count - chosen.len();
    match sampler.mode {
        SelectionMode::Uniform => {
            chosen.extend(
                sample_indices(rng, rest.len(), need)
                    .into_iter()
                    .map(|k| rest[k]),
            );
        }
        SelectionMode::ShortestArrival => {
            rest.sort_by(|&a, &b| {
                draws[a]
                    .latency
                    .arrival
                    .total_cmp(&draws[b].latency.arrival)
                    .then(a.cmp(&b))
            });
            chosen.extend(&rest[..need]);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Adds `extra` devices of `devices` not already in `active`, uniformly at random.
fn extend_available(
    devices: &[usize],
    active: &[usize],
    extra: usize,
    rng: &mut SimRng,
) -> Vec<usize> {
    let mut rest: Vec<usize> = devices
        .iter()
        .copied()
        .filter(|i| !active.contains(i))
        .collect();
    rest.sort_unstable();
    let extra = extra.min(rest.len());
    let mut out = active.to_vec();
    out.extend(
        sample_indices(rng, rest.len(), extra)
            .into_iter()
            .map(|k| rest[k]),
    );
    out.sort_unstable();
    out
}

/// Latency of each server: the slowest of its active devices (zero when idle).
pub fn server_latencies(activations: &[Vec<usize>], draws: &[DeviceDraw]) -> Vec<f64> {
    activations
        .iter()
        .map(|q| {
            q.iter()
                .map(|&i| draws[i].latency.total())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Servers ordered by report time, ties broken by lower id.
pub fn arrival_order(server_latency: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..server_latency.len()).collect();
    order.sort_by(|&a, &b| {
        server_latency[a]
            .total_cmp(&server_latency[b])
            .then(a.cmp(&b))
    });
    order
}

/// Mutable simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub edges: Vec<EdgeState>,
    pub cloud: CloudState,
    /// Last model uploaded by each device, as held by its server.
    pub x_cache: Vec<ModelVec>,
    pub round: u64,
    pub sim_time: f64,
    /// Last round each device was in `Q_n^(t)`.
    pub last_active: Vec<Option<u64>>,
}

/// Everything observable about one simulated round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub record: MetricsRecord,
    pub events: Vec<RoundEvent>,
    /// `Q_n^(t)` per server.
    pub activations: Vec<Vec<usize>>,
    /// `Q~_n^(t)` per server (equal to the activations outside the
    /// intermittent variant).
    pub available: Vec<Vec<usize>>,
    pub server_latency: Vec<f64>,
    /// Aggregated servers in report order.
    pub aggregated: Vec<usize>,
    pub round_latency: f64,
    /// Server-to-server mixing realized by the aggregation.
    pub mixing: MixingMatrix,
}

/// Deterministic protocol simulator.
#[derive(Debug, Clone)]
pub struct Simulator {
    problem: FedProblem,
    cfg: SimConfig,
    tests: TestSets,
    state: SimState,
}

impl Simulator {
    /// Starts every device and server at `x0`, which must be feasible.
    pub fn new(problem: FedProblem, cfg: SimConfig, x0: ModelVec, tests: TestSets) -> Result<Self> {
        cfg.validate(&problem)?;
        x0.check_dim(problem.dim())?;
        if !problem.feasible_set().contains(&x0, 0.0) {
            return Err(Error::InvalidArgument(
                "initial model lies outside the feasible box".into(),
            ));
        }
        let n = problem.num_devices();
        let state = SimState {
            edges: vec![EdgeState::new(x0.clone()); n],
            cloud: CloudState::new(problem.num_servers(), x0.clone()),
            x_cache: vec![x0; n],
            round: 0,
            sim_time: 0.0,
            last_active: vec![None; n],
        };
        Ok(Simulator {
            problem,
            cfg,
            tests,
            state,
        })
    }

    pub fn problem(&self) -> &FedProblem {
        &self.problem
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Replaces the server models, e.g. to study consensus from a spread start.
    pub fn set_server_models(&mut self, z: Vec<ModelVec>) -> Result<()> {
        if z.len() != self.problem.num_servers() {
            return Err(Error::DimensionMismatch {
                expected: self.problem.num_servers(),
                actual: z.len(),
            });
        }
        for v in &z {
            v.check_dim(self.problem.dim())?;
        }
        self.state.cloud = CloudState::from_models(z);
        Ok(())
    }

    /// Metrics of the current state before any round has run.
    pub fn initial_record(&self) -> Result<MetricsRecord> {
        let z_bar = consensus_mean(&self.state.cloud);
        compute_record(
            &self.problem,
            self.state.round,
            self.state.sim_time,
            &self.edge_models(),
            &self.state.cloud,
            &z_bar,
            &self.tests,
        )
    }

    fn edge_models(&self) -> Vec<ModelVec> {
        self.state.edges.iter().map(|e| e.x_curr.clone()).collect()
    }

    /// Runs one round with sampled activations.
    pub fn step(&mut self) -> Result<RoundOutcome> {
        self.step_with(None)
    }

    /// Runs one round; `activations` overrides the sampler with explicit
    /// per-server device sets.
    pub fn step_with(&mut self, activations: Option<Vec<Vec<usize>>>) -> Result<RoundOutcome> {
        let t = self.state.round;
        let problem = &self.problem;
        let cfg = &self.cfg;
        let servers = problem.num_servers();
        let (draws, mut edge_rngs) = draw_devices(cfg, problem.num_devices(), t)?;

        let mut act_rngs: Vec<SimRng> = (0..servers)
            .map(|n| stream(cfg.seed, Domain::Activation, t, n as u64))
            .collect();
        let activations = match activations {
            Some(a) => {
                self.check_injected(&a)?;
                a.into_iter()
                    .map(|mut q| {
                        q.sort_unstable();
                        q
                    })
                    .collect()
            }
            None => (0..servers)
                .map(|n| {
                    select_devices(
                        &cfg.sampler,
                        problem.devices_of(n),
                        t,
                        &self.state.last_active,
                        &draws,
                        &mut act_rngs[n],
                    )
                })
                .collect::<Vec<_>>(),
        };
        let available: Vec<Vec<usize>> = match cfg.algorithm {
            Algorithm::FedBcdI => (0..servers)
                .map(|n| {
                    let q = problem.devices_of(n);
                    let target = cfg.sampler.available_count.min(q.len());
                    let extra = target.saturating_sub(activations[n].len());
                    extend_available(q, &activations[n], extra, &mut act_rngs[n])
                })
                .collect(),
            _ => activations.clone(),
        };
        let mut active = vec![false; problem.num_devices()];
        let mut avail = vec![false; problem.num_devices()];
        for (q, qa) in activations.iter().zip(&available) {
            q.iter().for_each(|&i| active[i] = true);
            qa.iter().for_each(|&i| avail[i] = true);
        }
        let z_bar_prev = consensus_mean(&self.state.cloud);

        // Response and update phase.
        let z_now = &self.state.cloud.z;
        let edges = &self.state.edges;
        let updated: Vec<Option<EdgeState>> = edge_rngs
            .par_iter_mut()
            .enumerate()
            .map(|(i, rng)| -> Result<Option<EdgeState>> {
                let z = &z_now[problem.server_of(i)];
                let k = draws[i].epochs;
                match cfg.algorithm {
                    Algorithm::FedBcd => {
                        if !active[i] {
                            return Ok(None);
                        }
                        run_epochs(&edges[i], z, &cfg.edge, problem, i, t, k, rng).map(Some)
                    }
                    Algorithm::FedBcdI => {
                        if !avail[i] {
                            return Ok(None);
                        }
                        let mut s = fedbcd_i_offline(&edges[i], &cfg.edge, problem, i, k, rng)?;
                        if active[i] {
                            s = fedbcd_i_adjust(
                                &s,
                                z,
                                problem.gamma(i),
                                k,
                                problem.feasible_set(),
                            )?;
                            s.mark_synced();
                            s.last_active_round = Some(t);
                        }
                        Ok(Some(s))
                    }
                    Algorithm::Baseline(kind) => {
                        if !active[i] {
                            return Ok(None);
                        }
                        let ds = &problem.device(i).dataset;
                        let x = match kind {
                            BaselineKind::FedAvg => baselines::fedavg_local(
                                z,
                                ds,
                                k,
                                &cfg.edge,
                                problem.feasible_set(),
                                i,
                                rng,
                            )?,
                            BaselineKind::FedProx { mu } => baselines::fedprox_local(
                                z,
                                ds,
                                mu,
                                k,
                                &cfg.edge,
                                problem.feasible_set(),
                                i,
                                rng,
                            )?,
                        };
                        let mut s = EdgeState::new(x);
                        s.x_prev = z.clone();
                        s.last_active_round = Some(t);
                        Ok(Some(s))
                    }
                }
            })
            .collect::<Result<_>>()?;
        for (i, s) in updated.into_iter().enumerate() {
            if let Some(s) = s {
                if active[i] {
                    self.state.x_cache[i] = s.x_curr.clone();
                }
                self.state.edges[i] = s;
            }
        }

        // Aggregation phase.
        let server_latency = server_latencies(&activations, &draws);
        let order = arrival_order(&server_latency);
        let b = cfg.protocol.servers_per_round(servers);
        let aggregated: Vec<usize> = order[..b].to_vec();
        let round_latency = server_latency[order[b - 1]];
        let gradient_sets: Vec<Vec<usize>> = match cfg.algorithm {
            Algorithm::FedBcdI => activations.clone(),
            _ => problem.servers().to_vec(),
        };
        let mixing = if cfg.protocol.is_sync() {
            MixingMatrix::uniform(servers)
        } else {
            MixingMatrix::async_block(servers, &aggregated)?
        };

        let mut cloud = self.state.cloud.clone();
        match cfg.algorithm {
            Algorithm::Baseline(_) => {
                let ids: Vec<usize> = activations.iter().flatten().copied().collect();
                if !ids.is_empty() {
                    let sizes: Vec<usize> = ids
                        .iter()
                        .map(|&i| problem.device(i).dataset.len())
                        .collect();
                    let weights = baselines::aggregation_weights(&sizes, cfg.aggregation_weights);
                    let uploads: Vec<(&ModelVec, f64)> = ids
                        .iter()
                        .map(|&i| &self.state.x_cache[i])
                        .zip(weights)
                        .collect();
                    let z = baselines::fedavg_aggregate(&uploads)?;
                    cloud.last_mixed = cloud.z.clone();
                    cloud.z = vec![z; servers];
                    cloud.inner += 1;
                }
                // Broadcast: every device continues from the global model.
                for (i, e) in self.state.edges.iter_mut().enumerate() {
                    let z = &cloud.z[problem.server_of(i)];
                    e.x_curr = z.clone();
                    e.x_prev = z.clone();
                    self.state.x_cache[i] = z.clone();
                }
            }
            Algorithm::FedBcd | Algorithm::FedBcdI => {
                for _ in 0..cfg.cloud_steps {
                    cloud = self.cloud_step(&cloud, &aggregated, &gradient_sets)?;
                }
            }
        }
        cloud.round = t + 1;
        self.state.cloud = cloud;

        for &i in activations.iter().flatten() {
            self.state.last_active[i] = Some(t);
        }
        let start = self.state.sim_time;
        self.state.sim_time += round_latency;
        self.state.round = t + 1;

        let events = round_events(
            t,
            start,
            &activations,
            &draws,
            &server_latency,
            round_latency,
        );
        let record = compute_record(
            &self.problem,
            self.state.round,
            self.state.sim_time,
            &self.edge_models(),
            &self.state.cloud,
            &z_bar_prev,
            &self.tests,
        )?;
        Ok(RoundOutcome {
            record,
            events,
            activations,
            available,
            server_latency,
            aggregated,
            round_latency,
            mixing,
        })
    }

    fn check_injected(&self, a: &[Vec<usize>]) -> Result<()> {
        if a.len() != self.problem.num_servers() {
            return Err(Error::DimensionMismatch {
                expected: self.problem.num_servers(),
                actual: a.len(),
            });
        }
        for (n, q) in a.iter().enumerate() {
            let own = self.problem.devices_of(n);
            for (k, i) in q.iter().enumerate() {
                if !own.contains(i) || q[..k].contains(i) {
                    return Err(Error::Protocol(format!(
                        "device {i} cannot be activated at server {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// One cloud iteration. `aggregated` lists the servers heard by the
    /// coordinator, in report order.
    fn cloud_step(
        &self,
        cloud: &CloudState,
        aggregated: &[usize],
        gradient_sets: &[Vec<usize>],
    ) -> Result<CloudState> {
        let problem = &self.problem;
        let eta_z = self.cfg.eta_z;
        let x_cache = &self.state.x_cache;
        let servers = problem.num_servers();
        match self.cfg.protocol {
            ProtocolKind::SyncCloud => match self.cfg.sync_aggregation {
                SyncAggregation::Global => {
                    let z = consensus_mean(cloud);
                    let ids: Vec<usize> = gradient_sets.iter().flatten().copied().collect();
                    let xs: Vec<&ModelVec> = ids.iter().map(|&i| &x_cache[i]).collect();
                    let gammas: Vec<f64> = ids.iter().map(|&i| problem.gamma(i)).collect();
                    let next = sync_update(&z, &xs, &gammas, eta_z)?;
                    Ok(CloudState {
                        z: vec![next; servers],
                        round: cloud.round,
                        inner: cloud.inner + 1,
                        last_mixed: vec![z; servers],
                    })
                }
                SyncAggregation::UniformMixing => dgd_step(
                    cloud,
                    &MixingMatrix::uniform(servers),
                    problem,
                    x_cache,
                    eta_z,
                    &vec![ServerRole::Update; servers],
                    gradient_sets,
                ),
            },
            ProtocolKind::AsyncCloudSimple { .. } | ProtocolKind::AsyncCloudRigorous { .. } => {
                let rigorous = matches!(self.cfg.protocol, ProtocolKind::AsyncCloudRigorous { .. });
                // The coordinator averages the reporting servers in arrival order.
                let mut w = ModelVec::zeros(problem.dim());
                for &n in aggregated {
                    w.axpy(1.0, &cloud.z[n]);
                }
                w.scale(1.0 / aggregated.len() as f64);
                let mut next = cloud.clone();
                next.inner += 1;
                for (n, set) in gradient_sets.iter().enumerate().take(servers) {
                    let mixed = if aggregated.contains(&n) {
                        w.clone()
                    } else if rigorous {
                        cloud.z[n].clone()
                    } else {
                        next.last_mixed[n] = cloud.z[n].clone();
                        continue;
                    };
                    next.z[n] = server_penalty_step(&mixed, set, x_cache, problem, eta_z)?;
                    next.last_mixed[n] = mixed;
                }
                Ok(next)
            }
        }
    }
}

/// Timeline of one round starting at `start`, ordered by time, then causal
/// stage, then actor.
pub fn round_events(
    round: u64,
    start: f64,
    activations: &[Vec<usize>],
    draws: &[DeviceDraw],
    server_latency: &[f64],
    round_latency: f64,
) -> Vec<RoundEvent> {
    let mut events = Vec::new();
    let ev = |kind, actor, offset: f64| RoundEvent {
        round,
        kind,
        actor,
        sim_time: start + offset,
    };
    for (n, q) in activations.iter().enumerate() {
        for &i in q {
            events.push(ev(EventKind::DeviceRequest, Actor::Device(i), 0.0));
            events.push(ev(
                EventKind::DeviceUpload,
                Actor::Device(i),
                draws[i].latency.total(),
            ));
        }
        events.push(ev(
            EventKind::ServerReady,
            Actor::Server(n),
            server_latency[n],
        ));
    }
    events.push(ev(
        EventKind::CoordinatorAggregate,
        Actor::Coordinator,
        round_latency,
    ));
    events.push(ev(EventKind::Broadcast, Actor::Coordinator, round_latency));
    events.sort_by(|a, b| {
        a.sim_time
            .total_cmp(&b.sim_time)
            .then(a.kind.cmp(&b.kind))
            .then(a.actor.cmp(&b.actor))
    });
    events
}
