//! Problem and configuration builders shared by the integration tests.
#![allow(dead_code)]

use fedbcd::baselines::AggregationWeights;
use fedbcd::edge::{BatchMode, EdgeHyper};
use fedbcd::latency::{EpochScaling, LatencyDistribution};
use fedbcd::protocol::{
    ActivationSampler, Algorithm, ProtocolKind, SelectionMode, SimConfig, SyncAggregation,
};
use fedbcd::{BoxSet, Device, FedProblem, LocalDataset, LossKind, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Unit-variance uniform features.
pub fn random_features(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.random_range(-1.0..1.0) * 3f64.sqrt())
        .collect()
}

/// Least-squares devices with random well-conditioned features; every
/// `g_i` is strongly convex when `samples >= d`.
pub fn least_squares_problem(
    servers: usize,
    per_server: usize,
    d: usize,
    samples: usize,
    gamma: f64,
    seed: u64,
) -> FedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let devices = (0..servers * per_server)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let data = (0..samples)
                .map(|_| {
                    let a = random_features(&mut rng, d);
                    let y = a.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>()
                        + 0.1 * rng.random_range(-1.0..1.0);
                    Sample::new(a, y)
                })
                .collect();
            Device {
                dataset: LocalDataset::new(LossKind::LeastSquares, data).unwrap(),
                gamma,
            }
        })
        .collect();
    let topology = (0..servers)
        .map(|n| (n * per_server..(n + 1) * per_server).collect())
        .collect();
    FedProblem::new(BoxSet::new(-2.0, 2.0).unwrap(), topology, devices).unwrap()
}

/// Binary logistic devices.
pub fn logistic_problem(
    servers: usize,
    per_server: usize,
    d: usize,
    samples: usize,
    gamma: f64,
    seed: u64,
) -> FedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let devices = (0..servers * per_server)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let data = (0..samples)
                .map(|_| {
                    let a = random_features(&mut rng, d);
                    let m: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
                    let y = if m + rng.random_range(-1.0..1.0) > 0.0 {
                        1.0
                    } else {
                        -1.0
                    };
                    Sample::new(a, y)
                })
                .collect();
            Device {
                dataset: LocalDataset::new(LossKind::Logistic, data).unwrap(),
                gamma,
            }
        })
        .collect();
    let topology = (0..servers)
        .map(|n| (n * per_server..(n + 1) * per_server).collect())
        .collect();
    FedProblem::new(BoxSet::new(-2.0, 2.0).unwrap(), topology, devices).unwrap()
}

pub fn sim_config(
    protocol: ProtocolKind,
    eta_x: f64,
    eta_z: f64,
    active: usize,
    batch: BatchMode,
    seed: u64,
) -> SimConfig {
    SimConfig {
        algorithm: Algorithm::FedBcd,
        protocol,
        sync_aggregation: SyncAggregation::Global,
        edge: EdgeHyper {
            eta_x,
            zeta: 0.5,
            epochs_min: 1,
            epochs_max: 5,
            batch,
            offline_budget: 4,
        },
        eta_z,
        cloud_steps: 1,
        sampler: ActivationSampler {
            per_server_count: active,
            available_count: active,
            coverage_period: None,
            mode: SelectionMode::ShortestArrival,
        },
        arrival: LatencyDistribution::exponential(2.0).unwrap(),
        process: LatencyDistribution::exponential(1.0).unwrap(),
        epoch_scaling: EpochScaling::SingleDraw,
        aggregation_weights: AggregationWeights::DataSize,
        seed,
    }
}
