//! Per-round convergence diagnostics: the variational stationarity gap of the
//! edge models, the aggregate penalty gradient at the server average, the
//! consensus error across servers, and classification accuracy.

use serde::Serialize;

use crate::cloud::CloudState;
use crate::error::{Error, Result};
use crate::model::{BoxSet, FedProblem, LocalDataset, LossKind, ModelVec};

/// `max_{xh in X} <grad, x - xh>`, evaluated coordinatewise on the box.
pub fn box_linear_gap(grad: &ModelVec, x: &ModelVec, feasible: &BoxSet) -> f64 {
    let (l, u) = (feasible.lower(), feasible.upper());
    grad.as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(g, xj)| (g * (xj - l)).max(g * (xj - u)))
        .sum()
}

/// Stationarity gap of device `i`:
/// `-min_{xh in X} <grad_x f_i(x_i, z_bar), xh - x_i>`, using the exact gradient.
/// Zero exactly when `x_i` solves the variational inequality over `X`.
pub fn stationarity_gap(
    problem: &FedProblem,
    x: &ModelVec,
    z_bar: &ModelVec,
    device: usize,
) -> Result<f64> {
    let grad = problem.penalized_gradient(device, x, z_bar)?;
    Ok(box_linear_gap(&grad, x, problem.feasible_set()))
}

/// `|| sum_i gamma_i (z_bar - x_i) ||^2` over all devices.
pub fn z_gradient_norm_sq(problem: &FedProblem, xs: &[ModelVec], z_bar: &ModelVec) -> Result<f64> {
    if xs.len() != problem.num_devices() {
        return Err(Error::DimensionMismatch {
            expected: problem.num_devices(),
            actual: xs.len(),
        });
    }
    let mut agg = ModelVec::zeros(z_bar.dim());
    for (i, x) in xs.iter().enumerate() {
        x.check_dim(z_bar.dim())?;
        agg.axpy(problem.gamma(i), &z_bar.sub(x));
    }
    Ok(agg.norm_sq())
}

/// `max_n || z_bar - z_n ||`.
pub fn consensus_error(state: &CloudState) -> f64 {
    let Some(z_bar) = ModelVec::mean(&state.z) else {
        return 0.0;
    };
    state
        .z
        .iter()
        .map(|z| z.distance(&z_bar))
        .fold(0.0, f64::max)
}

/// Predicted class index: argmax of the class scores (lowest index on ties),
/// or the sign of the margin for binary logistic models (nonnegative -> +1).
pub fn predict_class(kind: LossKind, model: &ModelVec, features: &[f64]) -> Result<usize> {
    let x = model.as_slice();
    match kind {
        LossKind::LeastSquares => Err(Error::InvalidArgument(
            "accuracy is undefined for least-squares regression".into(),
        )),
        LossKind::Logistic => Ok(usize::from(crate::model::dot(features, x) >= 0.0)),
        LossKind::MultinomialLogistic { classes } => {
            let m = features.len();
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..classes {
                let s = crate::model::dot(features, &x[c * m..(c + 1) * m]);
                if s > best.1 {
                    best = (c, s);
                }
            }
            Ok(best.0)
        }
    }
}

/// Fraction of `dataset` classified correctly by `model`.
pub fn evaluate_accuracy(model: &ModelVec, dataset: &LocalDataset) -> Result<f64> {
    let kind = dataset.kind();
    if !kind.is_classification() {
        return Err(Error::InvalidArgument(
            "accuracy is undefined for least-squares regression".into(),
        ));
    }
    model.check_dim(dataset.model_dim())?;
    let mut correct = 0usize;
    for s in dataset.samples() {
        if predict_class(kind, model, &s.features)? == kind.class_of(s.label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Held-out data used for accuracy reporting.
#[derive(Debug, Clone, Default)]
pub struct TestSets {
    /// One test set per device, drawn from the same classes as its training data.
    pub personal: Vec<LocalDataset>,
    /// Test set for the global model.
    pub global: Option<LocalDataset>,
}

/// Diagnostics of one round (round 0 describes the initial state).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub round: u64,
    pub sim_time: f64,
    pub stationarity_gap_mean: f64,
    pub z_grad_norm_sq: f64,
    pub consensus_max: f64,
    pub objective_value: f64,
    /// `None` for regression tasks.
    pub global_accuracy: Option<f64>,
    pub personalized_accuracy_mean: Option<f64>,
}

/// CSV header of the metrics table.
pub const CSV_HEADER: [&str; 8] = [
    "round",
    "sim_time",
    "stationarity_gap_mean",
    "z_grad_norm_sq",
    "consensus_max",
    "objective_value",
    "global_accuracy",
    "personalized_accuracy_mean",
];

impl MetricsRecord {
    pub fn csv_row(&self) -> [String; 8] {
        let opt = |v: Option<f64>| v.map(|a| a.to_string()).unwrap_or_default();
        [
            self.round.to_string(),
            self.sim_time.to_string(),
            self.stationarity_gap_mean.to_string(),
            self.z_grad_norm_sq.to_string(),
            self.consensus_max.to_string(),
            self.objective_value.to_string(),
            opt(self.global_accuracy),
            opt(self.personalized_accuracy_mean),
        ]
    }
}

/// Computes a record from the edge models `xs`, the server models, and the
/// server average `z_bar_prev` that the edge models were trained against.
pub fn compute_record(
    problem: &FedProblem,
    round: u64,
    sim_time: f64,
    xs: &[ModelVec],
    cloud: &CloudState,
    z_bar_prev: &ModelVec,
    tests: &TestSets,
) -> Result<MetricsRecord> {
    let n = problem.num_devices();
    let mut gap = 0.0;
    for (i, x) in xs.iter().enumerate() {
        gap += stationarity_gap(problem, x, z_bar_prev, i)?;
    }
    let zs: Vec<ModelVec> = (0..n)
        .map(|i| cloud.z[problem.server_of(i)].clone())
        .collect();
    let objective_value = problem.objective(xs, &zs)?;
    let global_accuracy = match &tests.global {
        Some(t) => Some(evaluate_accuracy(
            &ModelVec::mean(&cloud.z).expect("servers"),
            t,
        )?),
        None => None,
    };
    let personalized_accuracy_mean = if tests.personal.is_empty() {
        None
    } else {
        if tests.personal.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: tests.personal.len(),
            });
        }
        let mut total = 0.0;
        for (x, t) in xs.iter().zip(&tests.personal) {
            total += evaluate_accuracy(x, t)?;
        }
        Some(total / n as f64)
    };
    let record = MetricsRecord {
        round,
        sim_time,
        stationarity_gap_mean: gap / n as f64,
        z_grad_norm_sq: z_gradient_norm_sq(problem, xs, z_bar_prev)?,
        consensus_max: consensus_error(cloud),
        objective_value,
        global_accuracy,
        personalized_accuracy_mean,
    };
    let finite = [
        record.stationarity_gap_mean,
        record.z_grad_norm_sq,
        record.consensus_max,
        record.objective_value,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Protocol(format!(
            "non-finite metrics at round {round}"
        )));
    }
    Ok(record)
}

/// Time averages `(1/T) sum_{t=1..T}` of the three convergence quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunningMeans {
    pub rounds: u64,
    pub stationarity_gap_mean: f64,
    pub z_grad_norm_sq: f64,
    pub consensus_max: f64,
}

impl RunningMeans {
    pub fn push(&mut self, r: &MetricsRecord) {
        self.rounds += 1;
        let k = self.rounds as f64;
        self.stationarity_gap_mean += (r.stationarity_gap_mean - self.stationarity_gap_mean) / k;
        self.z_grad_norm_sq += (r.z_grad_norm_sq - self.z_grad_norm_sq) / k;
        self.consensus_max += (r.consensus_max - self.consensus_max) / k;
    }

    /// Running means after each post-initial record of `records`.
    pub fn trajectory(records: &[MetricsRecord]) -> Vec<RunningMeans> {
        let mut acc = RunningMeans::default();
        records
            .iter()
            .filter(|r| r.round > 0)
            .map(|r| {
                acc.push(r);
                acc
            })
            .collect()
    }
}
