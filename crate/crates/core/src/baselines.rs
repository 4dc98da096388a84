//! FedAvg and FedProx reference algorithms.
//!
//! Both restart every activation from the received global model and run the
//! same momentum-projected iteration as the edge solver, so FedProx with
//! `mu = gamma_i` reproduces a FedBCD edge update bit for bit.

use rand::Rng;

use crate::edge::{aspg_iterate, Anchor, EdgeHyper};
use crate::error::{Error, Result};
use crate::model::{BoxSet, LocalDataset, ModelVec};

/// Reference algorithm that keeps a single global model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    FedAvg,
    FedProx { mu: f64 },
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKind::FedProx { mu } if !(mu > 0.0 && mu.is_finite()) => Err(
                Error::InvalidHyper(format!("FedProx mu = {mu} must be > 0")),
            ),
            _ => Ok(()),
        }
    }

    fn anchor_weight(&self) -> Option<f64> {
        match *self {
            BaselineKind::FedAvg => None,
            BaselineKind::FedProx { mu } => Some(mu),
        }
    }
}

/// How uploads are weighted in the FedAvg average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationWeights {
    /// Proportional to local dataset sizes.
    #[default]
    DataSize,
    Uniform,
}

#[allow(clippy::too_many_arguments)]
fn local_run<R: Rng + ?Sized>(
    kind: BaselineKind,
    z: &ModelVec,
    dataset: &LocalDataset,
    epochs: usize,
    hyper: &EdgeHyper,
    feasible: &BoxSet,
    device: usize,
    rng: &mut R,
) -> Result<ModelVec> {
    kind.validate()?;
    z.check_dim(dataset.model_dim())?;
    let (mut prev, mut curr) = (z.clone(), z.clone());
    for _ in 0..epochs {
        let anchor = kind.anchor_weight().map(|weight| Anchor { z, weight });
        let next = aspg_iterate(
            &curr,
            &prev,
            dataset,
            anchor,
            hyper.eta_x,
            hyper.zeta,
            hyper.batch,
            feasible,
            device,
            rng,
        )?;
        prev = std::mem::replace(&mut curr, next);
    }
    Ok(curr)
}

/// `epochs` projected (momentum) gradient iterations on `g_i` alone, started
/// from the received global model.
#[allow(clippy::too_many_arguments)]
pub fn fedavg_local<R: Rng + ?Sized>(
    z: &ModelVec,
    dataset: &LocalDataset,
    epochs: usize,
    hyper: &EdgeHyper,
    feasible: &BoxSet,
    device: usize,
    rng: &mut R,
) -> Result<ModelVec> {
    local_run(
        BaselineKind::FedAvg,
        z,
        dataset,
        epochs,
        hyper,
        feasible,
        device,
        rng,
    )
}

/// Like [`fedavg_local`] on `g_i(x) + (mu / 2) ||x - z||^2` with the anchor
/// fixed at the received `z`.
#[allow(clippy::too_many_arguments)]
pub fn fedprox_local<R: Rng + ?Sized>(
    z: &ModelVec,
    dataset: &LocalDataset,
    mu: f64,
    epochs: usize,
    hyper: &EdgeHyper,
    feasible: &BoxSet,
    device: usize,
    rng: &mut R,
) -> Result<ModelVec> {
    local_run(
        BaselineKind::FedProx { mu },
        z,
        dataset,
        epochs,
        hyper,
        feasible,
        device,
        rng,
    )
}

/// Tolerance on the sum of FedAvg weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// `sum_i w_i x_i` for nonnegative weights summing to one.
pub fn fedavg_aggregate(uploads: &[(&ModelVec, f64)]) -> Result<ModelVec> {
    let (first, _) = uploads
        .first()
        .ok_or_else(|| Error::InvalidArgument("no uploads to aggregate".into()))?;
    let dim = first.dim();
    let mut total = 0.0;
    let mut out = ModelVec::zeros(dim);
    for (x, w) in uploads {
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight {w} must be nonnegative"
            )));
        }
        x.check_dim(dim)?;
        out.axpy(*w, x);
        total += w;
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "weights sum to {total}, not 1"
        )));
    }
    Ok(out)
}

/// Normalized aggregation weights for the given local dataset sizes.
pub fn aggregation_weights(sizes: &[usize], mode: AggregationWeights) -> Vec<f64> {
    match mode {
        AggregationWeights::Uniform => vec![1.0 / sizes.len() as f64; sizes.len()],
        AggregationWeights::DataSize => {
            let total: usize = sizes.iter().sum();
            sizes.iter().map(|&s| s as f64 / total as f64).collect()
        }
    }
}
