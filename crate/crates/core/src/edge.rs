//! Edge-device updates: momentum-accelerated stochastic projected gradient
//! (ASPG) on the penalized local objective, and the two-phase update of the
//! intermittent variant (offline training on `g_i`, then a pull toward the
//! received global model).

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{BoxSet, FedProblem, LocalDataset, ModelVec};

/// How local gradients are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Full-batch gradient of `g_i`.
    Exact,
    /// Minibatch of the given size, sampled with replacement.
    Minibatch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeHyper {
    pub eta_x: f64,
    pub zeta: f64,
    pub epochs_min: usize,
    pub epochs_max: usize,
    pub batch: BatchMode,
    /// Consecutive offline rounds before a device suspends local training.
    pub offline_budget: u32,
}

impl EdgeHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_x > 0.0 && self.eta_x.is_finite()) {
            return Err(Error::InvalidHyper(format!(
                "eta_x = {} must be > 0",
                self.eta_x
            )));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::InvalidHyper(format!(
                "zeta = {} must be in [0, 1)",
                self.zeta
            )));
        }
        if self.epochs_min < 1 || self.epochs_min > self.epochs_max {
            return Err(Error::InvalidHyper(format!(
                "epoch range [{}, {}] must satisfy 1 <= min <= max",
                self.epochs_min, self.epochs_max
            )));
        }
        if self.batch == BatchMode::Minibatch(0) {
            return Err(Error::InvalidHyper("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Draws `K_i^(t)` uniformly from the epoch range.
    pub fn draw_epochs<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.epochs_min..=self.epochs_max)
    }

    /// Largest edge stepsize allowed by the smoothness condition,
    /// `min_i 1 / (L_i + gamma_i)`, using the datasets' smoothness bounds.
    pub fn stepsize_bound(problem: &FedProblem) -> f64 {
        problem
            .devices()
            .iter()
            .map(|d| 1.0 / (d.dataset.smoothness_bound() + d.gamma))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-device iterate history and offline bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeState {
    pub x_curr: ModelVec,
    pub x_prev: ModelVec,
    /// Last round in which the device was activated, if any.
    pub last_active_round: Option<u64>,
    pub offline_rounds_since_sync: u32,
    pub suspended: bool,
}

impl EdgeState {
    /// Both iterates start at the shared initialization, so the first
    /// extrapolation is a no-op.
    pub fn new(x0: ModelVec) -> Self {
        EdgeState {
            x_prev: x0.clone(),
            x_curr: x0,
            last_active_round: None,
            offline_rounds_since_sync: 0,
            suspended: false,
        }
    }

    /// Resets the offline counter after a successful exchange with the cloud.
    pub fn mark_synced(&mut self) {
        self.offline_rounds_since_sync = 0;
        self.suspended = false;
    }
}

/// Quadratic anchor `(gamma / 2) ||x - z||^2` added to `g_i`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Anchor<'a> {
    pub z: &'a ModelVec,
    pub weight: f64,
}

/// One ASPG iteration:
/// `x_ex = x + zeta (x - x_prev)`,
/// `x_next = P_X(x_ex - eta (grad g(x_ex) + weight (x_ex - z)))`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn aspg_iterate<R: Rng + ?Sized>(
    x_curr: &ModelVec,
    x_prev: &ModelVec,
    dataset: &LocalDataset,
    anchor: Option<Anchor<'_>>,
    eta: f64,
    zeta: f64,
    batch: BatchMode,
    feasible: &BoxSet,
    device: usize,
    rng: &mut R,
) -> Result<ModelVec> {
    let dim = dataset.model_dim();
    x_curr.check_dim(dim)?;
    x_prev.check_dim(dim)?;
    let mut x_ex = x_curr.clone();
    if zeta != 0.0 {
        x_ex.axpy(zeta, &x_curr.sub(x_prev));
    }
    let mut grad = match batch {
        BatchMode::Exact => dataset.gradient(&x_ex)?,
        BatchMode::Minibatch(r) => dataset.stochastic_gradient(&x_ex, r, rng)?,
    };
    if let Some(a) = anchor {
        a.z.check_dim(dim)?;
        grad.axpy(a.weight, &x_ex.sub(a.z));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite { device });
    }
    x_ex.axpy(-eta, &grad);
    feasible.project_in_place(&mut x_ex);
    if !x_ex.is_finite() {
        return Err(Error::NonFinite { device });
    }
    Ok(x_ex)
}

fn advance(state: &EdgeState, next: ModelVec) -> EdgeState {
    EdgeState {
        x_prev: state.x_curr.clone(),
        x_curr: next,
        ..state.clone()
    }
}

/// One ASPG iteration on `f_i(., z_anchor)`.
pub fn aspg_epoch<R: Rng + ?Sized>(
    state: &EdgeState,
    z_anchor: &ModelVec,
    hyper: &EdgeHyper,
    problem: &FedProblem,
    device: usize,
    rng: &mut R,
) -> Result<EdgeState> {
    let dev = problem.device(device);
    let next = aspg_iterate(
        &state.x_curr,
        &state.x_prev,
        &dev.dataset,
        Some(Anchor {
            z: z_anchor,
            weight: dev.gamma,
        }),
        hyper.eta_x,
        hyper.zeta,
        hyper.batch,
        problem.feasible_set(),
        device,
        rng,
    )?;
    Ok(advance(state, next))
}

/// Runs `epochs` ASPG iterations warm-started from the last two iterates of
/// the previous activation, and records `round` as the last active round.
#[allow(clippy::too_many_arguments)]
pub fn run_epochs<R: Rng + ?Sized>(
    state: &EdgeState,
    z_anchor: &ModelVec,
    hyper: &EdgeHyper,
    problem: &FedProblem,
    device: usize,
    round: u64,
    epochs: usize,
    rng: &mut R,
) -> Result<EdgeState> {
    if let Some(last) = state.last_active_round {
        if last >= round {
            return Err(Error::Protocol(format!(
                "device {device} activated at round {round} after round {last}"
            )));
        }
    }
    let mut s = state.clone();
    for _ in 0..epochs {
        s = aspg_epoch(&s, z_anchor, hyper, problem, device, rng)?;
    }
    s.last_active_round = Some(round);
    Ok(s)
}

/// Draws the epoch count for this activation and runs it. Returns the new
/// state and the number of epochs executed.
pub fn run_activation<R: Rng + ?Sized>(
    state: &EdgeState,
    z_anchor: &ModelVec,
    hyper: &EdgeHyper,
    problem: &FedProblem,
    device: usize,
    round: u64,
    rng: &mut R,
) -> Result<(EdgeState, usize)> {
    let epochs = hyper.draw_epochs(rng);
    let s = run_epochs(state, z_anchor, hyper, problem, device, round, epochs, rng)?;
    Ok((s, epochs))
}

/// Offline phase of the intermittent variant: ASPG on `g_i` alone.
///
/// Once `offline_budget` offline rounds have run without a cloud exchange the
/// device is suspended; the state is returned unchanged with `suspended` set
/// until [`EdgeState::mark_synced`] is called.
pub fn fedbcd_i_offline<R: Rng + ?Sized>(
    state: &EdgeState,
    hyper: &EdgeHyper,
    problem: &FedProblem,
    device: usize,
    epochs: usize,
    rng: &mut R,
) -> Result<EdgeState> {
    if state.suspended || state.offline_rounds_since_sync >= hyper.offline_budget {
        let mut s = state.clone();
        s.suspended = true;
        return Ok(s);
    }
    let dataset = &problem.device(device).dataset;
    let mut s = state.clone();
    for _ in 0..epochs {
        let next = aspg_iterate(
            &s.x_curr,
            &s.x_prev,
            dataset,
            None,
            hyper.eta_x,
            hyper.zeta,
            hyper.batch,
            problem.feasible_set(),
            device,
            rng,
        )?;
        s = advance(&s, next);
    }
    s.offline_rounds_since_sync += 1;
    Ok(s)
}

/// Adjustment phase of the intermittent variant: `epochs` iterations of
/// `x <- P_X(x - gamma (x - z))`, with `gamma` used directly as the step.
pub fn fedbcd_i_adjust(
    state: &EdgeState,
    z_anchor: &ModelVec,
    gamma: f64,
    epochs: usize,
    feasible: &BoxSet,
) -> Result<EdgeState> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidHyper(format!(
            "adjustment weight gamma = {gamma} must lie in (0, 1]"
        )));
    }
    z_anchor.check_dim(state.x_curr.dim())?;
    let mut s = state.clone();
    for _ in 0..epochs {
        let mut next = s.x_curr.clone();
        next.axpy(-gamma, &s.x_curr.sub(z_anchor));
        feasible.project_in_place(&mut next);
        s = advance(&s, next);
    }
    Ok(s)
}
