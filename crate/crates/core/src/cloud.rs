//! Cloud-side aggregation: the synchronous global step, the DGD mix-then-step
//! update across servers, the mixing matrices induced by the asynchronous
//! protocol, and tools for the geometric convergence of mixing products.

use crate::error::{Error, Result};
use crate::model::{FedProblem, ModelVec};

/// Absolute tolerance on every row and column sum of a mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Doubly stochastic, nonnegative `|V| x |V|` matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl MixingMatrix {
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 || entries.len() != size * size {
            return Err(Error::NotDoublyStochastic(format!(
                "expected {size}x{size} entries, got {}",
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NotDoublyStochastic(format!(
                "entry {v} is negative or non-finite"
            )));
        }
        for r in 0..size {
            let row: f64 = entries[r * size..(r + 1) * size].iter().sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotDoublyStochastic(format!("row {r} sums to {row}")));
            }
        }
        for c in 0..size {
            let col: f64 = (0..size).map(|r| entries[r * size + c]).sum();
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotDoublyStochastic(format!(
                    "column {c} sums to {col}"
                )));
            }
        }
        Ok(MixingMatrix { size, entries })
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        MixingMatrix { size, entries }
    }

    pub fn uniform(size: usize) -> Self {
        MixingMatrix {
            size,
            entries: vec![1.0 / size as f64; size * size],
        }
    }

    /// Matrix realized by one asynchronous aggregation: a uniform `1/B` block
    /// on the `B` selected servers and the identity elsewhere.
    pub fn async_block(size: usize, selected: &[usize]) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::InvalidArgument("empty server selection".into()));
        }
        let mut mark = vec![false; size];
        for &n in selected {
            if n >= size || mark[n] {
                return Err(Error::InvalidArgument(format!(
                    "invalid or repeated server {n} in selection"
                )));
            }
            mark[n] = true;
        }
        let b = selected.len() as f64;
        let mut m = MixingMatrix::identity(size);
        for &n in selected {
            m.entries[n * size + n] = 0.0;
        }
        for &n in selected {
            for &k in selected {
                m.entries[n * size + k] = 1.0 / b;
            }
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.size + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.size..(row + 1) * self.size]
    }

    /// Smallest strictly positive entry.
    pub fn min_positive_entry(&self) -> f64 {
        self.entries
            .iter()
            .cloned()
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &MixingMatrix) -> MixingMatrix {
        let n = self.size;
        let mut entries = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.entries[r * n + k];
                if a == 0.0 {
                    continue;
                }
                for c in 0..n {
                    entries[r * n + c] += a * rhs.entries[k * n + c];
                }
            }
        }
        MixingMatrix { size: n, entries }
    }

    /// Undirected communication links `(n, m)`, `n < m`, with a positive weight.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let n = self.size;
        let mut out = Vec::new();
        for r in 0..n {
            for c in r + 1..n {
                if self.get(r, c) > 0.0 || self.get(c, r) > 0.0 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// `w_n = sum_m a_{n,m} z_m` for every server, from one snapshot.
    pub fn mix(&self, zs: &[ModelVec]) -> Result<Vec<ModelVec>> {
        if zs.len() != self.size {
            return Err(Error::DimensionMismatch {
                expected: self.size,
                actual: zs.len(),
            });
        }
        let dim = zs[0].dim();
        (0..self.size)
            .map(|n| {
                let mut w = ModelVec::zeros(dim);
                for (m, z) in zs.iter().enumerate() {
                    let a = self.get(n, m);
                    if a != 0.0 {
                        z.check_dim(dim)?;
                        w.axpy(a, z);
                    }
                }
                Ok(w)
            })
            .collect()
    }
}

/// Global models held by the cloud servers.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudState {
    pub z: Vec<ModelVec>,
    pub round: u64,
    pub inner: usize,
    /// Mixed models `w_n` of the most recent DGD iteration (equal to `z_n`
    /// before any mixing happened or for servers that held their state).
    pub last_mixed: Vec<ModelVec>,
}

impl CloudState {
    pub fn new(servers: usize, z0: ModelVec) -> Self {
        let z = vec![z0; servers];
        CloudState {
            last_mixed: z.clone(),
            z,
            round: 0,
            inner: 0,
        }
    }

    pub fn from_models(z: Vec<ModelVec>) -> Self {
        CloudState {
            last_mixed: z.clone(),
            z,
            round: 0,
            inner: 0,
        }
    }
}

/// Arithmetic mean `z_bar` of the server models.
pub fn consensus_mean(state: &CloudState) -> ModelVec {
    ModelVec::mean(&state.z).expect("cloud state has at least one server")
}

/// Synchronous global step `z+ = z - eta_z sum_i gamma_i (z - x_i)`.
pub fn sync_update(z: &ModelVec, xs: &[&ModelVec], gammas: &[f64], eta_z: f64) -> Result<ModelVec> {
    if xs.len() != gammas.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: gammas.len(),
        });
    }
    let mut agg = ModelVec::zeros(z.dim());
    for (x, &g) in xs.iter().zip(gammas) {
        x.check_dim(z.dim())?;
        agg.axpy(g, &z.sub(x));
    }
    let mut out = z.clone();
    out.axpy(-eta_z, &agg);
    Ok(out)
}

/// Penalty step of a server from its mixed model:
/// `z+ = w - eta_z sum_{i in devices} gamma_i (w - x_i)`.
pub fn server_penalty_step(
    w: &ModelVec,
    devices: &[usize],
    x_cache: &[ModelVec],
    problem: &FedProblem,
    eta_z: f64,
) -> Result<ModelVec> {
    let xs: Vec<&ModelVec> = devices.iter().map(|&i| &x_cache[i]).collect();
    let gammas: Vec<f64> = devices.iter().map(|&i| problem.gamma(i)).collect();
    sync_update(w, &xs, &gammas, eta_z)
}

/// What a server does during a DGD iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerRole {
    /// Mix with its row of the matrix, then take the penalty step.
    Update,
    /// Keep `z_n` unchanged.
    Hold,
}

/// One DGD iteration over all servers.
///
/// Every `w_n` is computed from the pre-step snapshot. `gradient_sets[n]`
/// lists the devices whose cached models enter server `n`'s penalty step.
pub fn dgd_step(
    state: &CloudState,
    mixing: &MixingMatrix,
    problem: &FedProblem,
    x_cache: &[ModelVec],
    eta_z: f64,
    roles: &[ServerRole],
    gradient_sets: &[Vec<usize>],
) -> Result<CloudState> {
    let servers = state.z.len();
    if mixing.size() != servers || roles.len() != servers || gradient_sets.len() != servers {
        return Err(Error::DimensionMismatch {
            expected: servers,
            actual: mixing.size(),
        });
    }
    let mixed = mixing.mix(&state.z)?;
    let mut z = Vec::with_capacity(servers);
    let mut last_mixed = Vec::with_capacity(servers);
    for (n, w) in mixed.into_iter().enumerate() {
        match roles[n] {
            ServerRole::Update => {
                z.push(server_penalty_step(
                    &w,
                    &gradient_sets[n],
                    x_cache,
                    problem,
                    eta_z,
                )?);
                last_mixed.push(w);
            }
            ServerRole::Hold => {
                z.push(state.z[n].clone());
                last_mixed.push(state.z[n].clone());
            }
        }
    }
    Ok(CloudState {
        z,
        round: state.round,
        inner: state.inner + 1,
        last_mixed,
    })
}

/// `max_{n,m} |[A_t ... A_{s+1}]_{n,m} - 1/|V||` for matrices given in
/// chronological order `A_{s+1}, ..., A_t`. An empty product is the identity.
pub fn mixing_product_deviation(matrices: &[MixingMatrix], size: usize) -> f64 {
    let mut phi = MixingMatrix::identity(size);
    for a in matrices {
        phi = a.matmul(&phi);
    }
    let target = 1.0 / size as f64;
    phi.entries
        .iter()
        .map(|v| (v - target).abs())
        .fold(0.0, f64::max)
}

/// Constants of the geometric bound
/// `|[Phi(t,s)]_{n,m} - 1/|V|| <= theta * beta^(t-s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusRate {
    pub theta: f64,
    pub beta: f64,
}

/// `theta = (1 - c / (4 |V|^2))^-2`, `beta = (1 - c / (4 |V|^2))^(1/q)` for
/// entry floor `c` and connectivity period `q`.
pub fn consensus_rate_bound(servers: usize, entry_floor: f64, period: usize) -> ConsensusRate {
    let base = 1.0 - entry_floor / (4.0 * (servers * servers) as f64);
    ConsensusRate {
        theta: base.powi(-2),
        beta: base.powf(1.0 / period as f64),
    }
}

fn connected(size: usize, links: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut parent: Vec<usize> = (0..size).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut components = size;
    for (a, b) in links {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components <= 1
}

/// Smallest `q` such that the union of links over every window of `q`
/// consecutive matrices connects all servers; `None` if no window length
/// within the sequence achieves it.
pub fn connectivity_period(matrices: &[MixingMatrix]) -> Option<usize> {
    let size = matrices.first()?.size();
    if size <= 1 {
        return Some(1);
    }
    let links: Vec<Vec<(usize, usize)>> = matrices.iter().map(MixingMatrix::links).collect();
    (1..=matrices.len()).find(|&q| {
        (0..=matrices.len() - q)
            .all(|start| connected(size, links[start..start + q].iter().flatten().cloned()))
    })
}
