//! Model vectors, local datasets with hand-derived losses, the box feasible
//! set, and the penalized federated problem
//!
//! `sum_i g_i(x_i) + (gamma_i / 2) * ||x_i - z_{server(i)}||^2` over `x_i in X`.
//!
//! All sums run left to right in sample/coordinate order so results are
//! reproducible bit for bit.

use rand::Rng;

use crate::error::{Error, Result};

/// Flat parameter vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct ModelVec(Vec<f64>);

impl ModelVec {
    pub fn zeros(dim: usize) -> Self {
        ModelVec(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ModelVec(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            })
        }
    }

    pub fn dot(&self, other: &ModelVec) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &ModelVec) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self - other`.
    pub fn sub(&self, other: &ModelVec) -> ModelVec {
        ModelVec(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ModelVec) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.0 {
            *a *= alpha;
        }
    }

    /// Arithmetic mean of equally sized vectors.
    pub fn mean<'a, I>(vectors: I) -> Option<ModelVec>
    where
        I: IntoIterator<Item = &'a ModelVec>,
    {
        let mut count = 0usize;
        let mut acc: Option<ModelVec> = None;
        for v in vectors {
            count += 1;
            match acc.as_mut() {
                Some(a) => a.axpy(1.0, v),
                None => acc = Some(v.clone()),
            }
        }
        acc.map(|mut a| {
            a.scale(1.0 / count as f64);
            a
        })
    }
}

impl From<Vec<f64>> for ModelVec {
    fn from(values: Vec<f64>) -> Self {
        ModelVec(values)
    }
}

impl std::ops::Index<usize> for ModelVec {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Elementwise box `[lower, upper]^d`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxSet {
    lower: f64,
    upper: f64,
}

impl BoxSet {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_finite() && upper.is_finite() && lower < upper {
            Ok(BoxSet { lower, upper })
        } else {
            Err(Error::InvalidBox { lower, upper })
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn project(&self, v: &ModelVec) -> ModelVec {
        let mut out = v.clone();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, v: &mut ModelVec) {
        for a in v.as_mut_slice() {
            *a = a.clamp(self.lower, self.upper);
        }
    }

    /// Membership with absolute slack `tol` on every coordinate.
    pub fn contains(&self, v: &ModelVec, tol: f64) -> bool {
        v.as_slice()
            .iter()
            .all(|&a| a >= self.lower - tol && a <= self.upper + tol)
    }

    /// Euclidean diameter of the box in dimension `dim`.
    pub fn diameter(&self, dim: usize) -> f64 {
        (self.upper - self.lower) * (dim as f64).sqrt()
    }
}

/// Per-sample loss `h(x; s)` of a local dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `0.5 * (a.x - y)^2`, real labels.
    LeastSquares,
    /// `ln(1 + exp(-y a.x))`, labels in {-1, +1}.
    Logistic,
    /// Softmax cross-entropy over `classes` linear scores; labels are class
    /// indices (the one-hot target). The model is the row-major
    /// `classes x features` weight matrix.
    MultinomialLogistic { classes: usize },
}

impl LossKind {
    pub fn model_dim(&self, feature_dim: usize) -> usize {
        match *self {
            LossKind::LeastSquares | LossKind::Logistic => feature_dim,
            LossKind::MultinomialLogistic { classes } => classes * feature_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            LossKind::LeastSquares => 1,
            LossKind::Logistic => 2,
            LossKind::MultinomialLogistic { classes } => classes,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, LossKind::LeastSquares)
    }

    /// Class index of a label; regression data forms a single class.
    pub fn class_of(&self, label: f64) -> usize {
        match self {
            LossKind::LeastSquares => 0,
            LossKind::Logistic => usize::from(label > 0.0),
            LossKind::MultinomialLogistic { .. } => label as usize,
        }
    }

    /// Label encoding of a class index.
    pub fn label_of(&self, class: usize) -> f64 {
        match self {
            LossKind::LeastSquares => 0.0,
            LossKind::Logistic => {
                if class == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            LossKind::MultinomialLogistic { .. } => class as f64,
        }
    }

    fn check_label(&self, label: f64) -> Result<()> {
        let ok = match *self {
            LossKind::LeastSquares => label.is_finite(),
            LossKind::Logistic => label == 1.0 || label == -1.0,
            LossKind::MultinomialLogistic { classes } => {
                label >= 0.0 && label.fract() == 0.0 && (label as usize) < classes
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDataset(format!(
                "label {label} is not valid for {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Sample { features, label }
    }
}

/// Nonempty set of samples owned by one edge device.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    kind: LossKind,
    feature_dim: usize,
    samples: Vec<Sample>,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LocalDataset {
    pub fn new(kind: LossKind, samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let feature_dim = first.features.len();
        if feature_dim == 0 {
            return Err(Error::InvalidDataset("zero-length feature vector".into()));
        }
        if let LossKind::MultinomialLogistic { classes } = kind {
            if classes < 2 {
                return Err(Error::InvalidDataset(
                    "multinomial logistic needs at least 2 classes".into(),
                ));
            }
        }
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            if !s.features.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidDataset("non-finite feature".into()));
            }
            kind.check_label(s.label)?;
        }
        Ok(LocalDataset {
            kind,
            feature_dim,
            samples,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn model_dim(&self) -> usize {
        self.kind.model_dim(self.feature_dim)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Distinct class indices present, ascending.
    pub fn classes_present(&self) -> Vec<usize> {
        let mut classes: Vec<usize> = self
            .samples
            .iter()
            .map(|s| self.kind.class_of(s.label))
            .collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    fn sample_loss(&self, s: &Sample, x: &[f64]) -> f64 {
        match self.kind {
            LossKind::LeastSquares => {
                let r = dot(&s.features, x) - s.label;
                0.5 * r * r
            }
            LossKind::Logistic => softplus(-s.label * dot(&s.features, x)),
            LossKind::MultinomialLogistic { classes } => {
                let m = self.feature_dim;
                let scores: Vec<f64> = (0..classes)
                    .map(|c| dot(&s.features, &x[c * m..(c + 1) * m]))
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + scores.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - scores[s.label as usize]
            }
        }
    }

    /// `out += scale * grad h(x; s)`.
    fn add_sample_grad(&self, s: &Sample, x: &[f64], scale: f64, out: &mut [f64]) {
        match self.kind {
            LossKind::LeastSquares => {
                let r = dot(&s.features, x) - s.label;
                for (o, a) in out.iter_mut().zip(&s.features) {
                    *o += scale * r * a;
                }
            }
            LossKind::Logistic => {
                let margin = s.label * dot(&s.features, x);
                let coef = -s.label * sigmoid(-margin);
                for (o, a) in out.iter_mut().zip(&s.features) {
                    *o += scale * coef * a;
                }
            }
            LossKind::MultinomialLogistic { classes } => {
                let m = self.feature_dim;
                let scores: Vec<f64> = (0..classes)
                    .map(|c| dot(&s.features, &x[c * m..(c + 1) * m]))
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let target = s.label as usize;
                for c in 0..classes {
                    let p = exps[c] / total;
                    let coef = if c == target { p - 1.0 } else { p };
                    for (o, a) in out[c * m..(c + 1) * m].iter_mut().zip(&s.features) {
                        *o += scale * coef * a;
                    }
                }
            }
        }
    }

    /// Mean per-sample loss `g_i(x)`.
    pub fn loss(&self, x: &ModelVec) -> Result<f64> {
        x.check_dim(self.model_dim())?;
        let total: f64 = self
            .samples
            .iter()
            .map(|s| self.sample_loss(s, x.as_slice()))
            .sum();
        Ok(total / self.samples.len() as f64)
    }

    /// Exact full-batch gradient of `g_i` at `x`.
    pub fn gradient(&self, x: &ModelVec) -> Result<ModelVec> {
        x.check_dim(self.model_dim())?;
        let mut out = vec![0.0; self.model_dim()];
        let scale = 1.0 / self.samples.len() as f64;
        for s in &self.samples {
            self.add_sample_grad(s, x.as_slice(), scale, &mut out);
        }
        Ok(ModelVec(out))
    }

    /// Gradient of a single sample's loss.
    pub fn sample_gradient(&self, index: usize, x: &ModelVec) -> Result<ModelVec> {
        x.check_dim(self.model_dim())?;
        let s = self
            .samples
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("sample index {index} out of range")))?;
        let mut out = vec![0.0; self.model_dim()];
        self.add_sample_grad(s, x.as_slice(), 1.0, &mut out);
        Ok(ModelVec(out))
    }

    /// Minibatch gradient `(1/R) sum_r grad h(x; xi_r)` over `batch_size`
    /// samples drawn uniformly with replacement.
    pub fn stochastic_gradient<R: Rng + ?Sized>(
        &self,
        x: &ModelVec,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<ModelVec> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        x.check_dim(self.model_dim())?;
        let mut out = vec![0.0; self.model_dim()];
        let scale = 1.0 / batch_size as f64;
        let n = self.samples.len();
        for _ in 0..batch_size {
            let idx = rng.random_range(0..n);
            self.add_sample_grad(&self.samples[idx], x.as_slice(), scale, &mut out);
        }
        Ok(ModelVec(out))
    }

    /// Single-sample gradient variance `mean_r ||grad h(x; s_r) - grad g(x)||^2`,
    /// computed exhaustively over the dataset.
    pub fn per_sample_gradient_variance(&self, x: &ModelVec) -> Result<f64> {
        let full = self.gradient(x)?;
        let mut total = 0.0;
        for s in &self.samples {
            let mut g = vec![0.0; self.model_dim()];
            self.add_sample_grad(s, x.as_slice(), 1.0, &mut g);
            total += g
                .iter()
                .zip(full.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / self.samples.len() as f64)
    }

    /// Upper bound on the Lipschitz constant of `grad g_i`.
    pub fn smoothness_bound(&self) -> f64 {
        let mean_sq: f64 = self
            .samples
            .iter()
            .map(|s| dot(&s.features, &s.features))
            .sum::<f64>()
            / self.samples.len() as f64;
        let curvature = match self.kind {
            LossKind::LeastSquares => 1.0,
            LossKind::Logistic => 0.25,
            LossKind::MultinomialLogistic { .. } => 0.5,
        };
        curvature * mean_sq
    }
}

/// Edge device: private data plus its penalty weight `gamma_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub dataset: LocalDataset,
    pub gamma: f64,
}

/// Topology, device data, penalty weights and feasible set of the penalized
/// federated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FedProblem {
    dim: usize,
    feasible: BoxSet,
    servers: Vec<Vec<usize>>,
    devices: Vec<Device>,
    server_of: Vec<usize>,
}

impl FedProblem {
    /// `servers[n]` lists the devices attached to server `n`; every device
    /// must appear in exactly one list.
    pub fn new(feasible: BoxSet, servers: Vec<Vec<usize>>, devices: Vec<Device>) -> Result<Self> {
        if servers.is_empty() {
            return Err(Error::InvalidProblem("no servers".into()));
        }
        let dim = devices
            .first()
            .map(|d| d.dataset.model_dim())
            .ok_or_else(|| Error::InvalidProblem("no devices".into()))?;
        let mut server_of = vec![usize::MAX; devices.len()];
        for (n, list) in servers.iter().enumerate() {
            for &i in list {
                let slot = server_of.get_mut(i).ok_or_else(|| {
                    Error::InvalidProblem(format!("server {n} lists unknown device {i}"))
                })?;
                if *slot != usize::MAX {
                    return Err(Error::InvalidProblem(format!(
                        "device {i} assigned to servers {} and {n}",
                        *slot
                    )));
                }
                *slot = n;
            }
        }
        if let Some(i) = server_of.iter().position(|&n| n == usize::MAX) {
            return Err(Error::InvalidProblem(format!("device {i} has no server")));
        }
        for (i, d) in devices.iter().enumerate() {
            if !(d.gamma > 0.0 && d.gamma.is_finite()) {
                return Err(Error::InvalidProblem(format!(
                    "device {i} has non-positive penalty weight {}",
                    d.gamma
                )));
            }
            if d.dataset.model_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d.dataset.model_dim(),
                });
            }
        }
        Ok(FedProblem {
            dim,
            feasible,
            servers,
            devices,
            server_of,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feasible_set(&self) -> &BoxSet {
        &self.feasible
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn servers(&self) -> &[Vec<usize>] {
        &self.servers
    }

    pub fn devices_of(&self, server: usize) -> &[usize] {
        &self.servers[server]
    }

    pub fn server_of(&self, device: usize) -> usize {
        self.server_of[device]
    }

    pub fn device(&self, i: usize) -> &Device {
        &self.devices[i]
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.devices[i].gamma
    }

    pub fn max_gamma(&self) -> f64 {
        self.devices.iter().map(|d| d.gamma).fold(0.0, f64::max)
    }

    pub fn max_devices_per_server(&self) -> usize {
        self.servers.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `f_i(x, z) = g_i(x) + (gamma_i / 2) ||x - z||^2`.
    pub fn penalized_value(&self, device: usize, x: &ModelVec, z: &ModelVec) -> Result<f64> {
        z.check_dim(self.dim)?;
        let d = &self.devices[device];
        let g = d.dataset.loss(x)?;
        Ok(g + 0.5 * d.gamma * x.sub(z).norm_sq())
    }

    /// `grad_x f_i(x, z)` with the exact local gradient.
    pub fn penalized_gradient(
        &self,
        device: usize,
        x: &ModelVec,
        z: &ModelVec,
    ) -> Result<ModelVec> {
        z.check_dim(self.dim)?;
        let d = &self.devices[device];
        let mut g = d.dataset.gradient(x)?;
        g.axpy(d.gamma, &x.sub(z));
        Ok(g)
    }

    /// Total penalized objective with each device anchored at its server's model.
    pub fn objective(&self, xs: &[ModelVec], zs: &[ModelVec]) -> Result<f64> {
        let mut total = 0.0;
        for (i, x) in xs.iter().enumerate() {
            total += self.penalized_value(i, x, &zs[self.server_of[i]])?;
        }
        Ok(total)
    }
}
