//! Latency distributions, Monte Carlo order statistics and the
//! sync-versus-async latency ratio `r_{B,N} = E[tau_(B)] / E[tau_(N)]`.
//!
//! Every distribution is sampled by inverse transform, `F^-1(U)` with
//! `U ~ Uniform(0, 1)`, so each draw consumes exactly one uniform variate and
//! switching distribution kinds keeps the underlying random streams aligned.

use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::Rng;

use crate::error::{Error, Result};

/// Distribution of a latency in seconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LatencyDistribution {
    Exponential { mean: f64 },
    Weibull { shape: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
    Deterministic { value: f64 },
}

impl LatencyDistribution {
    pub fn exponential(mean: f64) -> Result<Self> {
        Self::Exponential { mean }.validated()
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        Self::Weibull { shape, scale }.validated()
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::Uniform { lo, hi }.validated()
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        Self::Deterministic { value }.validated()
    }

    fn validated(self) -> Result<Self> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let ok = match self {
            Self::Exponential { mean } => pos(mean),
            Self::Weibull { shape, scale } => pos(shape) && pos(scale),
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi,
            Self::Deterministic { value } => value.is_finite() && value >= 0.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidDistribution(format!(
                "invalid parameters in {self}"
            )))
        }
    }

    /// Inverse CDF at `u in (0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile level {u} outside (0, 1)"
            )));
        }
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            Self::Exponential { mean } => -mean * (-u).ln_1p(),
            Self::Weibull { shape, scale } => scale * (-(-u).ln_1p()).powf(1.0 / shape),
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::Deterministic { value } => value,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-x / mean).exp_m1()
                }
            }
            Self::Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
            Self::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Deterministic { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Density; `None` for the point mass.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        match *self {
            Self::Exponential { mean } => Some(if x < 0.0 {
                0.0
            } else {
                (-x / mean).exp() / mean
            }),
            Self::Weibull { shape, scale } => Some(if x < 0.0 {
                0.0
            } else {
                let r = x / scale;
                shape / scale * r.powf(shape - 1.0) * (-r.powf(shape)).exp()
            }),
            Self::Uniform { lo, hi } => Some(if x < lo || x > hi {
                0.0
            } else {
                1.0 / (hi - lo)
            }),
            Self::Deterministic { .. } => None,
        }
    }

    /// Right end of the support, if bounded.
    pub fn support_upper(&self) -> Option<f64> {
        match *self {
            Self::Uniform { hi, .. } => Some(hi),
            Self::Deterministic { value } => Some(value),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile_unchecked(u)
    }
}

impl fmt::Display for LatencyDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exponential { mean } => write!(f, "exp:{mean}"),
            Self::Weibull { shape, scale } => write!(f, "weibull:{shape}:{scale}"),
            Self::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            Self::Deterministic { value } => write!(f, "det:{value}"),
        }
    }
}

impl FromStr for LatencyDistribution {
    type Err = Error;

    /// Parses `exp:MEAN`, `weibull:SHAPE:SCALE`, `uniform:LO:HI` or `det:VALUE`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDistribution(format!("cannot parse distribution `{s}`"));
        let mut parts = s.trim().split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let params: Vec<f64> = parts
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, params.as_slice()) {
            ("exp" | "exponential", [mean]) => Self::exponential(*mean),
            ("weibull", [shape, scale]) => Self::weibull(*shape, *scale),
            ("uniform", [lo, hi]) => Self::uniform(*lo, *hi),
            ("det" | "deterministic", [value]) => Self::deterministic(*value),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for LatencyDistribution {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LatencyDistribution> for String {
    fn from(d: LatencyDistribution) -> String {
        d.to_string()
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

fn check_order(n: usize, k: usize, trials: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("order {k} outside 1..={n}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    Ok(())
}

/// Draws `trials` sorted `n`-samples and hands each to `visit`.
fn for_each_sorted_sample<R, F>(
    dist: &LatencyDistribution,
    n: usize,
    trials: usize,
    rng: &mut R,
    mut visit: F,
) where
    R: Rng + ?Sized,
    F: FnMut(&[f64]),
{
    let mut buf = vec![0.0; n];
    for _ in 0..trials {
        for v in buf.iter_mut() {
            *v = dist.sample(rng);
        }
        buf.sort_unstable_by(f64::total_cmp);
        visit(&buf);
    }
}

/// Monte Carlo estimate of `E[tau_(k)]`, the `k`-th smallest of `n` i.i.d. draws.
pub fn order_statistic_mean_empirical<R: Rng + ?Sized>(
    dist: &LatencyDistribution,
    n: usize,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Estimate> {
    check_order(n, k, trials)?;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for_each_sorted_sample(dist, n, trials, rng, |s| {
        sum += s[k - 1];
        sum_sq += s[k - 1] * s[k - 1];
    });
    let t = trials as f64;
    let mean = sum / t;
    let var = if trials > 1 {
        ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(Estimate {
        mean,
        std_error: (var / t).sqrt(),
    })
}

/// Empirical `r_{B,N}` for several `B` at once, all computed from the same
/// draws. Standard errors use the delta method for a ratio of means.
pub fn latency_ratios<R: Rng + ?Sized>(
    dist: &LatencyDistribution,
    n: usize,
    bs: &[usize],
    trials: usize,
    rng: &mut R,
) -> Result<Vec<Estimate>> {
    for &b in bs {
        check_order(n, b, trials)?;
    }
    let m = bs.len();
    let (mut sx, mut sxx, mut sxy) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let (mut sy, mut syy) = (0.0, 0.0);
    for_each_sorted_sample(dist, n, trials, rng, |s| {
        let y = s[n - 1];
        sy += y;
        syy += y * y;
        for (j, &b) in bs.iter().enumerate() {
            let x = s[b - 1];
            sx[j] += x;
            sxx[j] += x * x;
            sxy[j] += x * y;
        }
    });
    let t = trials as f64;
    let my = sy / t;
    let vy = syy / t - my * my;
    Ok((0..m)
        .map(|j| {
            if bs[j] == n {
                return Estimate {
                    mean: 1.0,
                    std_error: 0.0,
                };
            }
            let mx = sx[j] / t;
            let r = mx / my;
            let vx = sxx[j] / t - mx * mx;
            let cxy = sxy[j] / t - mx * my;
            let var = ((vx - 2.0 * r * cxy + r * r * vy) / (my * my * t)).max(0.0);
            Estimate {
                mean: r,
                std_error: var.sqrt(),
            }
        })
        .collect())
}

/// Empirical `r_{B,N}`.
pub fn latency_ratio<R: Rng + ?Sized>(
    dist: &LatencyDistribution,
    n: usize,
    b: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Estimate> {
    Ok(latency_ratios(dist, n, &[b], trials, rng)?[0])
}

fn check_beta(n: usize, beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta = {beta} outside (0, 1)"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 servers".into()));
    }
    Ok(())
}

/// Large-`N` approximation `F^-1(beta) / F^-1(1 - 1/N)` of `r_{beta N, N}`.
pub fn latency_ratio_asymptotic(dist: &LatencyDistribution, n: usize, beta: f64) -> Result<f64> {
    check_beta(n, beta)?;
    let top = dist.quantile(1.0 - 1.0 / n as f64)?;
    let q = dist.quantile(beta)?;
    if top == 0.0 {
        return Ok(1.0);
    }
    Ok(q / top)
}

/// Closed form of the large-`N` approximation for a Weibull law of shape `k`:
/// `(-ln(1 - beta))^(1/k) (ln N)^(-1/k)`, independent of the scale.
pub fn weibull_ratio_approximation(shape: f64, n: usize, beta: f64) -> f64 {
    (-(-beta).ln_1p()).powf(1.0 / shape) * (n as f64).ln().powf(-1.0 / shape)
}

/// Asymptotic variance `beta (1 - beta) / (N f(F^-1(beta))^2)` of the
/// `beta N`-th order statistic. Reported only; `None` for a point mass.
pub fn order_statistic_asymptotic_variance(
    dist: &LatencyDistribution,
    n: usize,
    beta: f64,
) -> Result<Option<f64>> {
    check_beta(n, beta)?;
    let q = dist.quantile(beta)?;
    Ok(dist
        .pdf(q)
        .map(|f| beta * (1.0 - beta) / (n as f64 * f * f)))
}

/// How the processing time of `K` epochs is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochScaling {
    /// `K` times one processing draw.
    #[default]
    SingleDraw,
    /// Sum of `K` independent processing draws.
    IndependentSums,
}

/// Arrival draw and total compute time of one activated device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceLatency {
    pub arrival: f64,
    pub compute: f64,
}

impl DeviceLatency {
    pub fn total(&self) -> f64 {
        self.arrival + self.compute
    }
}

/// Draws `tau_i = tau_arrival + K tau_process` for one activated device.
pub fn sample_device_latency<R: Rng + ?Sized>(
    arrival: &LatencyDistribution,
    process: &LatencyDistribution,
    epochs: usize,
    scaling: EpochScaling,
    rng: &mut R,
) -> Result<DeviceLatency> {
    if epochs == 0 {
        return Err(Error::InvalidArgument(
            "epoch count must be at least 1".into(),
        ));
    }
    let a = arrival.sample(rng);
    let compute = match scaling {
        EpochScaling::SingleDraw => epochs as f64 * process.sample(rng),
        EpochScaling::IndependentSums => (0..epochs).map(|_| process.sample(rng)).sum(),
    };
    Ok(DeviceLatency {
        arrival: a,
        compute,
    })
}

/// Total latency of one activated device, `tau_arrival + K tau_process`.
pub fn device_round_latency<R: Rng + ?Sized>(
    arrival: &LatencyDistribution,
    process: &LatencyDistribution,
    epochs: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(sample_device_latency(arrival, process, epochs, EpochScaling::SingleDraw, rng)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(2024)
    }

    #[test]
    fn quantile_examples() {
        let e = LatencyDistribution::exponential(1.0).unwrap();
        assert!((e.quantile(0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let u = LatencyDistribution::uniform(0.0, 1.0).unwrap();
        assert_eq!(u.quantile(0.25).unwrap(), 0.25);
        let w = LatencyDistribution::weibull(1.0, 1.0).unwrap();
        for p in [0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((w.quantile(p).unwrap() - e.quantile(p).unwrap()).abs() < 1e-14);
        }
        assert!(e.quantile(0.0).is_err());
        assert!(e.quantile(1.0).is_err());
        assert!(e.quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let dists = [
            LatencyDistribution::exponential(2.0).unwrap(),
            LatencyDistribution::weibull(0.5, 3.0).unwrap(),
            LatencyDistribution::weibull(2.0, 0.7).unwrap(),
            LatencyDistribution::uniform(1.0, 4.0).unwrap(),
        ];
        for d in dists {
            for p in [0.05, 0.5, 0.9] {
                assert!((d.cdf(d.quantile(p).unwrap()) - p).abs() < 1e-12, "{d}");
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(LatencyDistribution::exponential(0.0).is_err());
        assert!(LatencyDistribution::weibull(-1.0, 1.0).is_err());
        assert!(LatencyDistribution::uniform(2.0, 2.0).is_err());
        assert!(LatencyDistribution::deterministic(-1.0).is_err());
        assert!(LatencyDistribution::deterministic(0.0).is_ok());
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["exp:2", "weibull:0.5:3", "uniform:0:1", "det:1.5"] {
            let d: LatencyDistribution = s.parse().unwrap();
            assert_eq!(d.to_string().parse::<LatencyDistribution>().unwrap(), d);
        }
        assert!("gamma:1".parse::<LatencyDistribution>().is_err());
        assert!("exp:1:2".parse::<LatencyDistribution>().is_err());
        assert!("exp:-1".parse::<LatencyDistribution>().is_err());
    }

    #[test]
    fn order_statistics_of_exponential_pairs() {
        let e = LatencyDistribution::exponential(1.0).unwrap();
        // E[max of 2] = 1 + 1/2, E[min of 2] = 1/2
        let max = order_statistic_mean_empirical(&e, 2, 2, 100_000, &mut rng()).unwrap();
        assert!((max.mean - 1.5).abs() < 3.0 * max.std_error, "{max:?}");
        let min = order_statistic_mean_empirical(&e, 2, 1, 100_000, &mut rng()).unwrap();
        assert!((min.mean - 0.5).abs() < 3.0 * min.std_error, "{min:?}");
        let d = LatencyDistribution::deterministic(3.25).unwrap();
        for k in 1..=4 {
            let est = order_statistic_mean_empirical(&d, 4, k, 10, &mut rng()).unwrap();
            assert_eq!(est.mean, 3.25);
        }
        assert!(order_statistic_mean_empirical(&e, 3, 4, 10, &mut rng()).is_err());
    }

    #[test]
    fn ratio_at_full_participation_is_one() {
        let e = LatencyDistribution::exponential(1.0).unwrap();
        assert_eq!(latency_ratio(&e, 7, 7, 100, &mut rng()).unwrap().mean, 1.0);
    }

    #[test]
    fn asymptotic_examples() {
        let e = LatencyDistribution::exponential(1.0).unwrap();
        let r = latency_ratio_asymptotic(&e, 100, 0.5).unwrap();
        assert!((r - std::f64::consts::LN_2 / 100f64.ln()).abs() < 1e-12);
        assert!((r - 0.1505).abs() < 1e-4);

        for k in [0.5, 1.0, 2.0, 3.5] {
            let w = LatencyDistribution::weibull(k, 4.2).unwrap();
            for beta in [0.3, 0.5] {
                let a = latency_ratio_asymptotic(&w, 1000, beta).unwrap();
                // (-ln(1 - 1/N))^(1/k) ~ (ln N)^(1/k) only asymptotically; the
                // exact quantile ratio uses ln(N) precisely because
                // F^-1(1 - 1/N) = scale * (ln N)^(1/k).
                assert!((a - weibull_ratio_approximation(k, 1000, beta)).abs() < 1e-12);
            }
        }

        let u = LatencyDistribution::uniform(0.0, 3.0).unwrap();
        let far = latency_ratio_asymptotic(&u, 1_000_000, 0.3).unwrap();
        assert!((far - 0.3).abs() < 1e-5);
        assert!(latency_ratio_asymptotic(&u, 1, 0.3).is_err());
        assert!(latency_ratio_asymptotic(&u, 10, 1.0).is_err());
    }

    #[test]
    fn asymptotic_variance_of_uniform_median() {
        let u = LatencyDistribution::uniform(0.0, 1.0).unwrap();
        let v = order_statistic_asymptotic_variance(&u, 100, 0.5)
            .unwrap()
            .unwrap();
        assert!((v - 0.25 / 100.0).abs() < 1e-15);
        let d = LatencyDistribution::deterministic(1.0).unwrap();
        assert_eq!(
            order_statistic_asymptotic_variance(&d, 100, 0.5).unwrap(),
            None
        );
    }

    #[test]
    fn device_latency_examples() {
        let a = LatencyDistribution::deterministic(2.0).unwrap();
        let p = LatencyDistribution::deterministic(1.0).unwrap();
        assert_eq!(device_round_latency(&a, &p, 3, &mut rng()).unwrap(), 5.0);
        let zero = LatencyDistribution::deterministic(0.0).unwrap();
        assert_eq!(
            device_round_latency(&zero, &zero, 1, &mut rng()).unwrap(),
            0.0
        );
        assert!(device_round_latency(&a, &p, 0, &mut rng()).is_err());
        let sums =
            sample_device_latency(&a, &p, 4, EpochScaling::IndependentSums, &mut rng()).unwrap();
        assert_eq!(sums.total(), 6.0);
    }

    #[test]
    fn device_latency_mean_is_linear() {
        // E[tau] = 2 + E[K] * 1 with K uniform on 1..=5 (E[K] = 3)
        let a = LatencyDistribution::exponential(2.0).unwrap();
        let p = LatencyDistribution::exponential(1.0).unwrap();
        let mut r = rng();
        let trials = 200_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..trials {
            let k = r.random_range(1..=5);
            let t = device_round_latency(&a, &p, k, &mut r).unwrap();
            sum += t;
            sum_sq += t * t;
        }
        let mean = sum / trials as f64;
        let se = ((sum_sq / trials as f64 - mean * mean) / trials as f64).sqrt();
        assert!((mean - 5.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }
}
