//! Data sources and label-diversity partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{LocalDataset, LossKind, Sample};

/// Gaussian class clusters with a constant bias feature appended.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: LossKind,
    /// Raw features per sample (the bias makes the stored dimension one larger).
    pub features: usize,
    /// Standard deviation of the class centers.
    pub separation: f64,
    /// Within-class standard deviation (label noise for regression).
    pub noise: f64,
    pub samples_per_class: usize,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates a labelled pool. Classification pools hold
/// `samples_per_class` points per class, interleaved by class; regression
/// pools hold that many points with `y = w* . a + noise`.
pub fn synthetic_pool<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<Sample>> {
    if spec.features == 0 || spec.samples_per_class == 0 {
        return Err(Error::InvalidDataset(
            "synthetic data needs features and samples".into(),
        ));
    }
    if !(spec.separation >= 0.0 && spec.noise >= 0.0) {
        return Err(Error::InvalidDataset(
            "separation and noise must be nonnegative".into(),
        ));
    }
    let with_bias = |mut f: Vec<f64>| {
        f.push(1.0);
        f
    };
    let mut pool = Vec::new();
    match spec.kind {
        LossKind::LeastSquares => {
            let w = gaussian(
                rng,
                spec.features + 1,
                1.0 / ((spec.features + 1) as f64).sqrt(),
            );
            for _ in 0..spec.samples_per_class {
                let a = with_bias(gaussian(rng, spec.features, 1.0));
                let y =
                    crate::model::dot(&a, &w) + spec.noise * rng.sample::<f64, _>(StandardNormal);
                pool.push(Sample::new(a, y));
            }
        }
        kind => {
            let classes = kind.num_classes();
            let centers: Vec<Vec<f64>> = (0..classes)
                .map(|_| gaussian(rng, spec.features, spec.separation))
                .collect();
            for _ in 0..spec.samples_per_class {
                for (c, center) in centers.iter().enumerate() {
                    let f = center
                        .iter()
                        .map(|m| m + spec.noise * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    pool.push(Sample::new(with_bias(f), kind.label_of(c)));
                }
            }
        }
    }
    Ok(pool)
}

/// Reads samples from a CSV file with a header row; the column named
/// `label` holds the label and every other column is a feature.
pub fn load_csv(path: &Path, kind: LossKind) -> Result<Vec<Sample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| {
            Error::InvalidDataset(format!("{} has no `label` column", path.display()))
        })?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::InvalidDataset(format!(
                    "{}: row {}: `{s}` is not a number",
                    path.display(),
                    line + 2
                ))
            })
        };
        let mut features = Vec::with_capacity(record.len().saturating_sub(1));
        let mut label = 0.0;
        for (k, field) in record.iter().enumerate() {
            if k == label_col {
                label = parse(field)?;
            } else {
                features.push(parse(field)?);
            }
        }
        out.push(Sample::new(features, label));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // Validates labels and dimensions.
    LocalDataset::new(kind, out.clone())?;
    Ok(out)
}

/// Label-diversity restriction of a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    /// Distinct classes per device.
    pub diversity: usize,
    pub samples_per_device: usize,
}

/// Classes held by device `d`: `(d * diversity + j) mod classes`, `j < diversity`.
pub fn device_classes(device: usize, diversity: usize, classes: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..diversity)
        .map(|j| (device * diversity + j) % classes)
        .collect();
    out.sort_unstable();
    out
}

/// Splits `samples_per_device` over the device's classes as evenly as possible.
fn class_quotas(samples: usize, diversity: usize) -> Vec<usize> {
    (0..diversity)
        .map(|j| samples / diversity + usize::from(j < samples % diversity))
        .collect()
}

/// Assigns pool indices to `devices` devices, each drawing from exactly
/// `spec.diversity` classes (round-robin class assignment, random samples
/// within each class, without replacement).
pub fn partition_by_diversity<R: Rng + ?Sized>(
    pool: &[Sample],
    kind: LossKind,
    devices: usize,
    spec: &PartitionSpec,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let classes = kind.num_classes();
    if spec.diversity == 0 || spec.diversity > classes {
        return Err(Error::InvalidDataset(format!(
            "diversity {} must lie in 1..={classes}",
            spec.diversity
        )));
    }
    if spec.samples_per_device < spec.diversity {
        return Err(Error::InvalidDataset(format!(
            "{} samples cannot cover {} classes",
            spec.samples_per_device, spec.diversity
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (k, s) in pool.iter().enumerate() {
        let c = kind.class_of(s.label);
        if c >= classes {
            return Err(Error::InvalidDataset(format!(
                "label {} outside the class range",
                s.label
            )));
        }
        by_class[c].push(k);
    }
    let quotas = class_quotas(spec.samples_per_device, spec.diversity);
    let mut needed = vec![0usize; classes];
    for d in 0..devices {
        for (c, q) in device_classes(d, spec.diversity, classes)
            .into_iter()
            .zip(&quotas)
        {
            needed[c] += q;
        }
    }
    for c in 0..classes {
        if needed[c] > by_class[c].len() {
            return Err(Error::InsufficientClassData {
                class: c,
                needed: needed[c],
                available: by_class[c].len(),
            });
        }
    }
    for idx in by_class.iter_mut() {
        idx.shuffle(rng);
    }
    let mut cursor = vec![0usize; classes];
    Ok((0..devices)
        .map(|d| {
            let mut mine = Vec::with_capacity(spec.samples_per_device);
            for (c, q) in device_classes(d, spec.diversity, classes)
                .into_iter()
                .zip(&quotas)
            {
                mine.extend_from_slice(&by_class[c][cursor[c]..cursor[c] + q]);
                cursor[c] += q;
            }
            mine
        })
        .collect())
}

/// Materializes device datasets from partition indices.
pub fn build_datasets(
    pool: &[Sample],
    kind: LossKind,
    parts: &[Vec<usize>],
) -> Result<Vec<LocalDataset>> {
    parts
        .iter()
        .map(|idx| LocalDataset::new(kind, idx.iter().map(|&k| pool[k].clone()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(classes: usize, per_class: usize) -> Vec<Sample> {
        let spec = SyntheticSpec {
            kind: LossKind::MultinomialLogistic { classes },
            features: 3,
            separation: 2.0,
            noise: 1.0,
            samples_per_class: per_class,
        };
        synthetic_pool(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn synthetic_pool_shapes() {
        let p = pool(4, 10);
        assert_eq!(p.len(), 40);
        assert!(p
            .iter()
            .all(|s| s.features.len() == 4 && s.features[3] == 1.0));
        let reg = SyntheticSpec {
            kind: LossKind::LeastSquares,
            features: 2,
            separation: 0.0,
            noise: 0.1,
            samples_per_class: 7,
        };
        assert_eq!(
            synthetic_pool(&reg, &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap()
                .len(),
            7
        );
    }

    #[test]
    fn each_device_sees_exactly_its_classes() {
        let kind = LossKind::MultinomialLogistic { classes: 10 };
        let p = pool(10, 60);
        let spec = PartitionSpec {
            diversity: 3,
            samples_per_device: 30,
        };
        let parts =
            partition_by_diversity(&p, kind, 20, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ds = build_datasets(&p, kind, &parts).unwrap();
        for (d, data) in ds.iter().enumerate() {
            assert_eq!(data.len(), 30);
            assert_eq!(data.classes_present(), device_classes(d, 3, 10));
        }
    }

    #[test]
    fn partition_is_disjoint() {
        let kind = LossKind::MultinomialLogistic { classes: 4 };
        let p = pool(4, 50);
        let spec = PartitionSpec {
            diversity: 4,
            samples_per_device: 40,
        };
        let parts =
            partition_by_diversity(&p, kind, 5, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut all: Vec<usize> = parts.concat();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, 200);
    }

    #[test]
    fn insufficient_data_names_the_class() {
        let kind = LossKind::MultinomialLogistic { classes: 3 };
        let p = pool(3, 5);
        let spec = PartitionSpec {
            diversity: 1,
            samples_per_device: 6,
        };
        let err = partition_by_diversity(&p, kind, 3, &spec, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap_err();
        assert_eq!(
            err,
            Error::InsufficientClassData {
                class: 0,
                needed: 6,
                available: 5
            }
        );
        let bad = PartitionSpec {
            diversity: 4,
            samples_per_device: 6,
        };
        assert!(
            partition_by_diversity(&p, kind, 3, &bad, &mut ChaCha8Rng::seed_from_u64(3)).is_err()
        );
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "f1,label,f2\n1.0,1,2.0\n-1.0,-1,0.5\n").unwrap();
        let s = load_csv(&path, LossKind::Logistic).unwrap();
        assert_eq!(s[0], Sample::new(vec![1.0, 2.0], 1.0));
        assert_eq!(s[1], Sample::new(vec![-1.0, 0.5], -1.0));
        std::fs::write(&path, "f1,label\n1.0,3\n").unwrap();
        assert!(load_csv(&path, LossKind::Logistic).is_err());
        std::fs::write(&path, "f1,f2\n1.0,3\n").unwrap();
        assert!(load_csv(&path, LossKind::Logistic).is_err());
    }
}
