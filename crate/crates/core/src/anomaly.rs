//! Two-sample Kolmogorov–Smirnov screening of test images against
//! per-class reference likelihood distributions.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::classifier::{LikelihoodRecord, PcsModel};
use crate::error::{PcsError, Result};

pub const DEFAULT_KS_ALPHA: f64 = 0.001;
pub const MIN_REFERENCE_SAMPLES: usize = 20;
pub const MIN_TEST_SAMPLES: usize = 5;
pub const HISTOGRAM_BINS: usize = 32;

/// In-class normalised likelihood values collected during cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution {
    pub label: String,
    pub samples: Vec<f64>,
}

impl ReferenceDistribution {
    pub fn new(label: impl Into<String>, samples: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if samples.len() < MIN_REFERENCE_SAMPLES {
            return Err(PcsError::InsufficientData(format!(
                "reference for `{label}` has {} samples, needs {MIN_REFERENCE_SAMPLES}",
                samples.len()
            )));
        }
        if let Some(v) = samples.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(PcsError::InvalidInput(format!(
                "reference value {v} outside (0,1)"
            )));
        }
        Ok(Self { label, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One value per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_samples(path, &self.samples)
    }
}

pub fn save_samples(path: impl AsRef<Path>, samples: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for v in samples {
        writeln!(f, "{v:e}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse()
                .map_err(|_| PcsError::Format(format!("bad sample on line {}: `{l}`", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsDecision {
    pub statistic: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub flagged: bool,
    pub assigned_class: usize,
    pub assigned_label: String,
}

/// Two-sided statistic `sup_x |F_a(x) − F_b(x)|` over the empirical CDFs.
pub fn ks_statistic(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(PcsError::InsufficientData(
            "KS statistic needs two non-empty samples".into(),
        ));
    }
    if samples_a.iter().chain(samples_b).any(|v| v.is_nan()) {
        return Err(PcsError::InvalidInput("KS samples contain NaN".into()));
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    // Walk the merged order; step past every copy of the current value in
    // both samples before comparing, so ties are handled exactly.
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic inverse of the Kolmogorov distribution.
pub fn ks_c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PcsError::Domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok((-(alpha / 2.0).ln() / 2.0).sqrt())
}

/// `c(α)·sqrt((H+I)/(H·I))`.
pub fn ks_critical(alpha: f64, h: usize, i: usize) -> Result<f64> {
    if h == 0 || i == 0 {
        return Err(PcsError::Domain("sample sizes must be positive".into()));
    }
    let (h, i) = (h as f64, i as f64);
    Ok(ks_c_alpha(alpha)? * ((h + i) / (h * i)).sqrt())
}

/// Compares the test image's assigned-class likelihood column with that
/// class's reference sample.
pub fn detect_anomaly(
    record: &LikelihoodRecord,
    model: &PcsModel,
    alpha: f64,
) -> Result<KsDecision> {
    detect_anomaly_with(record, model, alpha, MIN_TEST_SAMPLES)
}

pub fn detect_anomaly_with(
    record: &LikelihoodRecord,
    model: &PcsModel,
    alpha: f64,
    min_test_samples: usize,
) -> Result<KsDecision> {
    let k = record.predicted;
    let test = record.class_column(k);
    if test.len() < min_test_samples {
        return Err(PcsError::InsufficientData(format!(
            "{} test patches, needs {min_test_samples}",
            test.len()
        )));
    }
    let reference = model
        .reference_samples
        .get(k)
        .filter(|r| !r.is_empty())
        .ok_or_else(|| PcsError::InsufficientData(format!("no reference sample for class {k}")))?;
    let statistic = ks_statistic(reference, &test)?;
    let threshold = ks_critical(alpha, reference.len(), test.len())?;
    Ok(KsDecision {
        statistic,
        threshold,
        alpha,
        flagged: statistic > threshold,
        assigned_class: k,
        assigned_label: model.class_labels()[k].clone(),
    })
}

/// Frequencies of `samples` in `bins` uniform bins over (0,1), normalised
/// to sum to one. Diagnostics only; the test itself uses the raw samples.
pub fn histogram(samples: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    if samples.is_empty() || bins == 0 {
        return counts;
    }
    for &v in samples {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let total = samples.len() as f64;
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_unit_values() {
        let a = [0.3, 0.1, 0.7];
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[0.0; 3], &[1.0; 3]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.5, 2.5]).unwrap(), 0.5);
        assert!(ks_statistic(&[], &a).is_err());
    }

    #[test]
    fn ks_ties_across_samples() {
        // F_a jumps to 1 at x=1; F_b reaches 0.5 at 1 and 1 at 2.
        assert_eq!(ks_statistic(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn critical_values() {
        let c = ks_c_alpha(0.001).unwrap();
        assert!((c - 1.949_5).abs() < 1e-4);
        assert!((ks_critical(0.001, 100, 100).unwrap() - 0.275_70).abs() < 1e-4);
        assert!((ks_critical(0.001, 1000, 1000).unwrap() - 0.087_19).abs() < 1e-4);
        assert!(ks_critical(1.5, 10, 10).is_err());
        assert!(ks_critical(0.0, 10, 10).is_err());
    }

    #[test]
    fn reference_validation() {
        assert!(ReferenceDistribution::new("a", vec![0.5; 10]).is_err());
        assert!(ReferenceDistribution::new("a", vec![1.0; 30]).is_err());
        assert!(ReferenceDistribution::new("a", vec![0.5; 30]).is_ok());
    }

    #[test]
    fn histogram_sums_to_one() {
        let h = histogram(&[0.0, 0.5, 0.99, 1.0], HISTOGRAM_BINS);
        assert_eq!(h.len(), 32);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h[31], 0.5);
    }

    #[test]
    fn samples_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ref.txt");
        let v = vec![0.125, 0.3333333333333333, 1e-7];
        save_samples(&p, &v).unwrap();
        assert_eq!(load_samples(&p).unwrap(), v);
    }
}
