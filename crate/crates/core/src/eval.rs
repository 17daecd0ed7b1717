//! Confusion-matrix metrics, per-image evaluation and the whole-image SRC
//! baseline.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::anomaly::{detect_anomaly, KsDecision};
use crate::classifier::{classify_patch_set, LikelihoodRecord, PcsModel};
use crate::dictionary::{normalize_columns, Dictionary};
use crate::error::{dim, PcsError, Result};
use crate::image::{Image, WindowRegime};
use crate::patches::{intensity_mask, sample_patches};
use crate::rng::{derive_seed, rng_from_seed};
use crate::solver::solve_l1;
use crate::synth::{apply_rayleigh_noise, NoiseSpec};

/// Written in CSV cells where a metric has no defined value.
pub const UNDEFINED: &str = "NA";

/// Test image with its true class index.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Image,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetadata {
    pub train_size: usize,
    pub regime: Option<WindowRegime>,
    pub sigma: f64,
    pub seed: u64,
    pub partition: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_labels: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for a class with no test images.
    pub recall: Vec<Option<f64>>,
    /// `None` for a class that was never predicted.
    pub precision: Vec<Option<f64>>,
    pub mean_recall: f64,
    pub mean_precision: f64,
    /// Classes left out of `mean_precision` because they were never predicted.
    pub undefined_precision: usize,
    pub metadata: RunMetadata,
}

impl EvalReport {
    pub fn from_predictions(
        class_labels: Vec<String>,
        pairs: &[(usize, usize)],
        metadata: RunMetadata,
    ) -> Result<Self> {
        let k = class_labels.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for &(t, p) in pairs {
            if t >= k || p >= k {
                return Err(dim(format!("class index out of range for {k} classes")));
            }
            confusion[t][p] += 1;
        }
        let recall: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let support: usize = confusion[c].iter().sum();
                (support > 0).then(|| confusion[c][c] as f64 / support as f64)
            })
            .collect();
        let precision: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
                (predicted > 0).then(|| confusion[c][c] as f64 / predicted as f64)
            })
            .collect();
        let mean = |v: &[Option<f64>]| {
            let defined: Vec<f64> = v.iter().flatten().copied().collect();
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        };
        Ok(Self {
            mean_recall: mean(&recall),
            mean_precision: mean(&precision),
            undefined_precision: precision.iter().filter(|p| p.is_none()).count(),
            class_labels,
            confusion,
            recall,
            precision,
            metadata,
        })
    }

    pub fn support(&self, class: usize) -> usize {
        self.confusion[class].iter().sum()
    }

    /// `class,recall,precision,support`, one row per class.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "recall", "precision", "support"])?;
        for (c, label) in self.class_labels.iter().enumerate() {
            w.write_record([
                label.clone(),
                fmt_metric(self.recall[c]),
                fmt_metric(self.precision[c]),
                self.support(c).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.6}"))
}

/// Outcome for one test image.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub class: usize,
    pub record: LikelihoodRecord,
    pub ks: Option<KsDecision>,
}

fn degrade(image: &Image, noise: Option<&NoiseSpec>, index: usize) -> Result<Image> {
    match noise {
        Some(n) if n.sigma > 0.0 => apply_rayleigh_noise(
            image,
            &NoiseSpec {
                seed: derive_seed(n.seed, index as u64),
                ..*n
            },
        ),
        _ => Ok(image.clone()),
    }
}

/// Masks, samples and classifies one image with the model's patch settings.
/// `stream` selects the patch sampling stream.
pub fn classify_image(image: &Image, model: &PcsModel, stream: u64) -> Result<LikelihoodRecord> {
    let pc = &model.patch_config;
    if image.height() < pc.patch_height || image.width() < pc.patch_width {
        return Err(dim(format!(
            "image {}x{} is smaller than the {}x{} patch",
            image.height(),
            image.width(),
            pc.patch_height,
            pc.patch_width
        )));
    }
    let mask = intensity_mask(image, pc.threshold_percentile)?;
    let mut rng = rng_from_seed(derive_seed(pc.seed, stream));
    let patches = sample_patches(image, &mask, pc, &mut rng)?;
    classify_patch_set(&patches, model)
}

/// Runs every test image end to end. Noise, when given, is applied per
/// image with a seed derived from `noise.seed` and the image position.
/// `ks_alpha` adds an anomaly decision per image.
pub fn run_images(
    model: &PcsModel,
    tests: &[LabeledImage],
    noise: Option<&NoiseSpec>,
    ks_alpha: Option<f64>,
) -> Result<Vec<ImageOutcome>> {
    tests
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let image = degrade(&t.image, noise, i)?;
            let record = classify_image(&image, model, i as u64)?;
            let ks = ks_alpha
                .map(|a| detect_anomaly(&record, model, a))
                .transpose()?;
            Ok(ImageOutcome {
                class: t.class,
                record,
                ks,
            })
        })
        .collect()
}

/// End-to-end evaluation of `model` on labelled test images.
pub fn evaluate(
    model: &PcsModel,
    tests: &[LabeledImage],
    regime: WindowRegime,
    noise: Option<&NoiseSpec>,
) -> Result<EvalReport> {
    check_labels(tests, model.num_classes())?;
    let outcomes = run_images(model, tests, noise, None)?;
    let pairs: Vec<(usize, usize)> = outcomes
        .iter()
        .map(|o| (o.class, o.record.predicted))
        .collect();
    EvalReport::from_predictions(
        model.class_labels().to_vec(),
        &pairs,
        RunMetadata {
            train_size: 0,
            regime: Some(regime),
            sigma: noise.map_or(0.0, |n| n.sigma),
            seed: model.patch_config.seed,
            partition: 0,
        },
    )
}

fn check_labels(tests: &[LabeledImage], k: usize) -> Result<()> {
    if let Some(t) = tests.iter().find(|t| t.class >= k) {
        return Err(PcsError::InvalidInput(format!(
            "test label {} is not a model class (have {k})",
            t.class
        )));
    }
    Ok(())
}

/// Whole-image sparse reconstruction classifier: every training image is one
/// unit-norm column; a test image is ℓ1-coded against all of them and
/// assigned to the class whose coefficients leave the smallest residual.
#[derive(Debug, Clone)]
pub struct SrcBaseline {
    dictionary: Dictionary,
    shape: (usize, usize),
    pub lambda: f64,
}

pub const DEFAULT_SRC_LAMBDA: f64 = 0.01;

impl SrcBaseline {
    /// `train[k]` holds the training images of class k; all images must
    /// share one size.
    pub fn train(train: &[Vec<Image>], labels: &[String], lambda: f64) -> Result<Self> {
        if train.len() < 2 || labels.len() != train.len() {
            return Err(PcsError::InvalidInput(
                "SRC needs at least two labelled classes".into(),
            ));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(PcsError::Domain("SRC lambda must be positive".into()));
        }
        let first = train
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| PcsError::InsufficientData("no SRC training images".into()))?;
        let shape = (first.height(), first.width());
        let mut cols = Vec::new();
        let mut sets = Vec::new();
        for images in train {
            if images.is_empty() {
                return Err(PcsError::InsufficientData(
                    "SRC class without images".into(),
                ));
            }
            let start = cols.len();
            for im in images {
                cols.push(vectorize(im, shape)?);
            }
            sets.push((start..cols.len()).collect());
        }
        let atoms = normalize_columns(DMatrix::from_columns(&cols))
            .ok_or_else(|| PcsError::InvalidInput("blank SRC training image".into()))?;
        let dictionary = Dictionary::new(atoms, sets, labels.to_vec())?;
        Ok(Self {
            dictionary,
            shape,
            lambda,
        })
    }

    pub fn classify(&self, image: &Image) -> Result<usize> {
        let mut y = vectorize(image, self.shape)?;
        let norm = y.norm();
        if norm == 0.0 {
            return Err(PcsError::InvalidInput("blank test image".into()));
        }
        y /= norm;
        let sol = solve_l1(&y, &self.dictionary, self.lambda)?;
        let atoms = self.dictionary.atoms();
        let mut best = (0, f64::INFINITY);
        for (k, set) in self.dictionary.class_index_sets().iter().enumerate() {
            let mut r = y.clone();
            for &i in set {
                if sol.beta[i] != 0.0 {
                    r.axpy(-sol.beta[i], &atoms.column(i), 1.0);
                }
            }
            let n = r.norm();
            if n < best.1 {
                best = (k, n);
            }
        }
        Ok(best.0)
    }

    pub fn evaluate(
        &self,
        tests: &[LabeledImage],
        regime: WindowRegime,
        noise: Option<&NoiseSpec>,
    ) -> Result<EvalReport> {
        check_labels(tests, self.dictionary.num_classes())?;
        let pairs = tests
            .par_iter()
            .enumerate()
            .map(|(i, t)| Ok((t.class, self.classify(&degrade(&t.image, noise, i)?)?)))
            .collect::<Result<Vec<_>>>()?;
        EvalReport::from_predictions(
            self.dictionary.class_labels().to_vec(),
            &pairs,
            RunMetadata {
                regime: Some(regime),
                sigma: noise.map_or(0.0, |n| n.sigma),
                ..RunMetadata::default()
            },
        )
    }
}

fn vectorize(image: &Image, shape: (usize, usize)) -> Result<DVector<f64>> {
    if (image.height(), image.width()) != shape {
        return Err(dim(format!(
            "image {}x{} does not match the {}x{} training size",
            image.height(),
            image.width(),
            shape.0,
            shape.1
        )));
    }
    Ok(DVector::from_column_slice(image.pixels.as_slice()))
}
