//! Training pipeline, data partitions, evaluation sweeps and timing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::classifier::{cross_validate, CvConfig, CvOutcome, PcsModel};
use crate::config::RunConfig;
use crate::dfdl::{learn_dictionary, DfdlConfig, DfdlStep};
use crate::error::{PcsError, Result};
use crate::eval::{
    classify_image, fmt_metric, EvalReport, ImageOutcome, LabeledImage, RunMetadata, SrcBaseline,
};
use crate::image::{Image, WindowRegime};
use crate::patches::{intensity_mask, sample_patches, PatchConfig, PatchSet};
use crate::rng::{derive_seed, label_tag, rng_from_seed};
use crate::solver::{SolverOptions, DEFAULT_RESIDUAL_FLOOR};
use crate::synth::{read_manifest, render_dataset, DatasetManifest, NoiseSpec, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub patch: PatchConfig,
    pub dfdl: DfdlConfig,
    pub cv: CvConfig,
    pub solver: SolverOptions,
    pub residual_floor: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            patch: PatchConfig::default(),
            dfdl: DfdlConfig::default(),
            cv: CvConfig::default(),
            solver: SolverOptions::default(),
            residual_floor: DEFAULT_RESIDUAL_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: PcsModel,
    pub dfdl_trace: Vec<DfdlStep>,
    pub cv: CvOutcome,
}

/// Samples patches from one image on its own derived stream. Images without
/// a qualifying window yield `None`.
pub fn image_patches(image: &Image, config: &PatchConfig, stream: u64) -> Result<Option<PatchSet>> {
    let mask = intensity_mask(image, config.threshold_percentile)?;
    let mut rng = rng_from_seed(derive_seed(config.seed, stream));
    match sample_patches(image, &mask, config, &mut rng) {
        Ok(p) => Ok(Some(p)),
        Err(PcsError::NoQualifyingPatch) => {
            log::warn!("image without a qualifying patch skipped");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn class_stream(label: &str, index: usize) -> u64 {
    derive_seed(label_tag(label), index as u64)
}

/// Splits each class's training images into a dictionary part and a
/// cross-validation holdout, learns the dictionary, tunes the penalties and
/// collects reference likelihoods.
pub fn train_pcs(
    train: &[Vec<Image>],
    labels: &[String],
    settings: &TrainSettings,
) -> Result<TrainedModel> {
    let k = train.len();
    if k < 2 || labels.len() != k {
        return Err(PcsError::InvalidInput(
            "training needs at least two labelled classes".into(),
        ));
    }
    settings.patch.validate()?;
    settings.dfdl.validate(k)?;
    settings.cv.validate()?;
    let mut pools = Vec::with_capacity(k);
    let mut holdout = Vec::with_capacity(k);
    for (images, label) in train.iter().zip(labels) {
        let n = images.len();
        if n < 2 {
            return Err(PcsError::InsufficientData(format!(
                "class `{label}` needs at least two training images, has {n}"
            )));
        }
        let n_hold = ((n as f64 * settings.cv.holdout_fraction).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(
            settings.cv.seed,
            label_tag(label),
        )));
        let sets: Vec<Option<PatchSet>> = order
            .par_iter()
            .map(|&i| image_patches(&images[i], &settings.patch, class_stream(label, i)))
            .collect::<Result<_>>()?;
        let mut pool = PatchSet::default();
        let mut held = Vec::new();
        for (pos, set) in sets.into_iter().enumerate() {
            let Some(set) = set else { continue };
            if pos < n_hold {
                held.push(set);
            } else {
                pool.extend(set);
            }
        }
        if pool.is_empty() || held.is_empty() {
            return Err(PcsError::InsufficientData(format!(
                "class `{label}` has no usable patches for training or holdout"
            )));
        }
        pool.label = Some(label.clone());
        pools.push(pool);
        holdout.push(held);
    }
    let learned = learn_dictionary(&pools, labels, &settings.dfdl)?;
    let cv = cross_validate(
        &holdout,
        &learned.dictionary,
        &settings.cv,
        settings.residual_floor,
        &settings.solver,
    )?;
    let mut model = PcsModel::new(
        learned.dictionary,
        cv.params.clone(),
        settings.patch.clone(),
        cv.reference_samples.clone(),
    )?;
    model.solver_options = settings.solver.clone();
    Ok(TrainedModel {
        model,
        dfdl_trace: learned.trace,
        cv,
    })
}

impl TrainSettings {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            patch: config.patch.clone(),
            dfdl: config.dfdl.clone(),
            cv: config.cv.clone(),
            solver: config.solver.clone(),
            residual_floor: config.residual_floor,
        }
    }

    /// Copy with every seed derived from `stream`.
    pub fn reseeded(&self, stream: u64) -> Self {
        let mut s = self.clone();
        s.patch.seed = derive_seed(self.patch.seed, stream);
        s.dfdl.seed = derive_seed(self.dfdl.seed, stream);
        s.cv.seed = derive_seed(self.cv.seed, stream);
        s
    }
}

#[derive(Debug, Clone)]
pub struct NamedImage {
    /// Path relative to the dataset root, or a generated name.
    pub name: String,
    pub image: Image,
}

/// Clean images per regime and class, in capture-index order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub images: BTreeMap<WindowRegime, Vec<Vec<NamedImage>>>,
}

impl Dataset {
    /// Renders the clean images of `manifest` in memory for the given classes.
    pub fn render(manifest: &DatasetManifest, labels: &[String]) -> Result<Self> {
        let manifest = DatasetManifest {
            noise_sigmas: vec![0.0],
            counts: manifest
                .counts
                .iter()
                .filter(|(s, _)| labels.iter().any(|l| l == s.as_str()))
                .copied()
                .collect(),
            ..manifest.clone()
        };
        let mut data = Self::empty(labels, &manifest.regimes);
        for (row, image) in render_dataset(&manifest)? {
            data.push(
                &row.class,
                row.regime,
                row.path.display().to_string(),
                image,
            );
        }
        Ok(data)
    }

    /// Loads the clean (`sigma = 0`) images listed in `<root>/manifest.csv`.
    pub fn load(
        root: impl AsRef<Path>,
        labels: &[String],
        regimes: &[WindowRegime],
    ) -> Result<Self> {
        let root = root.as_ref();
        let mut rows = read_manifest(root.join("manifest.csv"))?;
        rows.retain(|r| r.sigma == 0.0 && regimes.contains(&r.regime));
        rows.sort_by(|a, b| (&a.class, a.regime, a.index).cmp(&(&b.class, b.regime, b.index)));
        let mut data = Self::empty(labels, regimes);
        for row in rows {
            if !labels.contains(&row.class) {
                continue;
            }
            let image =
                Image::load_pgm(root.join(&row.path), row.regime)?.with_label(row.class.clone());
            data.push(
                &row.class,
                row.regime,
                row.path.display().to_string(),
                image,
            );
        }
        Ok(data)
    }

    fn empty(labels: &[String], regimes: &[WindowRegime]) -> Self {
        Self {
            labels: labels.to_vec(),
            images: regimes
                .iter()
                .map(|&r| (r, vec![Vec::new(); labels.len()]))
                .collect(),
        }
    }

    fn push(&mut self, class: &str, regime: WindowRegime, name: String, image: Image) {
        if let (Some(k), Some(per)) = (
            self.labels.iter().position(|l| l == class),
            self.images.get_mut(&regime),
        ) {
            per[k].push(NamedImage { name, image });
        }
    }

    pub fn class_images(&self, regime: WindowRegime, class: usize) -> &[NamedImage] {
        self.images.get(&regime).map_or(&[], |per| &per[class])
    }

    pub fn class_counts(&self, regime: WindowRegime) -> Vec<usize> {
        (0..self.labels.len())
            .map(|k| self.class_images(regime, k).len())
            .collect()
    }
}

/// Image indices per class for one train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub index: usize,
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl Partition {
    pub fn write_csv<W: Write>(&self, labels: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "role", "index"])?;
        for (role, sets) in [("train", &self.train), ("test", &self.test)] {
            for (k, set) in sets.iter().enumerate() {
                for i in set {
                    w.write_record([labels[k].as_str(), role, &i.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds `count` splits from one seeded shuffle per class. Test slices are
/// consecutive blocks of that shuffle, so they are disjoint across splits
/// whenever `count * test_size` images exist; training images are a seeded
/// draw of `train_size` from the rest. Smaller training sizes are prefixes
/// of larger ones.
pub fn make_partitions(
    labels: &[String],
    counts: &[usize],
    train_size: usize,
    test_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Partition>> {
    for (label, &n) in labels.iter().zip(counts) {
        if n < train_size + test_size {
            return Err(PcsError::InsufficientData(format!(
                "class `{label}` has {n} images, needs {} for {train_size} train + {test_size} test",
                train_size + test_size
            )));
        }
        if n < count * test_size {
            log::warn!("class `{label}`: test slices overlap across {count} partitions");
        }
    }
    let orders: Vec<Vec<usize>> = labels
        .iter()
        .zip(counts)
        .map(|(label, &n)| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_from_seed(derive_seed(seed, label_tag(label))));
            order
        })
        .collect();
    Ok((0..count)
        .map(|p| {
            let mut train = Vec::with_capacity(labels.len());
            let mut test = Vec::with_capacity(labels.len());
            for (k, order) in orders.iter().enumerate() {
                let n = order.len();
                let t: Vec<usize> = (0..test_size)
                    .map(|j| order[(p * test_size + j) % n])
                    .collect();
                let mut rest: Vec<usize> =
                    order.iter().copied().filter(|i| !t.contains(i)).collect();
                rest.shuffle(&mut rng_from_seed(derive_seed(
                    derive_seed(seed, p as u64),
                    k as u64,
                )));
                rest.truncate(train_size);
                train.push(rest);
                test.push(t);
            }
            Partition {
                index: p,
                train,
                test,
            }
        })
        .collect())
}

fn gather(data: &Dataset, regime: WindowRegime, sets: &[Vec<usize>]) -> Vec<Vec<Image>> {
    sets.iter()
        .enumerate()
        .map(|(k, idx)| {
            let pool = data.class_images(regime, k);
            idx.iter().map(|&i| pool[i].image.clone()).collect()
        })
        .collect()
}

fn gather_tests(data: &Dataset, regime: WindowRegime, sets: &[Vec<usize>]) -> Vec<LabeledImage> {
    gather(data, regime, sets)
        .into_iter()
        .enumerate()
        .flat_map(|(class, images)| {
            images
                .into_iter()
                .map(move |image| LabeledImage { image, class })
        })
        .collect()
}

/// One evaluated cell of the sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub train_size: usize,
    pub regime: WindowRegime,
    pub sigma: f64,
    pub partition: usize,
    pub pcs: EvalReport,
    pub src: EvalReport,
}

impl SweepCell {
    pub fn stem(&self) -> String {
        format!(
            "n{}_{}_s{}_p{}",
            self.train_size,
            self.regime,
            format!("{}", self.sigma).replace('.', "p"),
            self.partition
        )
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Keyed by (train size, regime).
    pub partitions: BTreeMap<(usize, WindowRegime), Vec<Partition>>,
    pub labels: Vec<String>,
}

fn noise_for(config: &RunConfig, regime: WindowRegime, partition: usize, sigma: f64) -> NoiseSpec {
    let seed = derive_seed(
        derive_seed(
            derive_seed(config.experiment.seed, label_tag(regime.as_str())),
            partition as u64,
        ),
        sigma.to_bits(),
    );
    NoiseSpec {
        sigma,
        seed,
        mode: config.experiment.noise_mode,
    }
}

/// Trains PCS and the SRC baseline for every (training size, regime,
/// partition) and evaluates both at every noise level. Models are shared
/// across noise levels; noise touches test images only.
pub fn run_sweep(config: &RunConfig, data: &Dataset) -> Result<SweepResult> {
    let x = &config.experiment;
    let labels = data.labels.clone();
    let base = TrainSettings::from_config(config);
    let mut partitions = BTreeMap::new();
    let mut jobs = Vec::new();
    for &size in &x.train_sizes {
        for &regime in &x.regimes {
            let counts = data.class_counts(regime);
            let parts = make_partitions(
                &labels,
                &counts,
                size,
                x.test_per_class,
                x.partitions,
                x.seed,
            )?;
            // SRC draws its own partitions; they must match the PCS ones.
            let src_parts = make_partitions(
                &labels,
                &counts,
                size,
                x.test_per_class,
                x.partitions,
                x.seed,
            )?;
            assert_eq!(parts, src_parts, "PCS and SRC partitions differ");
            for p in &parts {
                jobs.push((size, regime, p.clone()));
            }
            partitions.insert((size, regime), parts);
        }
    }
    let per_job: Vec<Result<Vec<SweepCell>>> = jobs
        .par_iter()
        .map(|(size, regime, part)| {
            log::info!("training n={size} regime={regime} partition={}", part.index);
            let train = gather(data, *regime, &part.train);
            let tests = gather_tests(data, *regime, &part.test);
            let settings =
                base.reseeded(derive_seed(label_tag(regime.as_str()), part.index as u64));
            let trained = train_pcs(&train, &labels, &settings)?;
            let src = SrcBaseline::train(&train, &labels, config.src_lambda)?;
            x.sigmas
                .iter()
                .map(|&sigma| {
                    let noise = noise_for(config, *regime, part.index, sigma);
                    let meta = RunMetadata {
                        train_size: *size,
                        regime: Some(*regime),
                        sigma,
                        seed: x.seed,
                        partition: part.index,
                    };
                    let mut pcs =
                        crate::eval::evaluate(&trained.model, &tests, *regime, Some(&noise))?;
                    pcs.metadata = meta.clone();
                    let mut src_report = src.evaluate(&tests, *regime, Some(&noise))?;
                    src_report.metadata = meta;
                    Ok(SweepCell {
                        train_size: *size,
                        regime: *regime,
                        sigma,
                        partition: part.index,
                        pcs,
                        src: src_report,
                    })
                })
                .collect()
        })
        .collect();
    let mut cells = Vec::new();
    for r in per_job {
        cells.extend(r?);
    }
    // Rows ordered by size, regime, sigma, partition.
    let sigma_pos = |s: f64| x.sigmas.iter().position(|v| *v == s).unwrap_or(0);
    cells.sort_by_key(|c| (c.train_size, c.regime, sigma_pos(c.sigma), c.partition));
    Ok(SweepResult {
        cells,
        partitions,
        labels,
    })
}

pub const AGGREGATE_HEADER: [&str; 10] = [
    "train_size",
    "regime",
    "sigma",
    "partition",
    "pcs_mean_recall",
    "pcs_mean_precision",
    "pcs_undefined_precision",
    "src_mean_recall",
    "src_mean_precision",
    "src_undefined_precision",
];

impl SweepResult {
    pub fn write_aggregate<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(AGGREGATE_HEADER)?;
        for c in &self.cells {
            w.write_record([
                c.train_size.to_string(),
                c.regime.to_string(),
                c.sigma.to_string(),
                c.partition.to_string(),
                fmt_metric(Some(c.pcs.mean_recall)),
                fmt_metric(Some(c.pcs.mean_precision)),
                c.pcs.undefined_precision.to_string(),
                fmt_metric(Some(c.src.mean_recall)),
                fmt_metric(Some(c.src.mean_precision)),
                c.src.undefined_precision.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `aggregate.csv`, one report per cell and method under
    /// `cells/`, and the partition lists under `partitions/`.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("cells"))?;
        std::fs::create_dir_all(dir.join("partitions"))?;
        self.write_aggregate(std::fs::File::create(dir.join("aggregate.csv"))?)?;
        for c in &self.cells {
            c.pcs
                .save_csv(dir.join("cells").join(format!("{}_pcs.csv", c.stem())))?;
            c.src
                .save_csv(dir.join("cells").join(format!("{}_src.csv", c.stem())))?;
        }
        for ((size, regime), parts) in &self.partitions {
            for p in parts {
                let path = dir
                    .join("partitions")
                    .join(format!("n{size}_{regime}_p{}.csv", p.index));
                p.write_csv(&self.labels, std::fs::File::create(path)?)?;
            }
        }
        Ok(())
    }

    /// Mean over partitions of the PCS and SRC mean recall for one
    /// (size, regime, sigma) group.
    pub fn mean_recall(&self, size: usize, regime: WindowRegime, sigma: f64) -> Option<(f64, f64)> {
        let group: Vec<&SweepCell> = self
            .cells
            .iter()
            .filter(|c| c.train_size == size && c.regime == regime && c.sigma == sigma)
            .collect();
        if group.is_empty() {
            return None;
        }
        let n = group.len() as f64;
        Some((
            group.iter().map(|c| c.pcs.mean_recall).sum::<f64>() / n,
            group.iter().map(|c| c.src.mean_recall).sum::<f64>() / n,
        ))
    }
}

/// Per-image rows: `image,predicted,ll_<class>...` plus the anomaly columns
/// when screening.
pub fn write_image_results<W: Write>(
    labels: &[String],
    rows: &[(String, ImageOutcome)],
    out: W,
) -> Result<()> {
    let screening = rows.iter().any(|(_, o)| o.ks.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["image".to_string(), "predicted".to_string()];
    header.extend(labels.iter().map(|l| format!("ll_{l}")));
    header.push("dropped".into());
    if screening {
        header.extend(["ks_stat", "ks_threshold", "flagged"].map(String::from));
    }
    w.write_record(&header)?;
    for (name, o) in rows {
        let mut rec = vec![name.clone(), labels[o.record.predicted].clone()];
        rec.extend(o.record.log_likelihoods.iter().map(|v| format!("{v:.6}")));
        rec.push(o.record.dropped.to_string());
        if let Some(ks) = &o.ks {
            rec.extend([
                format!("{:.6}", ks.statistic),
                format!("{:.6}", ks.threshold),
                ks.flagged.to_string(),
            ]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub step: &'static str,
    /// Mean wall-clock seconds per repeat.
    pub seconds: f64,
    pub repeats: usize,
}

/// Times training, a single-patch classification and a full-image
/// classification on the first training size, regime and partition.
pub fn run_bench(config: &RunConfig, data: &Dataset) -> Result<Vec<TimingRow>> {
    let x = &config.experiment;
    let regime = x.regimes[0];
    let size = x.train_sizes[0];
    let part = make_partitions(
        &data.labels,
        &data.class_counts(regime),
        size,
        x.test_per_class,
        1,
        x.seed,
    )?
    .remove(0);
    let train = gather(data, regime, &part.train);
    let tests = gather_tests(data, regime, &part.test);

    let t = Instant::now();
    let trained = train_pcs(&train, &data.labels, &TrainSettings::from_config(config))?;
    let train_secs = t.elapsed().as_secs_f64();
    let model = &trained.model;

    let image = &tests[0].image;
    let patches =
        image_patches(image, &model.patch_config, 0)?.ok_or(PcsError::NoQualifyingPatch)?;
    let solver = model.solver()?;
    let t = Instant::now();
    for y in &patches.patches {
        let sol = solver.solve(y)?;
        crate::classifier::residual_affinity(
            y,
            model.dictionary(),
            &sol.beta,
            model.params.residual_floor,
        )?;
    }
    let patch_secs = t.elapsed().as_secs_f64() / patches.len() as f64;

    let t = Instant::now();
    for (i, test) in tests.iter().enumerate() {
        classify_image(&test.image, model, i as u64)?;
    }
    let image_secs = t.elapsed().as_secs_f64() / tests.len() as f64;

    Ok(vec![
        TimingRow {
            step: "train",
            seconds: train_secs,
            repeats: 1,
        },
        TimingRow {
            step: "classify-1-patch",
            seconds: patch_secs,
            repeats: patches.len(),
        },
        TimingRow {
            step: "classify-full-image",
            seconds: image_secs,
            repeats: tests.len(),
        },
    ])
}

pub fn write_timings<W: Write>(rows: &[TimingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "seconds", "repeats"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            format!("{:.6}", r.seconds),
            r.repeats.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Classes of a synthetic run as shapes, for rendering.
pub fn synthetic_dataset(config: &RunConfig) -> Result<Dataset> {
    let shapes: Vec<Shape> = config.class_shapes()?;
    let labels: Vec<String> = shapes.iter().map(|s| s.as_str().to_string()).collect();
    let manifest = DatasetManifest {
        regimes: config.experiment.regimes.clone(),
        ..config.synth.clone()
    };
    Dataset::render(&manifest, &labels)
}
