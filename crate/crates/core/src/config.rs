//! Run configuration in a small sectioned `key = value` text format.
//!
//! ```text
//! # comment
//! [experiment]
//! train_sizes = 10, 20, 40
//! regimes = narrow
//! ```
//!
//! Lists are comma-separated. Every key is optional; absent keys take their
//! defaults. Unknown sections and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::anomaly::DEFAULT_KS_ALPHA;
use crate::classifier::CvConfig;
use crate::dfdl::DfdlConfig;
use crate::error::{PcsError, Result};
use crate::eval::DEFAULT_SRC_LAMBDA;
use crate::image::WindowRegime;
use crate::patches::PatchConfig;
use crate::solver::{SolverOptions, DEFAULT_RESIDUAL_FLOOR};
use crate::synth::{DatasetManifest, NoiseMode, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Training classes, in dictionary order.
    pub classes: Vec<String>,
    pub train_sizes: Vec<usize>,
    pub test_per_class: usize,
    pub regimes: Vec<WindowRegime>,
    pub sigmas: Vec<f64>,
    pub noise_mode: NoiseMode,
    pub partitions: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            classes: Shape::TRAINING
                .iter()
                .map(|s| s.as_str().to_string())
                .collect(),
            train_sizes: vec![40],
            test_per_class: 9,
            regimes: vec![WindowRegime::Narrow],
            sigmas: vec![0.0],
            noise_mode: NoiseMode::Multiplicative,
            partitions: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyConfig {
    pub alpha: f64,
    /// Class held out of training and screened as foreign.
    pub class: String,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_KS_ALPHA,
            class: Shape::Torus.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub experiment: ExperimentConfig,
    /// Dataset generation; its seed always follows `experiment.seed`.
    pub synth: DatasetManifest,
    pub patch: PatchConfig,
    pub dfdl: DfdlConfig,
    pub cv: CvConfig,
    pub solver: SolverOptions,
    pub residual_floor: f64,
    pub anomaly: AnomalyConfig,
    pub src_lambda: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            experiment: ExperimentConfig::default(),
            synth: DatasetManifest::default(),
            patch: PatchConfig::default(),
            dfdl: DfdlConfig::default(),
            cv: CvConfig::default(),
            solver: SolverOptions::default(),
            residual_floor: DEFAULT_RESIDUAL_FLOOR,
            anomaly: AnomalyConfig::default(),
            src_lambda: DEFAULT_SRC_LAMBDA,
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

const SCHEMA: &[(&str, &[&str])] = &[
    ("paths", &["dataset", "model", "output"]),
    (
        "experiment",
        &[
            "classes",
            "train_sizes",
            "test_per_class",
            "regimes",
            "sigmas",
            "noise_mode",
            "partitions",
            "seed",
        ],
    ),
    (
        "synth",
        &["shapes", "counts", "regimes", "sigmas", "random_offsets"],
    ),
    (
        "patch",
        &[
            "height",
            "width",
            "per_image",
            "threshold_percentile",
            "min_survive_fraction",
        ],
    ),
    (
        "dfdl",
        &["rho", "sparsity", "atoms_per_class", "outer_iters"],
    ),
    (
        "cv",
        &["trials", "xi_min", "xi_max", "alpha", "holdout_fraction"],
    ),
    (
        "solver",
        &[
            "residual_floor",
            "max_iter",
            "swap_moves",
            "restart_from_empty",
            "full_restart_max_atoms",
        ],
    ),
    ("anomaly", &["alpha", "class"]),
    ("src", &["lambda"]),
];

fn parse_sections(text: &str) -> Result<Sections> {
    let mut out = Sections::new();
    let mut current: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PcsError::ConfigParse {
            line: line_no,
            message,
        };
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(format!("unterminated section header `{line}`")))?
                .trim();
            if !SCHEMA.iter().any(|(s, _)| *s == name) {
                return Err(err(format!("unknown section `[{name}]`")));
            }
            out.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let section = current
            .as_deref()
            .ok_or_else(|| err(format!("key `{key}` appears before any section")))?;
        let known = SCHEMA
            .iter()
            .find(|(s, _)| *s == section)
            .is_some_and(|(_, keys)| keys.contains(&key));
        if !known {
            return Err(err(format!("unknown key `{key}` in [{section}]")));
        }
        let prev = out.get_mut(section).expect("section inserted").insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: line_no,
            },
        );
        if prev.is_some() {
            return Err(err(format!("duplicate key `{key}` in [{section}]")));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    sections: &'a Sections,
}

impl Reader<'_> {
    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str, target: &mut T) -> Result<()> {
        if let Some(e) = self.entry(section, key) {
            *target = parse_value(e, section, key)?;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, section: &str, key: &str, target: &mut Vec<T>) -> Result<()> {
        if let Some(e) = self.entry(section, key) {
            *target = e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|item| {
                    parse_value(
                        &Entry {
                            value: item.to_string(),
                            line: e.line,
                        },
                        section,
                        key,
                    )
                })
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    fn path(&self, section: &str, key: &str, target: &mut Option<PathBuf>) {
        if let Some(e) = self.entry(section, key) {
            *target = (!e.value.is_empty()).then(|| PathBuf::from(&e.value));
        }
    }
}

fn parse_value<T: FromStr>(e: &Entry, section: &str, key: &str) -> Result<T> {
    e.value.parse().map_err(|_| PcsError::ConfigParse {
        line: e.line,
        message: format!("cannot parse `{}` for {section}.{key}", e.value),
    })
}

fn domain(field: &str, message: impl Into<String>) -> PcsError {
    PcsError::ConfigDomain {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Re-labels a module error with the config field it came from.
fn field_err(field: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        PcsError::Domain(m) | PcsError::InvalidInput(m) => domain(field, m),
        other => other,
    })
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        let r = Reader {
            sections: &sections,
        };
        let mut c = RunConfig::default();

        r.path("paths", "dataset", &mut c.paths.dataset);
        r.path("paths", "model", &mut c.paths.model);
        r.path("paths", "output", &mut c.paths.output);

        let x = &mut c.experiment;
        r.list("experiment", "classes", &mut x.classes)?;
        r.list("experiment", "train_sizes", &mut x.train_sizes)?;
        r.parse("experiment", "test_per_class", &mut x.test_per_class)?;
        r.list("experiment", "regimes", &mut x.regimes)?;
        r.list("experiment", "sigmas", &mut x.sigmas)?;
        r.parse("experiment", "noise_mode", &mut x.noise_mode)?;
        r.parse("experiment", "partitions", &mut x.partitions)?;
        r.parse("experiment", "seed", &mut x.seed)?;

        let mut shapes: Vec<Shape> = c.synth.counts.iter().map(|(s, _)| *s).collect();
        let mut counts: Vec<usize> = c.synth.counts.iter().map(|(_, n)| *n).collect();
        r.list("synth", "shapes", &mut shapes)?;
        r.list("synth", "counts", &mut counts)?;
        if shapes.len() != counts.len() {
            return Err(domain(
                "synth.counts",
                format!("{} counts for {} shapes", counts.len(), shapes.len()),
            ));
        }
        c.synth.counts = shapes.into_iter().zip(counts).collect();
        r.list("synth", "regimes", &mut c.synth.regimes)?;
        r.list("synth", "sigmas", &mut c.synth.noise_sigmas)?;
        r.parse("synth", "random_offsets", &mut c.synth.random_offsets)?;

        r.parse("patch", "height", &mut c.patch.patch_height)?;
        r.parse("patch", "width", &mut c.patch.patch_width)?;
        r.parse("patch", "per_image", &mut c.patch.patches_per_image)?;
        r.parse(
            "patch",
            "threshold_percentile",
            &mut c.patch.threshold_percentile,
        )?;
        r.parse(
            "patch",
            "min_survive_fraction",
            &mut c.patch.min_survive_fraction,
        )?;

        r.parse("dfdl", "rho", &mut c.dfdl.rho)?;
        r.parse("dfdl", "sparsity", &mut c.dfdl.sparsity)?;
        r.parse("dfdl", "atoms_per_class", &mut c.dfdl.atoms_per_class)?;
        r.parse("dfdl", "outer_iters", &mut c.dfdl.outer_iters)?;

        r.parse("cv", "trials", &mut c.cv.trials)?;
        r.parse("cv", "xi_min", &mut c.cv.xi_min)?;
        r.parse("cv", "xi_max", &mut c.cv.xi_max)?;
        r.parse("cv", "alpha", &mut c.cv.alpha)?;
        r.parse("cv", "holdout_fraction", &mut c.cv.holdout_fraction)?;

        r.parse("solver", "residual_floor", &mut c.residual_floor)?;
        r.parse("solver", "max_iter", &mut c.solver.max_iter)?;
        r.parse("solver", "swap_moves", &mut c.solver.swap_moves)?;
        r.parse(
            "solver",
            "restart_from_empty",
            &mut c.solver.restart_from_empty,
        )?;
        r.parse(
            "solver",
            "full_restart_max_atoms",
            &mut c.solver.full_restart_max_atoms,
        )?;

        r.parse("anomaly", "alpha", &mut c.anomaly.alpha)?;
        r.parse("anomaly", "class", &mut c.anomaly.class)?;

        r.parse("src", "lambda", &mut c.src_lambda)?;

        c.set_seed(c.experiment.seed);
        c.validate()?;
        Ok(c)
    }

    /// Sets the master seed; every module seed derives from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.experiment.seed = seed;
        self.synth.seed = seed;
        self.patch.seed = seed;
        self.dfdl.seed = seed;
        self.cv.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let x = &self.experiment;
        if x.classes.len() < 2 {
            return Err(domain(
                "experiment.classes",
                "at least two classes are required",
            ));
        }
        if x.train_sizes.is_empty() || x.train_sizes.contains(&0) {
            return Err(domain(
                "experiment.train_sizes",
                "sizes must be a non-empty list of positive integers",
            ));
        }
        if x.test_per_class == 0 {
            return Err(domain("experiment.test_per_class", "must be positive"));
        }
        if x.regimes.is_empty() {
            return Err(domain("experiment.regimes", "list must not be empty"));
        }
        if x.sigmas.is_empty() || x.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(domain(
                "experiment.sigmas",
                "sigmas must be a non-empty list of finite values >= 0",
            ));
        }
        if x.partitions == 0 {
            return Err(domain("experiment.partitions", "must be positive"));
        }
        if self
            .synth
            .noise_sigmas
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(domain("synth.sigmas", "sigmas must be finite and >= 0"));
        }
        field_err("patch", self.patch.validate())?;
        field_err("dfdl", self.dfdl.validate(x.classes.len()))?;
        field_err("cv", self.cv.validate())?;
        if self.solver.max_iter == 0 {
            return Err(domain("solver.max_iter", "must be positive"));
        }
        if !(self.residual_floor > 0.0 && self.residual_floor.is_finite()) {
            return Err(domain("solver.residual_floor", "must be positive"));
        }
        if !(self.anomaly.alpha > 0.0 && self.anomaly.alpha < 1.0) {
            return Err(domain("anomaly.alpha", "must lie in (0,1)"));
        }
        if !(self.src_lambda > 0.0 && self.src_lambda.is_finite()) {
            return Err(domain("src.lambda", "must be positive"));
        }
        Ok(())
    }

    /// Canonical text form: every section and key in schema order.
    pub fn to_canonical_string(&self) -> String {
        fn list<T: ToString>(v: &[T]) -> String {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        }
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let x = &self.experiment;
        let shapes: Vec<Shape> = self.synth.counts.iter().map(|(s, _)| *s).collect();
        let counts: Vec<usize> = self.synth.counts.iter().map(|(_, n)| *n).collect();
        let body: Vec<(&str, Vec<(&str, String)>)> = vec![
            (
                "paths",
                vec![
                    ("dataset", path(&self.paths.dataset)),
                    ("model", path(&self.paths.model)),
                    ("output", path(&self.paths.output)),
                ],
            ),
            (
                "experiment",
                vec![
                    ("classes", x.classes.join(", ")),
                    ("train_sizes", list(&x.train_sizes)),
                    ("test_per_class", x.test_per_class.to_string()),
                    ("regimes", list(&x.regimes)),
                    ("sigmas", list(&x.sigmas)),
                    ("noise_mode", x.noise_mode.as_str().to_string()),
                    ("partitions", x.partitions.to_string()),
                    ("seed", x.seed.to_string()),
                ],
            ),
            (
                "synth",
                vec![
                    ("shapes", list(&shapes)),
                    ("counts", list(&counts)),
                    ("regimes", list(&self.synth.regimes)),
                    ("sigmas", list(&self.synth.noise_sigmas)),
                    ("random_offsets", self.synth.random_offsets.to_string()),
                ],
            ),
            (
                "patch",
                vec![
                    ("height", self.patch.patch_height.to_string()),
                    ("width", self.patch.patch_width.to_string()),
                    ("per_image", self.patch.patches_per_image.to_string()),
                    (
                        "threshold_percentile",
                        self.patch.threshold_percentile.to_string(),
                    ),
                    (
                        "min_survive_fraction",
                        self.patch.min_survive_fraction.to_string(),
                    ),
                ],
            ),
            (
                "dfdl",
                vec![
                    ("rho", self.dfdl.rho.to_string()),
                    ("sparsity", self.dfdl.sparsity.to_string()),
                    ("atoms_per_class", self.dfdl.atoms_per_class.to_string()),
                    ("outer_iters", self.dfdl.outer_iters.to_string()),
                ],
            ),
            (
                "cv",
                vec![
                    ("trials", self.cv.trials.to_string()),
                    ("xi_min", self.cv.xi_min.to_string()),
                    ("xi_max", self.cv.xi_max.to_string()),
                    ("alpha", self.cv.alpha.to_string()),
                    ("holdout_fraction", self.cv.holdout_fraction.to_string()),
                ],
            ),
            (
                "solver",
                vec![
                    ("residual_floor", self.residual_floor.to_string()),
                    ("max_iter", self.solver.max_iter.to_string()),
                    ("swap_moves", self.solver.swap_moves.to_string()),
                    (
                        "restart_from_empty",
                        self.solver.restart_from_empty.to_string(),
                    ),
                    (
                        "full_restart_max_atoms",
                        self.solver.full_restart_max_atoms.to_string(),
                    ),
                ],
            ),
            (
                "anomaly",
                vec![
                    ("alpha", self.anomaly.alpha.to_string()),
                    ("class", self.anomaly.class.clone()),
                ],
            ),
            ("src", vec![("lambda", self.src_lambda.to_string())]),
        ];
        let mut out = String::new();
        for (i, (section, keys)) in body.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_canonical_string())?;
        Ok(())
    }

    /// The training classes as shapes, for synthetic runs.
    pub fn class_shapes(&self) -> Result<Vec<Shape>> {
        self.experiment
            .classes
            .iter()
            .map(|c| {
                c.parse()
                    .map_err(|_| domain("experiment.classes", format!("`{c}` is not a shape")))
            })
            .collect()
    }
}
