//! Synthetic SAS-like scenes: textured seabed, a bright target highlight
//! whose geometry depends on shape and pose, and an acoustic shadow cast
//! down-range (towards +column, away from a sonar on the left).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{PcsError, Result};
use crate::image::{Image, WindowRegime};
use crate::rng::{derive_seed, label_tag, rng_from_seed, PcsRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Block,
    Cone,
    Sphere,
    Cylinder,
    Torus,
}

impl Shape {
    pub const TRAINING: [Shape; 4] = [Shape::Block, Shape::Cone, Shape::Sphere, Shape::Cylinder];
    pub const ALL: [Shape; 5] = [
        Shape::Block,
        Shape::Cone,
        Shape::Sphere,
        Shape::Cylinder,
        Shape::Torus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Block => "block",
            Shape::Cone => "cone",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
            Shape::Torus => "torus",
        }
    }

    /// Allowed pose angles in degrees (inclusive).
    pub fn angle_range(self) -> (f64, f64) {
        match self {
            Shape::Block => (15.0, 75.0),
            Shape::Cylinder => (0.0, 120.0),
            _ => (0.0, 360.0),
        }
    }

    fn shadow_length(self) -> f64 {
        match self {
            Shape::Block => 10.0,
            Shape::Cone => 12.0,
            Shape::Sphere => 11.0,
            Shape::Cylinder => 7.0,
            Shape::Torus => 6.0,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = PcsError;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.as_str() == s)
            .ok_or_else(|| PcsError::InvalidInput(format!("unknown shape `{s}`")))
    }
}

/// Frame side length in pixels for each window regime.
pub fn frame_size(regime: WindowRegime) -> usize {
    match regime {
        WindowRegime::Narrow => 32,
        WindowRegime::Middling => 48,
        WindowRegime::Expansive => 96,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub shape: Shape,
    pub pose_angle_deg: f64,
    /// Target centre offset from the frame centre, `(d_col, d_row)`.
    pub offset: (f64, f64),
    pub regime: WindowRegime,
    pub background_seed: u64,
}

impl SceneSpec {
    pub fn centered(shape: Shape, pose_angle_deg: f64, regime: WindowRegime, seed: u64) -> Self {
        Self {
            shape,
            pose_angle_deg,
            offset: (0.0, 0.0),
            regime,
            background_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.shape.angle_range();
        if !(self.pose_angle_deg >= lo && self.pose_angle_deg <= hi) {
            return Err(PcsError::InvalidInput(format!(
                "{} pose {} outside [{lo}, {hi}]",
                self.shape, self.pose_angle_deg
            )));
        }
        let (x0, x1, y0, y1) = Self::offset_bounds(self.shape, self.pose_angle_deg, self.regime);
        let (dx, dy) = self.offset;
        if !(dx.is_finite() && dy.is_finite())
            || dx < x0 - 1e-9
            || dx > x1 + 1e-9
            || dy < y0 - 1e-9
            || dy > y1 + 1e-9
        {
            return Err(PcsError::InvalidInput(format!(
                "offset {:?} pushes the target out of the {}-pixel frame",
                self.offset,
                frame_size(self.regime)
            )));
        }
        Ok(())
    }

    /// Range of offsets `(dx_lo, dx_hi, dy_lo, dy_hi)` that keep the target
    /// (highlight and shadow) fully in frame.
    pub fn offset_bounds(
        shape: Shape,
        pose_angle_deg: f64,
        regime: WindowRegime,
    ) -> (f64, f64, f64, f64) {
        let size = frame_size(regime) as f64;
        let (r0, r1, c0, c1) = target_extent(shape, pose_angle_deg);
        let slack_x = ((size - (c1 - c0 + 1.0)) / 2.0).max(0.0);
        let slack_y = ((size - (r1 - r0 + 1.0)) / 2.0).max(0.0);
        (-slack_x, slack_x, -slack_y, slack_y)
    }

    /// Frame position of the object origin: the target's bounding box is
    /// centred in the frame, then shifted by the offset.
    fn object_origin(&self) -> (f64, f64) {
        let size = frame_size(self.regime) as f64;
        let (r0, r1, c0, c1) = target_extent(self.shape, self.pose_angle_deg);
        let cx = (size - 1.0) / 2.0 - (c0 + c1) / 2.0 + self.offset.0;
        let cy = (size - 1.0) / 2.0 - (r0 + r1) / 2.0 + self.offset.1;
        (cx, cy)
    }
}

/// Highlight intensity in target-centred coordinates (`x` down-range
/// columns, `y` rows), or 0 outside the object.
fn highlight(shape: Shape, angle_deg: f64, x: f64, y: f64) -> f64 {
    let a = angle_deg.to_radians();
    let (s, c) = a.sin_cos();
    // local axes: u along the object's long axis, v across it
    let u = c * x + s * y;
    let v = -s * x + c * y;
    // facing the sonar (from -x) brightens the returns
    let facing = |nx: f64| 0.75 + 0.25 * (-nx).clamp(-1.0, 1.0);
    match shape {
        Shape::Block => {
            if u.abs() <= 9.0 && v.abs() <= 5.0 {
                let edge = (9.0 - u.abs()).min(5.0 - v.abs());
                let rim = if edge < 1.5 { 0.25 } else { 0.0 };
                0.6 + rim + 0.15 * (0.5 - x / 18.0).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }
        Shape::Cylinder => {
            if u.abs() <= 12.0 && v.abs() <= 3.5 {
                // specular line along the axis
                0.45 + 0.55 * (std::f64::consts::PI * v / 7.0).cos().powi(2)
            } else {
                0.0
            }
        }
        Shape::Sphere => {
            let r = (x * x + y * y).sqrt();
            if r <= 7.5 {
                let glint = (-((x + 3.0).powi(2) + y * y) / 6.0).exp();
                0.35 + 0.2 * facing(x / 7.5) + 0.45 * glint
            } else {
                0.0
            }
        }
        Shape::Cone => {
            // triangle with apex along +v, base along -v
            let h = 15.0;
            let t = (v + h / 2.0) / h; // 0 at base, 1 at apex
            if (0.0..=1.0).contains(&t) && u.abs() <= 9.0 * (1.0 - t) {
                0.4 + 0.5 * t + 0.1 * facing(x / 9.0)
            } else {
                0.0
            }
        }
        Shape::Torus => {
            let r = (x * x + y * y).sqrt();
            if (4.5..=8.5).contains(&r) {
                let ring = 1.0 - ((r - 6.5) / 2.0).powi(2);
                (0.45 + 0.4 * ring) * facing(x / r)
            } else {
                0.0
            }
        }
    }
}

/// Bounding box `(row_min, row_max, col_min, col_max)` of highlight plus
/// shadow, relative to the target centre.
pub fn target_extent(shape: Shape, angle_deg: f64) -> (f64, f64, f64, f64) {
    let mut bounds = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let reach = 14i32;
    for yi in -reach..=reach {
        for xi in -reach..=reach {
            let (x, y) = (f64::from(xi), f64::from(yi));
            if highlight(shape, angle_deg, x, y) > 0.0 {
                bounds.0 = bounds.0.min(y);
                bounds.1 = bounds.1.max(y);
                bounds.2 = bounds.2.min(x);
                bounds.3 = bounds.3.max(x + shape.shadow_length());
            }
        }
    }
    bounds
}

/// Mean-one speckle texture, lightly smoothed.
fn speckle(rng: &mut PcsRng, h: usize, w: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(h, w, |_, _| rayleigh_sample(rng, 1.0));
    let mean = std::f64::consts::FRAC_PI_2.sqrt();
    DMatrix::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for dr in -1i32..=1 {
            for dc in -1i32..=1 {
                let rr = r as i32 + dr;
                let cc = c as i32 + dc;
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    let wgt = if dr == 0 && dc == 0 { 2.0 } else { 1.0 };
                    acc += wgt * raw[(rr as usize, cc as usize)];
                    n += wgt;
                }
            }
        }
        acc / n / mean
    })
}

/// Renders a scene deterministically from its spec.
pub fn render_scene(spec: &SceneSpec) -> Result<Image> {
    spec.validate()?;
    let size = frame_size(spec.regime);
    let mut rng = rng_from_seed(derive_seed(spec.background_seed, 0x5EA_BED));
    let texture = speckle(&mut rng, size, size);
    let glints = speckle(&mut rng, size, size);
    let ripple_dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let ripple_period: f64 = rng.random_range(5.0..11.0);
    let ripple_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let ripple_depth: f64 = rng.random_range(0.2..0.5);
    let base_level: f64 = rng.random_range(0.12..0.2);

    let (cx, cy) = spec.object_origin();
    let (dsin, dcos) = ripple_dir.sin_cos();
    let object = DMatrix::from_fn(size, size, |r, c| {
        highlight(
            spec.shape,
            spec.pose_angle_deg,
            c as f64 - cx,
            r as f64 - cy,
        )
    });
    let shadow_len = spec.shape.shadow_length().round() as usize;
    let mut pixels = DMatrix::zeros(size, size);
    for r in 0..size {
        for c in 0..size {
            let phase = std::f64::consts::TAU * (c as f64 * dcos + r as f64 * dsin) / ripple_period;
            let seabed =
                base_level * texture[(r, c)] * (1.0 + ripple_depth * (phase + ripple_phase).sin());
            let shadowed = object[(r, c)] == 0.0
                && (1..=shadow_len).any(|d| c >= d && object[(r, c - d)] > 0.0);
            let bg = if shadowed { 0.15 * seabed } else { seabed };
            let obj = object[(r, c)] * (0.8 + 0.2 * glints[(r, c)]);
            pixels[(r, c)] = bg.max(obj);
        }
    }
    let mut img = Image::new(pixels, spec.regime)?.with_label(spec.shape.as_str());
    img.normalize();
    Ok(img)
}

/// Fraction of the frame covered by the square spanned by the target's
/// largest (highlight plus shadow) extent.
pub fn target_fill_fraction(shape: Shape, angle_deg: f64, regime: WindowRegime) -> f64 {
    let (r0, r1, c0, c1) = target_extent(shape, angle_deg);
    let extent = (r1 - r0 + 1.0).max(c1 - c0 + 1.0);
    let size = frame_size(regime) as f64;
    (extent.min(size) / size).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Pixel × Rayleigh(σ) draw, then renormalised.
    #[default]
    Multiplicative,
    /// `|pixel + n_re + i·n_im|` with `n ~ N(0, σ²)` per component, then
    /// renormalised.
    ComplexGaussian,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::Multiplicative => "multiplicative",
            NoiseMode::ComplexGaussian => "complex_gaussian",
        }
    }
}

impl FromStr for NoiseMode {
    type Err = PcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiplicative" => Ok(NoiseMode::Multiplicative),
            "complex_gaussian" => Ok(NoiseMode::ComplexGaussian),
            other => Err(PcsError::InvalidInput(format!(
                "unknown noise mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Rayleigh scale σ.
    pub sigma: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            mode: NoiseMode::default(),
        }
    }
}

/// `σ·sqrt(−2 ln u)` with `u` uniform on (0, 1].
pub fn rayleigh_sample<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let u = 1.0 - rng.random::<f64>();
    sigma * (-2.0 * u.ln()).sqrt()
}

pub fn apply_rayleigh_noise(image: &Image, noise: &NoiseSpec) -> Result<Image> {
    if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
        return Err(PcsError::Domain(format!(
            "noise sigma must be >= 0, got {}",
            noise.sigma
        )));
    }
    if noise.sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = rng_from_seed(noise.seed);
    let (h, w) = image.pixels.shape();
    let mut pixels = DMatrix::zeros(h, w);
    // Column-major draw order, fixed for reproducibility.
    for c in 0..w {
        for r in 0..h {
            let p = image.pixels[(r, c)];
            pixels[(r, c)] = match noise.mode {
                NoiseMode::Multiplicative => p * rayleigh_sample(&mut rng, noise.sigma),
                NoiseMode::ComplexGaussian => {
                    let re = p + noise.sigma * rng.sample::<f64, _>(StandardNormal);
                    let im = noise.sigma * rng.sample::<f64, _>(StandardNormal);
                    re.hypot(im)
                }
            };
        }
    }
    let mut out = Image {
        pixels,
        label: image.label.clone(),
        regime: image.regime,
    };
    out.normalize();
    Ok(out)
}

/// What to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub counts: Vec<(Shape, usize)>,
    pub regimes: Vec<WindowRegime>,
    /// Noise levels written per clean image; 0 writes the clean image.
    pub noise_sigmas: Vec<f64>,
    pub noise_mode: NoiseMode,
    /// Randomise the target offset within the frame.
    pub random_offsets: bool,
    pub seed: u64,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            counts: vec![
                (Shape::Block, 60),
                (Shape::Cone, 60),
                (Shape::Sphere, 60),
                (Shape::Cylinder, 60),
                (Shape::Torus, 22),
            ],
            regimes: vec![WindowRegime::Narrow],
            noise_sigmas: vec![0.0],
            noise_mode: NoiseMode::Multiplicative,
            random_offsets: true,
            seed: 0,
        }
    }
}

/// One generated image, as listed in `manifest.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub class: String,
    pub regime: WindowRegime,
    /// Index of the underlying capture within its class.
    pub index: usize,
    pub angle: f64,
    pub sigma: f64,
    pub seed: u64,
}

pub const MANIFEST_HEADER: [&str; 6] = ["path", "class", "regime", "angle", "sigma", "seed"];

/// Scene spec for capture `index` of `shape` in `regime`. Pose and seabed
/// are shared across regimes; the offset is drawn per regime.
pub fn capture_spec(
    shape: Shape,
    index: usize,
    regime: WindowRegime,
    seed: u64,
    random_offsets: bool,
) -> SceneSpec {
    let capture_seed = derive_seed(derive_seed(seed, label_tag(shape.as_str())), index as u64);
    let mut rng = rng_from_seed(capture_seed);
    let (lo, hi) = shape.angle_range();
    let angle = (lo + (hi - lo) * rng.random::<f64>()).min(hi);
    // Quantise so the manifest round-trips exactly through text.
    let angle = (angle * 1000.0).round() / 1000.0;
    let angle = angle.clamp(lo, hi);
    let offset = if random_offsets {
        let (x0, x1, y0, y1) = SceneSpec::offset_bounds(shape, angle, regime);
        let mut orng = rng_from_seed(derive_seed(capture_seed, label_tag(regime.as_str())));
        let dx = if x1 > x0 {
            orng.random_range(x0..=x1)
        } else {
            (x0 + x1) / 2.0
        };
        let dy = if y1 > y0 {
            orng.random_range(y0..=y1)
        } else {
            (y0 + y1) / 2.0
        };
        (
            dx.round().clamp(x0.ceil(), x1.floor()),
            dy.round().clamp(y0.ceil(), y1.floor()),
        )
    } else {
        (0.0, 0.0)
    };
    SceneSpec {
        shape,
        pose_angle_deg: angle,
        offset,
        regime,
        background_seed: capture_seed,
    }
}

fn sigma_tag(sigma: f64) -> String {
    format!("{sigma}").replace('.', "p")
}

/// Renders every image in the manifest, in manifest order.
pub fn render_dataset(manifest: &DatasetManifest) -> Result<Vec<(ManifestRow, Image)>> {
    let mut jobs = Vec::new();
    for &(shape, count) in &manifest.counts {
        for &regime in &manifest.regimes {
            for index in 0..count {
                for &sigma in &manifest.noise_sigmas {
                    jobs.push((shape, regime, index, sigma));
                }
            }
        }
    }
    jobs.into_par_iter()
        .map(|(shape, regime, index, sigma)| {
            let spec = capture_spec(shape, index, regime, manifest.seed, manifest.random_offsets);
            let clean = render_scene(&spec)?;
            let noise_seed = derive_seed(spec.background_seed, sigma.to_bits());
            let image = apply_rayleigh_noise(
                &clean,
                &NoiseSpec {
                    sigma,
                    seed: noise_seed,
                    mode: manifest.noise_mode,
                },
            )?;
            let name = if sigma == 0.0 {
                format!("{shape}_{index:03}.pgm")
            } else {
                format!("{shape}_{index:03}_s{}.pgm", sigma_tag(sigma))
            };
            let path = Path::new(shape.as_str()).join(regime.as_str()).join(name);
            Ok((
                ManifestRow {
                    path,
                    class: shape.as_str().to_string(),
                    regime,
                    index,
                    angle: spec.pose_angle_deg,
                    sigma,
                    seed: if sigma == 0.0 {
                        spec.background_seed
                    } else {
                        noise_seed
                    },
                },
                image,
            ))
        })
        .collect()
}

/// Writes PGMs under `<root>/<class>/<regime>/` and `<root>/manifest.csv`.
pub fn generate_dataset(
    manifest: &DatasetManifest,
    root: impl AsRef<Path>,
) -> Result<Vec<ManifestRow>> {
    let root = root.as_ref();
    for &(shape, count) in &manifest.counts {
        for &regime in &manifest.regimes {
            fs::create_dir_all(root.join(shape.as_str()).join(regime.as_str()))?;
        }
        if count == 0 {
            log::warn!("class `{shape}` requested with zero images");
        }
    }
    let rendered = render_dataset(manifest)?;
    rendered
        .par_iter()
        .map(|(row, image)| image.save_pgm(root.join(&row.path)))
        .collect::<Result<()>>()?;
    let rows: Vec<ManifestRow> = rendered.into_iter().map(|(r, _)| r).collect();
    write_manifest(root.join("manifest.csv"), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.write_record([
            r.path.to_string_lossy().as_ref(),
            &r.class,
            r.regime.as_str(),
            &format!("{}", r.angle),
            &format!("{}", r.sigma),
            &r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(PcsError::Format(format!(
            "unexpected manifest header {headers:?}"
        )));
    }
    let bad = |what: &str| PcsError::Format(format!("bad manifest {what}"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let path = PathBuf::from(&rec[0]);
        // Capture index is encoded in the file name: <class>_<index>[...].pgm
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.split('_').nth(1))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("file name"))?;
        rows.push(ManifestRow {
            index,
            class: rec[1].to_string(),
            regime: rec[2].parse()?,
            angle: rec[3].parse().map_err(|_| bad("angle"))?,
            sigma: rec[4].parse().map_err(|_| bad("sigma"))?,
            seed: rec[5].parse().map_err(|_| bad("seed"))?,
            path,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_fill_fractions() {
        for shape in Shape::ALL {
            let (lo, hi) = shape.angle_range();
            for step in 0..=12 {
                let a = lo + (hi - lo) * f64::from(step) / 12.0;
                let narrow = target_fill_fraction(shape, a, WindowRegime::Narrow);
                let middling = target_fill_fraction(shape, a, WindowRegime::Middling);
                let expansive = target_fill_fraction(shape, a, WindowRegime::Expansive);
                assert!(narrow >= 0.5, "{shape} {a}: narrow {narrow}");
                assert!(middling >= 0.2, "{shape} {a}: middling {middling}");
                assert!(expansive >= 0.05, "{shape} {a}: expansive {expansive}");
                assert!(narrow <= 1.0);
            }
        }
    }

    #[test]
    fn pixels_normalised() {
        for shape in Shape::ALL {
            for regime in WindowRegime::ALL {
                let spec = capture_spec(shape, 3, regime, 11, true);
                let img = render_scene(&spec).unwrap();
                assert_eq!(img.max(), 1.0);
                assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_angle = SceneSpec::centered(Shape::Block, 80.0, WindowRegime::Narrow, 0);
        assert!(render_scene(&bad_angle).is_err());
        let mut off = SceneSpec::centered(Shape::Sphere, 0.0, WindowRegime::Narrow, 0);
        off.offset = (30.0, 0.0);
        assert!(render_scene(&off).is_err());
    }

    #[test]
    fn pose_changes_cylinder() {
        let a = render_scene(&SceneSpec::centered(
            Shape::Cylinder,
            0.0,
            WindowRegime::Middling,
            4,
        ))
        .unwrap();
        let b = render_scene(&SceneSpec::centered(
            Shape::Cylinder,
            90.0,
            WindowRegime::Middling,
            4,
        ))
        .unwrap();
        let differ = a
            .pixels
            .iter()
            .zip(b.pixels.iter())
            .filter(|(x, y)| (*x - *y).abs() > 1e-9)
            .count();
        assert!(differ as f64 >= 0.01 * a.pixels.len() as f64);
    }

    #[test]
    fn centroid_inside_frame_for_generated_offsets() {
        for shape in Shape::ALL {
            for regime in WindowRegime::ALL {
                for index in 0..20 {
                    let spec = capture_spec(shape, index, regime, 99, true);
                    spec.validate().unwrap();
                    let size = frame_size(regime) as f64;
                    let (cx, cy) = spec.object_origin();
                    assert!((0.0..size).contains(&cx) && (0.0..size).contains(&cy));
                    // every highlight pixel lies in frame
                    let img = render_scene(&spec).unwrap();
                    let (r0, r1, c0, c1) = target_extent(shape, spec.pose_angle_deg);
                    assert!(cy + r0 >= -0.5 && cy + r1 <= size - 0.5);
                    assert!(cx + c0 >= -0.5 && cx + c1 <= size - 0.5);
                    assert_eq!(img.height(), size as usize);
                }
            }
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let img = render_scene(&SceneSpec::centered(
            Shape::Block,
            30.0,
            WindowRegime::Narrow,
            1,
        ))
        .unwrap();
        let out = apply_rayleigh_noise(&img, &NoiseSpec::new(0.0, 5)).unwrap();
        assert_eq!(out, img);
        assert!(apply_rayleigh_noise(&img, &NoiseSpec::new(-1.0, 5)).is_err());
    }

    #[test]
    fn shape_parse() {
        for s in Shape::ALL {
            assert_eq!(s.as_str().parse::<Shape>().unwrap(), s);
        }
        assert!("mine".parse::<Shape>().is_err());
    }
}
