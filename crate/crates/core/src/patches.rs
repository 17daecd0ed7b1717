//! Intensity-stratified patch extraction and raw dictionary assembly.
//!
//! Targets in sonar magnitude images almost always contain bright returns,
//! so patches are only drawn from windows where enough pixels survive a
//! percentile threshold.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dictionary::Dictionary;
use crate::error::{dim, PcsError, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    pub patch_height: usize,
    pub patch_width: usize,
    /// Patches drawn per image.
    pub patches_per_image: usize,
    /// Pixels at or below this nearest-rank percentile are masked out.
    pub threshold_percentile: f64,
    /// Minimum fraction of surviving pixels inside a patch window.
    pub min_survive_fraction: f64,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_height: 16,
            patch_width: 16,
            patches_per_image: 17,
            threshold_percentile: 20.0,
            min_survive_fraction: 0.5,
            seed: 0,
        }
    }
}

impl PatchConfig {
    pub fn patch_len(&self) -> usize {
        self.patch_height * self.patch_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_height == 0 || self.patch_width == 0 {
            return Err(PcsError::InvalidInput(
                "patch dimensions must be positive".into(),
            ));
        }
        if self.patches_per_image == 0 {
            return Err(PcsError::InvalidInput(
                "patches_per_image must be >= 1".into(),
            ));
        }
        if !(0.0..100.0).contains(&self.threshold_percentile) {
            return Err(PcsError::Domain(format!(
                "threshold percentile {} outside [0,100)",
                self.threshold_percentile
            )));
        }
        if !(0.0..=1.0).contains(&self.min_survive_fraction) {
            return Err(PcsError::Domain(format!(
                "min_survive_fraction {} outside [0,1]",
                self.min_survive_fraction
            )));
        }
        Ok(())
    }
}

/// Surviving-pixel mask of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMask {
    pub mask: DMatrix<bool>,
    pub threshold: f64,
    /// Set when no pixel survives (e.g. a constant image with a positive
    /// percentile).
    pub empty: bool,
}

impl IntensityMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|v| **v).count()
    }

    /// Mask with every pixel kept.
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            mask: DMatrix::from_element(height, width, true),
            threshold: f64::NEG_INFINITY,
            empty: height * width == 0,
        }
    }
}

/// Keeps pixels strictly above the nearest-rank percentile of all pixel
/// values. Percentile 0 keeps everything.
pub fn intensity_mask(image: &Image, threshold_percentile: f64) -> Result<IntensityMask> {
    if !(0.0..100.0).contains(&threshold_percentile) {
        return Err(PcsError::Domain(format!(
            "threshold percentile {threshold_percentile} outside [0,100)"
        )));
    }
    let (h, w) = image.pixels.shape();
    if threshold_percentile == 0.0 {
        return Ok(IntensityMask::full(h, w));
    }
    let mut sorted: Vec<f64> = image.pixels.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((threshold_percentile / 100.0) * n as f64).ceil() as usize;
    let threshold = sorted[rank.clamp(1, n) - 1];
    let mask = image.pixels.map(|v| v > threshold);
    let empty = !mask.iter().any(|v| *v);
    Ok(IntensityMask {
        mask,
        threshold,
        empty,
    })
}

/// Vectorised, unit-norm patches and where they came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchSet {
    pub patches: Vec<DVector<f64>>,
    /// Top-left `(row, col)` of each patch window.
    pub origins: Vec<(usize, usize)>,
    pub source_ids: Vec<usize>,
    pub label: Option<String>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn extend(&mut self, other: PatchSet) {
        self.patches.extend(other.patches);
        self.origins.extend(other.origins);
        self.source_ids.extend(other.source_ids);
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        let n = self.patches.first().map_or(0, |p| p.len());
        DMatrix::from_fn(n, self.patches.len(), |r, c| self.patches[c][r])
    }
}

/// Summed-area table with a zero first row and column.
fn integral<T: Copy>(m: &DMatrix<T>, f: impl Fn(T) -> f64) -> DMatrix<f64> {
    let (h, w) = m.shape();
    let mut s = DMatrix::zeros(h + 1, w + 1);
    for c in 0..w {
        for r in 0..h {
            s[(r + 1, c + 1)] = f(m[(r, c)]) + s[(r, c + 1)] + s[(r + 1, c)] - s[(r, c)];
        }
    }
    s
}

fn window_sum(s: &DMatrix<f64>, r: usize, c: usize, h: usize, w: usize) -> f64 {
    s[(r + h, c + w)] - s[(r, c + w)] - s[(r + h, c)] + s[(r, c)]
}

/// Top-left origins of every window with at least `min_survive_fraction`
/// surviving pixels (and at least one) and a non-zero pixel sum.
pub fn qualifying_origins(
    image: &Image,
    mask: &IntensityMask,
    config: &PatchConfig,
) -> Result<Vec<(usize, usize)>> {
    config.validate()?;
    let (h, w) = image.pixels.shape();
    if mask.mask.shape() != (h, w) {
        return Err(dim("mask shape differs from image shape"));
    }
    let (ph, pw) = (config.patch_height, config.patch_width);
    if ph > h || pw > w {
        return Err(PcsError::InvalidInput(format!(
            "patch {ph}x{pw} larger than image {h}x{w}"
        )));
    }
    let counts = integral(&mask.mask, |b| if b { 1.0 } else { 0.0 });
    let sums = integral(&image.pixels, |v| v);
    let needed = ((config.min_survive_fraction * (ph * pw) as f64) - 1e-9)
        .ceil()
        .max(1.0);
    let mut origins = Vec::new();
    for r in 0..=h - ph {
        for c in 0..=w - pw {
            if window_sum(&counts, r, c, ph, pw) + 0.5 >= needed
                && window_sum(&sums, r, c, ph, pw) > 0.0
            {
                origins.push((r, c));
            }
        }
    }
    Ok(origins)
}

/// Column-major vectorisation of the window at `origin`, scaled to unit
/// norm. `None` for an all-zero window.
pub fn extract_patch(
    image: &Image,
    origin: (usize, usize),
    height: usize,
    width: usize,
) -> Option<DVector<f64>> {
    let view = image.pixels.view(origin, (height, width));
    let v = DVector::from_iterator(height * width, view.iter().copied());
    let norm = v.norm();
    (norm > 0.0).then(|| v / norm)
}

/// Draws exactly `patches_per_image` patches uniformly over qualifying
/// windows: without replacement while possible, then with replacement.
pub fn sample_patches<R: Rng + ?Sized>(
    image: &Image,
    mask: &IntensityMask,
    config: &PatchConfig,
    rng: &mut R,
) -> Result<PatchSet> {
    let mut origins = qualifying_origins(image, mask, config)?;
    if origins.is_empty() {
        return Err(PcsError::NoQualifyingPatch);
    }
    let p = config.patches_per_image;
    origins.shuffle(rng);
    let mut chosen: Vec<(usize, usize)> = origins.iter().copied().take(p).collect();
    while chosen.len() < p {
        chosen.push(origins[rng.random_range(0..origins.len())]);
    }
    let patches = chosen
        .iter()
        .map(|&o| {
            extract_patch(image, o, config.patch_height, config.patch_width)
                .expect("qualifying windows have a non-zero sum")
        })
        .collect();
    Ok(PatchSet {
        patches,
        source_ids: vec![0; chosen.len()],
        origins: chosen,
        label: image.label.clone(),
    })
}

/// Concatenates per-class patch pools class by class into a dictionary,
/// optionally keeping a seeded uniform subsample of `per_class_subsample`
/// columns per class.
pub fn build_dictionary<R: Rng + ?Sized>(
    class_pools: &[PatchSet],
    labels: &[String],
    per_class_subsample: Option<usize>,
    rng: &mut R,
) -> Result<Dictionary> {
    if class_pools.len() < 2 {
        return Err(PcsError::InvalidInput(
            "at least two classes are required".into(),
        ));
    }
    if labels.len() != class_pools.len() {
        return Err(dim("one label per class pool is required"));
    }
    let b = class_pools
        .iter()
        .flat_map(|p| p.patches.first())
        .map(|v| v.len())
        .next()
        .unwrap_or(0);
    let mut blocks = Vec::with_capacity(class_pools.len());
    for (pool, label) in class_pools.iter().zip(labels) {
        if pool.is_empty() {
            return Err(PcsError::InsufficientData(format!(
                "class `{label}` has no patches"
            )));
        }
        if pool.patches.iter().any(|v| v.len() != b) {
            return Err(dim("inconsistent patch lengths"));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        if let Some(keep) = per_class_subsample {
            if keep < idx.len() {
                idx = rand::seq::index::sample(rng, pool.len(), keep).into_vec();
                idx.sort_unstable();
            }
        }
        let mut block = DMatrix::zeros(b, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            let v = &pool.patches[i];
            let norm = v.norm();
            if norm == 0.0 {
                return Err(PcsError::InvalidInput(format!(
                    "zero patch in class `{label}`"
                )));
            }
            block.set_column(c, &(v / norm));
        }
        blocks.push(block);
    }
    Dictionary::from_blocks(blocks, labels.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::WindowRegime;
    use crate::rng::rng_from_seed;

    fn img(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::new(DMatrix::from_fn(rows, cols, f), WindowRegime::Narrow).unwrap()
    }

    #[test]
    fn nearest_rank_threshold() {
        let im = img(2, 2, |r, c| (r * 2 + c) as f64);
        let m = intensity_mask(&im, 20.0).unwrap();
        assert_eq!(m.threshold, 0.0);
        assert_eq!(m.count(), 3);
        assert!(!m.mask[(0, 0)]);
        assert!(!m.empty);
    }

    #[test]
    fn zero_percentile_keeps_everything() {
        let im = img(3, 3, |_, _| 0.0);
        let m = intensity_mask(&im, 0.0).unwrap();
        assert_eq!(m.count(), 9);
    }

    #[test]
    fn constant_image_gives_flagged_empty_mask() {
        let im = img(4, 4, |_, _| 0.7);
        let m = intensity_mask(&im, 20.0).unwrap();
        assert!(m.empty);
        assert_eq!(m.count(), 0);
        assert!(intensity_mask(&im, 100.0).is_err());
    }

    #[test]
    fn full_mask_sampling_in_bounds() {
        let im = img(10, 10, |r, c| 1.0 + (r * 10 + c) as f64);
        let cfg = PatchConfig {
            patch_height: 2,
            patch_width: 2,
            patches_per_image: 5,
            min_survive_fraction: 0.0,
            ..PatchConfig::default()
        };
        let mask = intensity_mask(&im, 0.0).unwrap();
        let set = sample_patches(&im, &mask, &cfg, &mut rng_from_seed(3)).unwrap();
        assert_eq!(set.len(), 5);
        for (&(r, c), v) in set.origins.iter().zip(&set.patches) {
            assert!(r + 2 <= 10 && c + 2 <= 10);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        // distinct while enough windows exist
        let mut o = set.origins.clone();
        o.sort();
        o.dedup();
        assert_eq!(o.len(), 5);
    }

    #[test]
    fn strict_survival_confines_windows() {
        let im = img(8, 8, |_, _| 1.0);
        let mut mask = IntensityMask::full(8, 8);
        for r in 0..8 {
            for c in 4..8 {
                mask.mask[(r, c)] = false;
            }
        }
        let cfg = PatchConfig {
            patch_height: 3,
            patch_width: 3,
            patches_per_image: 20,
            min_survive_fraction: 1.0,
            ..PatchConfig::default()
        };
        let set = sample_patches(&im, &mask, &cfg, &mut rng_from_seed(9)).unwrap();
        assert_eq!(set.len(), 20);
        assert!(set.origins.iter().all(|&(_, c)| c + 3 <= 4));
    }

    #[test]
    fn column_major_vectorisation() {
        let im = img(3, 3, |r, c| (1 + r + 3 * c) as f64);
        let v = extract_patch(&im, (1, 1), 2, 2).unwrap();
        let raw = [5.0, 6.0, 8.0, 9.0];
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in v.iter().zip(raw) {
            assert!((a - b / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn no_qualifying_region() {
        let im = img(4, 4, |_, _| 0.0);
        let cfg = PatchConfig {
            patch_height: 2,
            patch_width: 2,
            ..PatchConfig::default()
        };
        let mask = IntensityMask::full(4, 4);
        let err = sample_patches(&im, &mask, &cfg, &mut rng_from_seed(0)).unwrap_err();
        assert!(matches!(err, PcsError::NoQualifyingPatch));
    }

    #[test]
    fn patch_larger_than_image() {
        let im = img(4, 4, |_, _| 1.0);
        let mask = IntensityMask::full(4, 4);
        let cfg = PatchConfig::default();
        assert!(sample_patches(&im, &mask, &cfg, &mut rng_from_seed(0)).is_err());
    }

    fn pool(label: &str, count: usize, b: usize, offset: f64) -> PatchSet {
        PatchSet {
            patches: (0..count)
                .map(|i| DVector::from_fn(b, |r, _| offset + (r + i) as f64))
                .collect(),
            origins: vec![(0, 0); count],
            source_ids: (0..count).collect(),
            label: Some(label.into()),
        }
    }

    #[test]
    fn dictionary_layout() {
        let pools = vec![pool("a", 4, 4, 1.0), pool("b", 4, 4, 2.0)];
        let labels = vec!["a".to_string(), "b".to_string()];
        let d = build_dictionary(&pools, &labels, None, &mut rng_from_seed(0)).unwrap();
        assert_eq!(d.atoms().shape(), (4, 8));
        assert_eq!(d.class_index_sets()[0], vec![0, 1, 2, 3]);
        assert_eq!(d.class_index_sets()[1], vec![4, 5, 6, 7]);
        for col in d.atoms().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dictionary_subsample_is_seeded() {
        let pools = vec![pool("a", 6, 4, 1.0), pool("b", 6, 4, 2.0)];
        let labels = vec!["a".to_string(), "b".to_string()];
        let d1 = build_dictionary(&pools, &labels, Some(1), &mut rng_from_seed(5)).unwrap();
        let d2 = build_dictionary(&pools, &labels, Some(1), &mut rng_from_seed(5)).unwrap();
        assert_eq!(d1.num_atoms(), 2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn dictionary_errors() {
        let labels = vec!["a".to_string(), "b".to_string()];
        let pools = vec![pool("a", 2, 4, 1.0), PatchSet::default()];
        assert!(build_dictionary(&pools, &labels, None, &mut rng_from_seed(0)).is_err());
        let pools = vec![pool("a", 2, 4, 1.0), pool("b", 2, 5, 1.0)];
        assert!(build_dictionary(&pools, &labels, None, &mut rng_from_seed(0)).is_err());
        let pools = vec![pool("a", 2, 4, 1.0)];
        assert!(build_dictionary(&pools, &labels[..1], None, &mut rng_from_seed(0)).is_err());
    }
}
