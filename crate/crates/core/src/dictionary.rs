//! Column dictionaries with per-class index sets, and their flat binary
//! persistence format.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! b"PCSD" | version: u32 | N: u32 | M: u32 | K: u32
//! K x (start: u32, end: u32)      half-open column range of class k
//! M x N f64                        atoms, column-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{dim, PcsError, Result};

pub const DICT_MAGIC: &[u8; 4] = b"PCSD";
pub const DICT_VERSION: u32 = 1;

const UNIT_NORM_TOL: f64 = 1e-10;

/// Unit-norm atoms (one per column) partitioned into K class index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    class_index_sets: Vec<Vec<usize>>,
    class_labels: Vec<String>,
    atom_class: Vec<usize>,
}

impl Dictionary {
    /// Validates the invariants: unit-norm columns, disjoint index sets that
    /// cover every column, `N >= 1` and `M >= K >= 2`.
    pub fn new(
        atoms: DMatrix<f64>,
        class_index_sets: Vec<Vec<usize>>,
        class_labels: Vec<String>,
    ) -> Result<Self> {
        let (n, m) = atoms.shape();
        let k = class_index_sets.len();
        if n == 0 {
            return Err(dim("dictionary must have at least one row"));
        }
        if k < 2 || m < k {
            return Err(PcsError::InvalidInput(format!(
                "dictionary needs M >= K >= 2, got M={m}, K={k}"
            )));
        }
        if class_labels.len() != k {
            return Err(dim(format!(
                "{} class labels for {k} index sets",
                class_labels.len()
            )));
        }
        let mut atom_class = vec![usize::MAX; m];
        for (class, set) in class_index_sets.iter().enumerate() {
            if set.is_empty() {
                return Err(PcsError::InvalidInput(format!(
                    "class {class} has no atoms"
                )));
            }
            for &i in set {
                if i >= m {
                    return Err(dim(format!("index {i} out of range for {m} atoms")));
                }
                if atom_class[i] != usize::MAX {
                    return Err(PcsError::InvalidInput(format!(
                        "atom {i} appears in more than one index set"
                    )));
                }
                atom_class[i] = class;
            }
        }
        if let Some(i) = atom_class.iter().position(|&c| c == usize::MAX) {
            return Err(PcsError::InvalidInput(format!(
                "atom {i} belongs to no class"
            )));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(PcsError::InvalidInput(format!(
                    "atom {j} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self {
            atoms,
            class_index_sets,
            class_labels,
            atom_class,
        })
    }

    /// Builds a dictionary from per-class column blocks laid out in order.
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>, class_labels: Vec<String>) -> Result<Self> {
        let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
        if blocks.iter().any(|b| b.nrows() != n) {
            return Err(dim("class blocks have different row counts"));
        }
        let m: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut atoms = DMatrix::zeros(n, m);
        let mut sets = Vec::with_capacity(blocks.len());
        let mut start = 0;
        for block in &blocks {
            let end = start + block.ncols();
            atoms.columns_mut(start, block.ncols()).copy_from(block);
            sets.push((start..end).collect());
            start = end;
        }
        Self::new(atoms, sets, class_labels)
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn class_index_sets(&self) -> &[Vec<usize>] {
        &self.class_index_sets
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    /// Class of every atom, indexed by column.
    pub fn atom_classes(&self) -> &[usize] {
        &self.atom_class
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index_sets.len()
    }

    pub fn class_of(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.num_classes() {
            return Err(dim("label count does not match class count"));
        }
        self.class_labels = labels;
        Ok(self)
    }

    /// Half-open column range per class, if every index set is contiguous.
    pub fn class_ranges(&self) -> Option<Vec<(usize, usize)>> {
        self.class_index_sets
            .iter()
            .map(|set| {
                let start = *set.iter().min()?;
                let end = *set.iter().max()? + 1;
                (end - start == set.len()).then_some((start, end))
            })
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let ranges = self.class_ranges().ok_or_else(|| {
            PcsError::InvalidInput("only contiguous class index sets can be persisted".into())
        })?;
        let as_u32 = |v: usize| {
            u32::try_from(v).map_err(|_| PcsError::InvalidInput(format!("{v} exceeds u32")))
        };
        w.write_all(DICT_MAGIC)?;
        w.write_all(&DICT_VERSION.to_le_bytes())?;
        w.write_all(&as_u32(self.dim())?.to_le_bytes())?;
        w.write_all(&as_u32(self.num_atoms())?.to_le_bytes())?;
        w.write_all(&as_u32(self.num_classes())?.to_le_bytes())?;
        for (start, end) in ranges {
            w.write_all(&as_u32(start)?.to_le_bytes())?;
            w.write_all(&as_u32(end)?.to_le_bytes())?;
        }
        // nalgebra storage is already column-major.
        for v in self.atoms.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dictionary; class labels are not part of the binary format
    /// and default to `class0..classK-1` until replaced via
    /// [`Dictionary::with_labels`].
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DICT_MAGIC {
            return Err(PcsError::Format("bad dictionary magic".into()));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != DICT_VERSION {
            return Err(PcsError::Format(format!(
                "unsupported dictionary version {version}"
            )));
        }
        let n = read_u32(&mut r)? as usize;
        let m = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let mut sets = Vec::with_capacity(k);
        for _ in 0..k {
            let start = read_u32(&mut r)? as usize;
            let end = read_u32(&mut r)? as usize;
            if end < start || end > m {
                return Err(PcsError::Format(format!("bad class range {start}..{end}")));
            }
            sets.push((start..end).collect());
        }
        let mut data = vec![0f64; n * m];
        let mut b = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let labels = (0..k).map(|i| format!("class{i}")).collect();
        Self::new(DMatrix::from_vec(n, m, data), sets, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Scales every column of `m` to unit ℓ2 norm. Returns `None` if a column
/// is zero or non-finite.
pub fn normalize_columns(mut m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        col /= norm;
    }
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class() -> Dictionary {
        let atoms = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        Dictionary::new(
            atoms,
            vec![vec![0, 2], vec![1]],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn rejects_overlapping_or_missing_indices() {
        let atoms = DMatrix::identity(2, 3).map(|v: f64| v);
        let mut atoms = atoms;
        atoms[(0, 2)] = 1.0;
        let labels = vec!["a".to_string(), "b".to_string()];
        assert!(
            Dictionary::new(atoms.clone(), vec![vec![0, 1], vec![1, 2]], labels.clone()).is_err()
        );
        assert!(Dictionary::new(atoms.clone(), vec![vec![0], vec![1]], labels.clone()).is_err());
        assert!(Dictionary::new(atoms, vec![vec![0, 2], vec![1]], labels).is_ok());
    }

    #[test]
    fn rejects_non_unit_columns() {
        let atoms = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let r = Dictionary::new(atoms, vec![vec![0], vec![1]], vec!["a".into(), "b".into()]);
        assert!(r.is_err());
    }

    #[test]
    fn single_class_rejected() {
        let atoms = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(Dictionary::new(atoms, vec![vec![0, 1]], vec!["a".into()]).is_err());
    }

    #[test]
    fn binary_roundtrip_and_layout() {
        let d = Dictionary::from_blocks(
            vec![
                DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
                DMatrix::from_column_slice(2, 2, &[0.0, 1.0, 0.6, 0.8]),
            ],
            vec!["class0".into(), "class1".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PCSD");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
        // ranges 0..1, 1..3
        let ranges: Vec<u32> = buf[20..36]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(ranges, vec![0, 1, 1, 3]);
        assert_eq!(buf.len(), 36 + 6 * 8);
        let back = Dictionary::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn non_contiguous_sets_cannot_be_saved() {
        let mut buf = Vec::new();
        assert!(two_class().write_to(&mut buf).is_err());
    }
}
