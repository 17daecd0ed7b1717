//! Magnitude images and 16-bit binary PGM (P5) I/O.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{PcsError, Result};

/// How much background surrounds the target in a capture window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowRegime {
    Narrow,
    Middling,
    Expansive,
}

impl WindowRegime {
    pub const ALL: [WindowRegime; 3] = [Self::Narrow, Self::Middling, Self::Expansive];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Narrow => "narrow",
            Self::Middling => "middling",
            Self::Expansive => "expansive",
        }
    }
}

impl fmt::Display for WindowRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WindowRegime {
    type Err = PcsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "narrow" => Ok(Self::Narrow),
            "middling" => Ok(Self::Middling),
            "expansive" => Ok(Self::Expansive),
            other => Err(PcsError::InvalidInput(format!(
                "unknown window regime `{other}`"
            ))),
        }
    }
}

/// A non-negative magnitude image. Pixels are stored `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: DMatrix<f64>,
    pub label: Option<String>,
    pub regime: WindowRegime,
}

impl Image {
    pub fn new(pixels: DMatrix<f64>, regime: WindowRegime) -> Result<Self> {
        if pixels.is_empty() {
            return Err(PcsError::InvalidInput("image has no pixels".into()));
        }
        if let Some(v) = pixels.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(PcsError::InvalidInput(format!("invalid pixel value {v}")));
        }
        Ok(Self {
            pixels,
            label: None,
            regime,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn max(&self) -> f64 {
        self.pixels.max()
    }

    /// Scales pixels so the maximum is 1; an all-zero image is unchanged.
    pub fn normalize(&mut self) {
        let max = self.max();
        if max > 0.0 {
            self.pixels /= max;
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// Encodes as binary PGM, maxval 65535, big-endian samples, row-major.
    /// Pixels are clamped to `[0, 1]` and scaled to the 16-bit range.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let (h, w) = self.pixels.shape();
        let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
        out.reserve(2 * h * w);
        for r in 0..h {
            for c in 0..w {
                let v = (self.pixels[(r, c)].clamp(0.0, 1.0) * 65535.0).round() as u16;
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    /// Decodes binary PGM (8- or 16-bit) and normalises the maximum to 1.
    pub fn from_pgm_bytes(bytes: &[u8], regime: WindowRegime) -> Result<Self> {
        let mut pos = 0;
        let mut token = || -> Result<&[u8]> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(PcsError::Format("truncated PGM header".into()));
            }
            Ok(&bytes[start..pos])
        };
        if token()? != b"P5" {
            return Err(PcsError::Format("not a binary PGM (P5)".into()));
        }
        let mut number = |name: &str| -> Result<usize> {
            let t = token()?;
            std::str::from_utf8(t)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| PcsError::Format(format!("bad PGM {name}")))
        };
        let w = number("width")?;
        let h = number("height")?;
        let maxval = number("maxval")?;
        if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
            return Err(PcsError::Format(format!(
                "bad PGM geometry {w}x{h} max {maxval}"
            )));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let bps = if maxval > 255 { 2 } else { 1 };
        let data = bytes
            .get(pos..pos + w * h * bps)
            .ok_or_else(|| PcsError::Format("truncated PGM raster".into()))?;
        let pixels = DMatrix::from_fn(h, w, |r, c| {
            let i = (r * w + c) * bps;
            let v = if bps == 2 {
                u16::from_be_bytes([data[i], data[i + 1]]) as f64
            } else {
                data[i] as f64
            };
            v / maxval as f64
        });
        Ok(Self::new(pixels, regime)?.normalized())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_pgm_bytes())?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>, regime: WindowRegime) -> Result<Self> {
        Self::from_pgm_bytes(&fs::read(path)?, regime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_byte_order() {
        let px = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.5, 0.25, 0.0, 1.0]);
        let img = Image::new(px, WindowRegime::Narrow).unwrap();
        let bytes = img.to_pgm_bytes();
        let header = b"P5\n3 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let raster = &bytes[header.len()..];
        assert_eq!(raster.len(), 12);
        assert_eq!(&raster[0..4], &[0x00, 0x00, 0xFF, 0xFF]);
        // 0.5 * 65535 = 32767.5 -> 32768
        assert_eq!(&raster[4..6], &[0x80, 0x00]);
    }

    #[test]
    fn pgm_roundtrip_is_exact_on_grid_values() {
        let px = DMatrix::from_fn(5, 4, |r, c| ((r * 4 + c) as f64 * 3000.0) / 65535.0);
        let mut img = Image::new(px, WindowRegime::Middling).unwrap();
        img.normalize();
        let back = Image::from_pgm_bytes(&img.to_pgm_bytes(), WindowRegime::Middling).unwrap();
        assert_eq!(back.to_pgm_bytes(), img.to_pgm_bytes());
        assert_eq!(back.max(), 1.0);
    }

    #[test]
    fn pgm_8bit_with_comment() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[51, 102]);
        let img = Image::from_pgm_bytes(&bytes, WindowRegime::Narrow).unwrap();
        assert_eq!(img.width(), 2);
        assert!((img.pixels[(0, 0)] - 0.5).abs() < 1e-12);
        assert_eq!(img.pixels[(0, 1)], 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Image::from_pgm_bytes(b"P2\n1 1\n255\n0", WindowRegime::Narrow).is_err());
        assert!(Image::from_pgm_bytes(b"P5\n4 4\n255\n\x00", WindowRegime::Narrow).is_err());
        let neg = DMatrix::from_element(1, 1, -1.0);
        assert!(Image::new(neg, WindowRegime::Narrow).is_err());
    }

    #[test]
    fn regime_parse() {
        for r in WindowRegime::ALL {
            assert_eq!(r.as_str().parse::<WindowRegime>().unwrap(), r);
        }
        assert!("wide".parse::<WindowRegime>().is_err());
    }
}
