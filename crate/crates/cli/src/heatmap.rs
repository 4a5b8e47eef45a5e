//! 16-bit binary PGM heatmaps with a plain-text sidecar describing how
//! pixel values map back to field magnitudes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{GraymapHeader, PnmEncoder, PnmHeader, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageFormat};
use ndarray::Array2;

use crate::config::Scale;
use crate::error::{CliError, CliResult, IoContext};

pub const MAX_LEVEL: f64 = 65535.0;
pub const DEFAULT_FLOOR_DB: f64 = -120.0;

/// Pixel `p` encodes `min + p / 65535 * (max - min)` in the mapped domain.
/// For dB maps the mapped value is `20 log10(|E| / reference)`, clamped at
/// `floor_db`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mapping {
    pub scale: Scale,
    pub floor_db: f64,
    pub reference: f64,
    pub min: f64,
    pub max: f64,
}

impl Mapping {
    pub fn forward(&self, magnitude: f64) -> f64 {
        match self.scale {
            Scale::Linear => magnitude,
            Scale::Db => {
                if self.reference > 0.0 && magnitude > 0.0 {
                    (20.0 * (magnitude / self.reference).log10()).max(self.floor_db)
                } else {
                    self.floor_db
                }
            }
        }
    }

    pub fn inverse(&self, mapped: f64) -> f64 {
        match self.scale {
            Scale::Linear => mapped,
            Scale::Db => self.reference * 10f64.powf(mapped / 20.0),
        }
    }

    pub fn level(&self, mapped: f64) -> u16 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0;
        }
        ((mapped - self.min) / span * MAX_LEVEL).round().clamp(0.0, MAX_LEVEL) as u16
    }

    pub fn unlevel(&self, level: u16) -> f64 {
        self.min + f64::from(level) / MAX_LEVEL * (self.max - self.min)
    }

    fn sidecar(&self, width: usize, height: usize) -> String {
        let scale = match self.scale {
            Scale::Linear => "linear",
            Scale::Db => "db",
        };
        // {:e} prints the shortest representation that round-trips
        format!(
            "format=pgm-p5-16\nwidth={width}\nheight={height}\nscale={scale}\nfloor_db={:e}\nreference={:e}\nmin={:e}\nmax={:e}\n",
            self.floor_db, self.reference, self.min, self.max
        )
    }

    fn parse(text: &str) -> Result<(Self, usize, usize), String> {
        let get = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
                .ok_or_else(|| format!("missing `{key}`"))
        };
        let num = |key: &str| -> Result<f64, String> {
            get(key)?.trim().parse().map_err(|e| format!("`{key}`: {e}"))
        };
        let int = |key: &str| -> Result<usize, String> {
            get(key)?.trim().parse().map_err(|e| format!("`{key}`: {e}"))
        };
        let scale = match get("scale")?.trim() {
            "linear" => Scale::Linear,
            "db" => Scale::Db,
            other => return Err(format!("unknown scale `{other}`")),
        };
        let mapping = Self {
            scale,
            floor_db: num("floor_db")?,
            reference: num("reference")?,
            min: num("min")?,
            max: num("max")?,
        };
        Ok((mapping, int("width")?, int("height")?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
    pub mapping: Mapping,
}

impl Heatmap {
    /// Maps a magnitude image (row-major, first row at the top).
    pub fn from_magnitudes(values: &Array2<f64>, scale: Scale, floor_db: f64) -> CliResult<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::numerical("render: field map contains non-finite values"));
        }
        let (height, width) = values.dim();
        if width == 0 || height == 0 {
            return Err(CliError::numerical("render: empty field map"));
        }
        let reference = values.iter().cloned().fold(0.0, f64::max);
        let mut mapping = Mapping {
            scale,
            floor_db,
            reference,
            min: 0.0,
            max: 0.0,
        };
        let mapped: Vec<f64> = values.iter().map(|&v| mapping.forward(v)).collect();
        mapping.min = mapped.iter().cloned().fold(f64::INFINITY, f64::min);
        mapping.max = mapped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pixels = mapped.iter().map(|&m| mapping.level(m)).collect();
        Ok(Self {
            width,
            height,
            pixels,
            mapping,
        })
    }

    /// Mapped-domain value of every pixel.
    pub fn mapped(&self) -> Array2<f64> {
        let v = self.pixels.iter().map(|&p| self.mapping.unlevel(p)).collect();
        Array2::from_shape_vec((self.height, self.width), v).expect("pixel count matches shape")
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.mapped().mapv(|m| self.mapping.inverse(m))
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("txt")
    }

    /// Writes `path` (PGM) and its `.txt` sidecar.
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let file = File::create(path).at(path)?;
        let mut out = BufWriter::new(file);
        PnmEncoder::new(&mut out)
            // the subtype shortcut only knows 8-bit graymaps
            .with_header(PnmHeader::from(GraymapHeader {
                encoding: SampleEncoding::Binary,
                width: self.width as u32,
                height: self.height as u32,
                maxwhite: 65535,
            }))
            .encode(
                self.pixels.as_slice(),
                self.width as u32,
                self.height as u32,
                ExtendedColorType::L16,
            )
            .at(path)?;
        out.flush().at(path)?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, self.mapping.sidecar(self.width, self.height)).at(&side)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).at(path)?;
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).at(path)?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let pixels = match img {
            DynamicImage::ImageLuma16(buf) => buf.into_raw(),
            _ => return Err(CliError::io(path, "expected a 16-bit grayscale PGM")),
        };
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).at(&side)?;
        let (mapping, w, h) = Mapping::parse(&text).map_err(|e| CliError::io(&side, e))?;
        if (w, h) != (width, height) {
            return Err(CliError::io(&side, format!("sidecar says {w}x{h}, image is {width}x{height}")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            mapping,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_field_is_uniform() {
        let h = Heatmap::from_magnitudes(&Array2::from_elem((3, 4), 2.5), Scale::Linear, DEFAULT_FLOOR_DB).unwrap();
        assert!(h.pixels.iter().all(|&p| p == h.pixels[0]));
    }

    #[test]
    fn peak_is_brightest() {
        let mut v = Array2::from_elem((5, 7), 0.1);
        v[(3, 2)] = 10.0;
        for scale in [Scale::Linear, Scale::Db] {
            let h = Heatmap::from_magnitudes(&v, scale, DEFAULT_FLOOR_DB).unwrap();
            let best = h.pixels.iter().enumerate().max_by_key(|(_, &p)| p).unwrap().0;
            assert_eq!(best, 3 * 7 + 2);
            assert_eq!(h.pixels[best], u16::MAX);
        }
    }

    #[test]
    fn db_clamps_at_floor() {
        let v = array![[1.0, 1e-9, 0.0]];
        let h = Heatmap::from_magnitudes(&v, Scale::Db, -60.0).unwrap();
        assert_eq!(h.mapping.min, -60.0);
        assert_eq!(h.pixels[1], 0);
        assert_eq!(h.pixels[2], 0);
    }

    #[test]
    fn rejects_nan() {
        let v = array![[1.0, f64::NAN]];
        assert!(Heatmap::from_magnitudes(&v, Scale::Linear, -60.0).is_err());
    }

    #[test]
    fn file_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let v = Array2::from_shape_fn((13, 17), |(i, j)| ((i * 17 + j) as f64 * 0.37).sin().abs() * 3.0);
        for (scale, name) in [(Scale::Linear, "lin.pgm"), (Scale::Db, "db.pgm")] {
            let path = dir.path().join(name);
            let h = Heatmap::from_magnitudes(&v, scale, DEFAULT_FLOOR_DB).unwrap();
            h.write(&path).unwrap();
            let back = Heatmap::read(&path).unwrap();
            assert_eq!(back, h);
            let span = h.mapping.max - h.mapping.min;
            for (m, &orig) in back.mapped().iter().zip(v.iter()) {
                assert!((m - h.mapping.forward(orig)).abs() <= span / MAX_LEVEL);
            }
        }
    }

    #[test]
    fn header_is_p5_sixteen_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        Heatmap::from_magnitudes(&array![[0.0, 1.0]], Scale::Linear, -120.0).unwrap().write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..12]);
        assert!(text.starts_with("P5"), "{text}");
        assert!(text.contains("65535"), "{text}");
        // big-endian samples: 0x0000 then 0xFFFF
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 0, 0xFF, 0xFF]);
    }

    #[test]
    fn truncated_pgm_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        Heatmap::from_magnitudes(&Array2::from_elem((4, 4), 1.0), Scale::Linear, -120.0).unwrap().write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Heatmap::read(&path).is_err());
        std::fs::write(&path, b"P5 garbage").unwrap();
        assert!(Heatmap::read(&path).is_err());
    }
}
