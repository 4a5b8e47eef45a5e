//! The `RFCB` little-endian codebook file.
//!
//! ```text
//! header  "RFCB" | version u32 | frequency f64 | rows u32 | cols u32
//!         | dx f64 | dy f64 | rho f64 | e0 f64 | count u32
//! entry   theta_i f64 | phi_i f64 | theta_d f64 | phi_d f64 | rows*cols f64 phases
//! ```
//!
//! Cached peak magnitudes are not stored; they are recomputed on load.

use thiserror::Error;

use super::{ArrayDescriptor, Codebook};
use crate::farfield::{Direction, FarFieldConfig};
use crate::geometry::RisArray;
use crate::phase::PhaseProfile;

pub const MAGIC: [u8; 4] = *b"RFCB";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 8 + 8 + 8 + 8 + 4;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a codebook file (bad magic)")]
    BadMagic,
    #[error("unsupported codebook version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("codebook truncated in the header")]
    TruncatedHeader,
    #[error("codebook truncated in entry {entry}")]
    Truncated { entry: usize },
    #[error("inconsistent codebook: {0}")]
    Inconsistent(String),
    #[error("codebook i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub(super) fn encode(cb: &Codebook) -> Vec<u8> {
    let d = cb.descriptor();
    let n_el = d.array.len();
    let mut out = Vec::with_capacity(HEADER_LEN + cb.len() * (32 + 8 * n_el));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&d.frequency.to_le_bytes());
    out.extend_from_slice(&(d.array.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(d.array.cols() as u32).to_le_bytes());
    out.extend_from_slice(&d.array.spacing_x().to_le_bytes());
    out.extend_from_slice(&d.array.spacing_y().to_le_bytes());
    out.extend_from_slice(&d.config.rho.to_le_bytes());
    out.extend_from_slice(&d.config.e0.to_le_bytes());
    out.extend_from_slice(&(cb.len() as u32).to_le_bytes());
    for e in cb.entries() {
        for v in [e.aoa.theta, e.aoa.phi, e.aod.theta, e.aod.phi] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in e.phase.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let end = self.pos.checked_add(N)?;
        let chunk = self.bytes.get(self.pos..end)?;
        self.pos = end;
        chunk.try_into().ok()
    }

    fn u32(&mut self) -> Option<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Option<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

type RawEntry = (Direction, Direction, PhaseProfile);

pub(super) fn decode(bytes: &[u8]) -> Result<(ArrayDescriptor, Vec<RawEntry>), FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take::<4>().ok_or(FormatError::BadMagic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u32().ok_or(FormatError::TruncatedHeader)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let h = (|| {
        Some((
            r.f64()?,
            r.u32()?,
            r.u32()?,
            r.f64()?,
            r.f64()?,
            r.f64()?,
            r.f64()?,
            r.u32()?,
        ))
    })();
    let (frequency, rows, cols, dx, dy, rho, e0, count) = h.ok_or(FormatError::TruncatedHeader)?;
    let inconsistent = |e: crate::error::Error| FormatError::Inconsistent(e.to_string());
    let array = RisArray::planar(rows as usize, cols as usize, dx, dy).map_err(inconsistent)?;
    let config = FarFieldConfig::new(rho, e0).map_err(inconsistent)?;
    let descriptor = ArrayDescriptor::new(array, config, frequency).map_err(inconsistent)?;

    let n_el = rows as usize * cols as usize;
    let entry_len = 32 + 8 * n_el;
    let count = count as usize;
    // Size checks come before allocation so hostile counts cannot exhaust memory.
    if r.remaining() < count.saturating_mul(entry_len) {
        return Err(FormatError::Truncated {
            entry: r.remaining() / entry_len,
        });
    }
    if r.remaining() > count * entry_len {
        return Err(FormatError::Inconsistent(format!(
            "{} trailing bytes after {count} entries",
            r.remaining() - count * entry_len
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let mut next = || r.f64().ok_or(FormatError::Truncated { entry: i });
        let aoa = Direction::new(next()?, next()?);
        let aod = Direction::new(next()?, next()?);
        for (dir, what) in [(aoa, "aoa"), (aod, "aod")] {
            dir.validate()
                .map_err(|e| FormatError::Inconsistent(format!("entry {i} {what}: {e}")))?;
        }
        let phases = (0..n_el).map(|_| next()).collect::<Result<Vec<_>, _>>()?;
        if phases.iter().any(|p| !(0.0..std::f64::consts::TAU).contains(p)) {
            return Err(FormatError::Inconsistent(format!("entry {i}: phase outside [0, 2pi)")));
        }
        let phase = PhaseProfile::from_vec(rows as usize, cols as usize, phases)
            .map_err(inconsistent)?;
        entries.push((aoa, aod, phase));
    }
    Ok((descriptor, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::build_codebook;
    use crate::error::Error;
    use crate::geometry::wavelength_from_frequency;

    fn sample() -> Codebook {
        let f = 28e9;
        let lam = wavelength_from_frequency(f);
        let array = RisArray::planar(3, 2, lam / 2.0, lam / 2.0).unwrap();
        let desc = ArrayDescriptor::new(array, FarFieldConfig::default(), f).unwrap();
        let pairs = [
            (Direction::from_degrees(10.0, 20.0), Direction::from_degrees(30.0, 40.0)),
            (Direction::from_degrees(10.0, 20.0), Direction::from_degrees(50.0, 60.0)),
        ];
        build_codebook(&desc, &pairs).unwrap()
    }

    fn fmt_err(bytes: &[u8]) -> FormatError {
        match Codebook::from_bytes(bytes) {
            Err(Error::Format(e)) => e,
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"RFCB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * (32 + 8 * 6));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(fmt_err(&bytes), FormatError::BadMagic));
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(fmt_err(&bytes), FormatError::UnsupportedVersion(9)));
        assert!(matches!(fmt_err(b"RF"), FormatError::BadMagic));
    }

    #[test]
    fn truncation_names_entry() {
        let bytes = sample().to_bytes();
        let cut = HEADER_LEN + (32 + 48) + 20;
        assert!(matches!(fmt_err(&bytes[..cut]), FormatError::Truncated { entry: 1 }));
        assert!(matches!(fmt_err(&bytes[..HEADER_LEN - 3]), FormatError::TruncatedHeader));
    }

    #[test]
    fn inconsistent_shapes() {
        let mut bytes = sample().to_bytes();
        bytes[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(fmt_err(&bytes), FormatError::Inconsistent(_)));
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(fmt_err(&bytes), FormatError::Inconsistent(_)));
    }

    #[test]
    fn every_prefix_fails_cleanly() {
        let bytes = sample().to_bytes();
        for n in 0..bytes.len() {
            assert!(Codebook::from_bytes(&bytes[..n]).is_err());
        }
    }

    #[test]
    fn huge_count_does_not_allocate() {
        let mut bytes = sample().to_bytes();
        let at = HEADER_LEN - 4;
        bytes[at..at + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(fmt_err(&bytes), FormatError::Truncated { .. }));
    }
}
