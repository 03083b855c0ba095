//! `HEEG1` epoch-record files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HEEG1"  C: u16  T: u32  D: u16 (= 1)  n: u32
//! n × C × T float32, record-major then channel-major
//! n label bytes, stage codes 0..=4
//! ```

use std::fs;
use std::path::Path;

use hass_core::{EpochRecord, SleepStage, Tensor};

use crate::error::FormatError;

pub const MAGIC: &[u8; 5] = b"HEEG1";
pub const HEADER_LEN: usize = 5 + 2 + 4 + 2 + 4;

/// A homogeneous collection of records as stored in one file.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub timesteps: usize,
    pub records: Vec<EpochRecord>,
}

impl Dataset {
    /// Checks that every record has the same `C×T×1` shape.
    pub fn new(records: Vec<EpochRecord>) -> Result<Self, FormatError> {
        let first = records.first().ok_or(FormatError::EmptyDataset)?;
        let (channels, timesteps) = (first.channels(), first.timesteps());
        if channels > u16::MAX as usize || timesteps > u32::MAX as usize {
            return Err(FormatError::HeaderRange);
        }
        if let Some(index) = records
            .iter()
            .position(|r| r.channels() != channels || r.timesteps() != timesteps)
        {
            return Err(FormatError::Inhomogeneous { index });
        }
        Ok(Self {
            channels,
            timesteps,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>, FormatError> {
    let n = u32::try_from(data.records.len()).map_err(|_| FormatError::HeaderRange)?;
    let per_record = data.channels * data.timesteps;
    let mut out = Vec::with_capacity(HEADER_LEN + data.records.len() * (per_record * 4 + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(data.channels as u16).to_le_bytes());
    out.extend_from_slice(&(data.timesteps as u32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for (index, r) in data.records.iter().enumerate() {
        if r.channels() != data.channels || r.timesteps() != data.timesteps {
            return Err(FormatError::Inhomogeneous { index });
        }
        for &v in r.signal.data() {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(FormatError::NonFinite { record: index });
            }
            out.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    out.extend(data.records.iter().map(|r| r.label.code()));
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated {
            expected: end as u64,
            found: self.bytes.len() as u64,
        })?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }
}

/// Parses a complete file image. Never panics; every malformed input maps to a [`FormatError`].
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, FormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let channels = u16::from_le_bytes(r.take()?) as usize;
    let timesteps = u32::from_le_bytes(r.take()?) as usize;
    let depth = u16::from_le_bytes(r.take()?);
    let n = u32::from_le_bytes(r.take()?) as usize;
    if depth != 1 {
        return Err(FormatError::UnsupportedDepth(depth));
    }
    if channels == 0 || timesteps == 0 {
        return Err(FormatError::EmptyExtent);
    }

    let expected = (channels as u64)
        .checked_mul(timesteps as u64)
        .and_then(|ct| ct.checked_mul(4))
        .and_then(|rec| rec.checked_add(1))
        .and_then(|rec| rec.checked_mul(n as u64))
        .and_then(|body| body.checked_add(HEADER_LEN as u64))
        .ok_or(FormatError::HeaderRange)?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(FormatError::Truncated { expected, found });
    }
    if found > expected {
        return Err(FormatError::LengthMismatch { expected, found });
    }

    let per_record = channels * timesteps;
    let payload = &bytes[HEADER_LEN..HEADER_LEN + n * per_record * 4];
    let labels = &bytes[HEADER_LEN + n * per_record * 4..];
    let mut records = Vec::with_capacity(n);
    for (index, (chunk, &code)) in payload.chunks_exact(per_record * 4).zip(labels).enumerate() {
        let label = SleepStage::from_code(code).ok_or(FormatError::LabelOutOfRange { record: index, code })?;
        let data: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { record: index });
        }
        let signal = Tensor::new(&[channels, timesteps, 1], data).expect("extents checked");
        records.push(EpochRecord { signal, label });
    }
    Ok(Dataset {
        channels,
        timesteps,
        records,
    })
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<(), FormatError> {
    let bytes = encode_dataset(data)?;
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hass_core::synth::generate_synthetic;
    use hass_core::SynthSpec;

    fn sample(n: usize) -> Dataset {
        Dataset::new(generate_synthetic(&SynthSpec::new(6, 32, n, 3)).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_at_f32() {
        let data = sample(3);
        let bytes = encode_dataset(&data).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in data.records.iter().zip(&back.records) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.signal.data().iter().zip(b.signal.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn distinct_errors() {
        assert_eq!(decode_dataset(&[]), Err(FormatError::BadMagic));
        let bytes = encode_dataset(&sample(2)).unwrap();

        let mut bad_label = bytes.clone();
        *bad_label.last_mut().unwrap() = 7;
        assert_eq!(
            decode_dataset(&bad_label),
            Err(FormatError::LabelOutOfRange { record: 1, code: 7 })
        );

        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(
            decode_dataset(&bytes[..9]),
            Err(FormatError::Truncated { .. })
        ));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_dataset(&long), Err(FormatError::LengthMismatch { .. })));

        let mut deep = bytes.clone();
        deep[11] = 2;
        assert_eq!(decode_dataset(&deep), Err(FormatError::UnsupportedDepth(2)));

        let mut nan = bytes;
        nan[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_dataset(&nan), Err(FormatError::NonFinite { record: 0 }));
    }

    #[test]
    fn huge_declared_counts_fail_without_allocating() {
        let header = |c: u16, t: u32, n: u32| {
            let mut bytes = MAGIC.to_vec();
            bytes.extend_from_slice(&c.to_le_bytes());
            bytes.extend_from_slice(&t.to_le_bytes());
            bytes.extend_from_slice(&1u16.to_le_bytes());
            bytes.extend_from_slice(&n.to_le_bytes());
            bytes
        };
        // byte count overflows u64
        assert_eq!(
            decode_dataset(&header(u16::MAX, u32::MAX, u32::MAX)),
            Err(FormatError::HeaderRange)
        );
        assert!(matches!(
            decode_dataset(&header(64, 1 << 20, u32::MAX)),
            Err(FormatError::Truncated { found: 17, .. })
        ));
    }

    #[test]
    fn rejects_mixed_shapes() {
        let mut recs = generate_synthetic(&SynthSpec::new(2, 8, 2, 0)).unwrap();
        recs.extend(generate_synthetic(&SynthSpec::new(3, 8, 1, 0)).unwrap());
        assert_eq!(Dataset::new(recs), Err(FormatError::Inhomogeneous { index: 2 }));
        assert_eq!(Dataset::new(Vec::new()), Err(FormatError::EmptyDataset));
    }
}
