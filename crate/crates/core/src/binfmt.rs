//! Little-endian binary layouts for masks and filter banks.
//!
//! Mask: `T F N` as u32, then T·F·N f32 values in (t, f, n) row-major order.
//! Bank: `F N M` as u32, then F·N·M complex values as interleaved (re, im) f32 pairs.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::beamformer::{BeamformerBank, BeamformerKind};
use crate::error::{Error, Result};
use crate::hermitian::ComplexVector;
use crate::mask_cov::MaskTensor;

fn header(bytes: &[u8], what: &str) -> Result<[usize; 3]> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!("{what} file shorter than its header")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    Ok([word(0), word(1), word(2)])
}

fn floats(body: &[u8]) -> impl Iterator<Item = f64> + '_ {
    body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
}

fn push_header(out: &mut Vec<u8>, dims: [usize; 3]) -> Result<()> {
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

pub fn encode_mask(mask: &MaskTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * mask.values().len());
    push_header(&mut out, mask.dims())?;
    for &v in mask.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<MaskTensor> {
    let [t, f, n] = header(bytes, "mask")?;
    let count = t.checked_mul(f).and_then(|v| v.checked_mul(n)).ok_or_else(|| Error::Format("mask dims overflow".into()))?;
    if bytes.len() != 12 + 4 * count {
        return Err(Error::Format(format!("mask body holds {} bytes, expected {}", bytes.len() - 12, 4 * count)));
    }
    MaskTensor::from_vec(floats(&bytes[12..]).collect(), t, f, n)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskTensor) -> Result<()> {
    fs::write(path, encode_mask(mask)?)?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskTensor> {
    decode_mask(&fs::read(path)?)
}

pub fn encode_bank(bank: &BeamformerBank) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 8 * bank.filters().len() * bank.mics());
    push_header(&mut out, [bank.bins(), bank.sources(), bank.mics()])?;
    for w in bank.filters() {
        for c in w.iter() {
            out.extend_from_slice(&(c.re as f32).to_le_bytes());
            out.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// The layout does not carry the beamformer kind, so the caller supplies it.
pub fn decode_bank(bytes: &[u8], kind: BeamformerKind) -> Result<BeamformerBank> {
    let [f, n, m] = header(bytes, "bank")?;
    let count = f.checked_mul(n).and_then(|v| v.checked_mul(m)).ok_or_else(|| Error::Format("bank dims overflow".into()))?;
    if m == 0 || bytes.len() != 12 + 8 * count {
        return Err(Error::Format("bank body length does not match its header".into()));
    }
    let vals: Vec<f64> = floats(&bytes[12..]).collect();
    let filters = vals
        .chunks_exact(2 * m)
        .map(|w| ComplexVector::from_slice(&w.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect::<Vec<_>>()))
        .collect();
    BeamformerBank::from_filters(kind, filters, f, n)
}

pub fn write_bank(path: impl AsRef<Path>, bank: &BeamformerBank) -> Result<()> {
    fs::write(path, encode_bank(bank)?)?;
    Ok(())
}

pub fn read_bank(path: impl AsRef<Path>, kind: BeamformerKind) -> Result<BeamformerBank> {
    decode_bank(&fs::read(path)?, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_layout_is_little_endian_row_major() {
        let mask = MaskTensor::from_vec(vec![0.0, 0.25, 0.5, 1.0, 0.75, 0.125], 1, 3, 2).unwrap();
        let bytes = encode_mask(&mask).unwrap();
        assert_eq!(&bytes[..12], &[1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.25f32.to_le_bytes());
        assert_eq!(decode_mask(&bytes).unwrap(), mask);
    }

    #[test]
    fn truncated_files_are_rejected() {
        let mask = MaskTensor::filled(2, 2, 1, 0.5).unwrap();
        let bytes = encode_mask(&mask).unwrap();
        assert!(decode_mask(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_mask(&bytes[..8]).is_err());
    }

    #[test]
    fn bank_round_trip() {
        let filters: Vec<ComplexVector> = (0..6)
            .map(|i| ComplexVector::from_slice(&[Complex64::new(i as f64 * 0.5, -1.0), Complex64::new(0.25, i as f64)]))
            .collect();
        let bank = BeamformerBank::from_filters(BeamformerKind::Mvdr, filters, 3, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.bin");
        write_bank(&path, &bank).unwrap();
        let back = read_bank(&path, BeamformerKind::Mvdr).unwrap();
        assert_eq!(back, bank);
    }
}
