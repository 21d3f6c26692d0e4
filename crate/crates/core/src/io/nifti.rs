//! Reader for a strict subset of single-file NIfTI-1.
//!
//! Supported: uncompressed little-endian `n+1` files with datatype uint8,
//! int16 or float32 and identity scaling. Anything else is rejected.

use std::fs;
use std::path::Path;

use super::mvol::{AnyVolume, Content};
use super::IngestError;
use crate::volume::{MaskVolume, Volume3D};

const HEADER_SIZE: usize = 348;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

pub fn decode_nifti_subset(bytes: &[u8], content: Content) -> Result<AnyVolume, IngestError> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(IngestError::UnsupportedFormat("gzip-compressed NIfTI".into()));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(IngestError::UnsupportedFormat("file shorter than a NIfTI-1 header".into()));
    }
    match i32_at(bytes, 0) {
        348 => {}
        v if v.swap_bytes() == 348 => {
            return Err(IngestError::UnsupportedFormat("big-endian NIfTI".into()));
        }
        _ => return Err(IngestError::UnsupportedFormat("sizeof_hdr is not 348".into())),
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(IngestError::UnsupportedFormat("magic is not single-file NIfTI-1 (n+1)".into()));
    }

    let ndim = i16_at(bytes, 40);
    if !(3..=7).contains(&ndim) {
        return Err(IngestError::UnsupportedFormat(format!("dim[0] = {ndim}; need a 3-D volume")));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = i16_at(bytes, 42 + 2 * i);
        if v <= 0 {
            return Err(IngestError::UnsupportedFormat(format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    for i in 4..=ndim as usize {
        if i16_at(bytes, 40 + 2 * i) > 1 {
            return Err(IngestError::UnsupportedFormat("volumes with more than 3 dimensions".into()));
        }
    }

    let datatype = i16_at(bytes, 70);
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(IngestError::UnsupportedDatatype(other)),
    };

    let mut spacing = [0.0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = f32_at(bytes, 80 + 4 * i) as f64;
    }

    let slope = f32_at(bytes, 112);
    let inter = f32_at(bytes, 116);
    if !(slope == 0.0 || slope == 1.0) || inter != 0.0 {
        return Err(IngestError::UnsupportedFormat(format!(
            "intensity scaling (scl_slope = {slope}, scl_inter = {inter})"
        )));
    }

    let vox_offset = f32_at(bytes, 108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 || vox_offset.fract() != 0.0 {
        return Err(IngestError::UnsupportedFormat(format!("vox_offset = {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n: usize = dims.iter().product();
    let available = bytes.len().saturating_sub(start);
    if available < n * elem {
        return Err(IngestError::SizeMismatch { expected: n * elem, actual: available });
    }
    let payload = &bytes[start..start + n * elem];

    let values: Vec<f32> = match datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f32).collect(),
        DT_INT16 => payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32).collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };

    match content {
        Content::Image => Ok(AnyVolume::Image(Volume3D::new(dims, spacing, values)?)),
        Content::Mask => {
            let mut codes = Vec::with_capacity(n);
            for v in values {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(IngestError::UnsupportedFormat(format!("mask value {v} is not a label code")));
                }
                codes.push(v as u8);
            }
            Ok(AnyVolume::Mask(MaskVolume::from_codes(dims, spacing, &codes)?))
        }
    }
}

pub fn read_nifti_subset(path: impl AsRef<Path>, content: Content) -> Result<AnyVolume, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    decode_nifti_subset(&bytes, content)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Header assembled field by field from the NIfTI-1 layout.
    fn header(datatype: i16, bitpix: i16, dims: [i16; 3], pixdim: [f32; 3]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes()); // sizeof_hdr
        h[40..42].copy_from_slice(&3i16.to_le_bytes()); // dim[0]
        for (i, d) in dims.iter().enumerate() {
            h[42 + 2 * i..44 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        for i in 3..7 {
            h[42 + 2 * i..44 + 2 * i].copy_from_slice(&1i16.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[72..74].copy_from_slice(&bitpix.to_le_bytes());
        h[76..80].copy_from_slice(&1.0f32.to_le_bytes()); // pixdim[0] = qfac
        for (i, p) in pixdim.iter().enumerate() {
            h[80 + 4 * i..84 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352.0f32.to_le_bytes()); // vox_offset
        h[112..116].copy_from_slice(&1.0f32.to_le_bytes()); // scl_slope
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    #[test]
    fn minimal_float_volume() {
        let mut bytes = header(16, 32, [2, 2, 2], [0.5, 0.75, 3.0]);
        let values: Vec<f32> = (0..8).map(|i| i as f32 - 3.25).collect();
        for v in &values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let vol = decode_nifti_subset(&bytes, Content::Image).unwrap().into_image().unwrap();
        assert_eq!(vol.dims(), [2, 2, 2]);
        assert_eq!(vol.spacing_mm(), [0.5, 0.75, 3.0]);
        assert_eq!(vol.data(), &values[..]);
    }

    #[test]
    fn uint8_mask_and_int16_image() {
        let mut bytes = header(2, 8, [3, 1, 1], [1.0, 1.0, 1.0]);
        bytes.extend_from_slice(&[0, 1, 2]);
        let m = decode_nifti_subset(&bytes, Content::Mask).unwrap().into_mask().unwrap();
        assert_eq!(m.codes(), vec![0, 1, 2]);

        let mut bytes = header(4, 16, [2, 1, 1], [1.0, 1.0, 1.0]);
        bytes.extend_from_slice(&(-7i16).to_le_bytes());
        bytes.extend_from_slice(&300i16.to_le_bytes());
        let v = decode_nifti_subset(&bytes, Content::Image).unwrap().into_image().unwrap();
        assert_eq!(v.data(), &[-7.0, 300.0]);
    }

    #[test]
    fn rejects_gzip() {
        let bytes = [0x1f, 0x8b, 0x08, 0x00];
        assert!(matches!(
            decode_nifti_subset(&bytes, Content::Image),
            Err(IngestError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn rejects_complex64() {
        let mut bytes = header(32, 64, [1, 1, 1], [1.0, 1.0, 1.0]);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            decode_nifti_subset(&bytes, Content::Image),
            Err(IngestError::UnsupportedDatatype(32))
        ));
    }

    #[test]
    fn rejects_bad_magic_and_scaling() {
        let mut bytes = header(16, 32, [1, 1, 1], [1.0, 1.0, 1.0]);
        bytes.extend_from_slice(&[0u8; 4]);
        let mut wrong = bytes.clone();
        wrong[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode_nifti_subset(&wrong, Content::Image), Err(IngestError::UnsupportedFormat(_))));
        let mut scaled = bytes.clone();
        scaled[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_nifti_subset(&scaled, Content::Image), Err(IngestError::UnsupportedFormat(_))));
        let mut short = bytes;
        short.truncate(354);
        assert!(matches!(decode_nifti_subset(&short, Content::Image), Err(IngestError::SizeMismatch { .. })));
    }
}
