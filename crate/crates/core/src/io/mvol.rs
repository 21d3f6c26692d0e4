//! `.mvol` container: one JSON header line, then a raw little-endian payload.
//!
//! ```text
//! {"dims":[nx,ny,nz],"spacing_mm":[sx,sy,sz],"dtype":"f32","content":"image"}\n
//! <nx*ny*nz little-endian elements, x-fastest>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::volume::{MaskVolume, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Content {
    Image,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    pub content: Content,
}

/// Either kind of grid a volume file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyVolume {
    Image(Volume3D),
    Mask(MaskVolume),
}

impl AnyVolume {
    pub fn header(&self) -> VolumeHeader {
        VolumeRef::from(self).header()
    }

    pub fn into_image(self) -> Result<Volume3D, IngestError> {
        match self {
            AnyVolume::Image(v) => Ok(v),
            AnyVolume::Mask(_) => Err(IngestError::WrongContent { expected: "image" }),
        }
    }

    pub fn into_mask(self) -> Result<MaskVolume, IngestError> {
        match self {
            AnyVolume::Mask(m) => Ok(m),
            AnyVolume::Image(_) => Err(IngestError::WrongContent { expected: "mask" }),
        }
    }
}

impl From<Volume3D> for AnyVolume {
    fn from(v: Volume3D) -> Self {
        AnyVolume::Image(v)
    }
}

impl From<MaskVolume> for AnyVolume {
    fn from(m: MaskVolume) -> Self {
        AnyVolume::Mask(m)
    }
}

/// Borrowed view of either grid kind, for writing without a copy.
#[derive(Clone, Copy, Debug)]
pub enum VolumeRef<'a> {
    Image(&'a Volume3D),
    Mask(&'a MaskVolume),
}

impl VolumeRef<'_> {
    pub fn header(&self) -> VolumeHeader {
        match self {
            VolumeRef::Image(v) => VolumeHeader {
                dims: v.dims(),
                spacing_mm: v.spacing_mm(),
                dtype: Dtype::F32,
                content: Content::Image,
            },
            VolumeRef::Mask(m) => VolumeHeader {
                dims: m.dims(),
                spacing_mm: m.spacing_mm(),
                dtype: Dtype::U8,
                content: Content::Mask,
            },
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            VolumeRef::Image(v) => v.len() * 4,
            VolumeRef::Mask(m) => m.len(),
        }
    }
}

impl<'a> From<&'a Volume3D> for VolumeRef<'a> {
    fn from(v: &'a Volume3D) -> Self {
        VolumeRef::Image(v)
    }
}

impl<'a> From<&'a MaskVolume> for VolumeRef<'a> {
    fn from(m: &'a MaskVolume) -> Self {
        VolumeRef::Mask(m)
    }
}

impl<'a> From<&'a AnyVolume> for VolumeRef<'a> {
    fn from(v: &'a AnyVolume) -> Self {
        match v {
            AnyVolume::Image(v) => VolumeRef::Image(v),
            AnyVolume::Mask(m) => VolumeRef::Mask(m),
        }
    }
}

pub fn encode_mvol<'a>(volume: impl Into<VolumeRef<'a>>) -> Vec<u8> {
    let volume = volume.into();
    let header = serde_json::to_string(&volume.header()).expect("header serializes");
    let mut out = Vec::with_capacity(header.len() + 1 + volume.payload_len());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    match volume {
        VolumeRef::Image(v) => {
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        VolumeRef::Mask(m) => out.extend(m.data().iter().map(|l| l.code())),
    }
    out
}

pub fn decode_mvol(bytes: &[u8]) -> Result<AnyVolume, IngestError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| IngestError::MalformedHeader("missing header terminator".into()))?;
    let header_text = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| IngestError::MalformedHeader("header is not UTF-8".into()))?;
    let raw: serde_json::Value =
        serde_json::from_str(header_text).map_err(|e| IngestError::MalformedHeader(e.to_string()))?;
    // dtype is checked before the typed parse so an unknown tag gets its own error
    match raw.get("dtype").and_then(|d| d.as_str()) {
        Some("f32") | Some("u8") => {}
        Some(other) => return Err(IngestError::UnknownDtype(other.to_string())),
        None => return Err(IngestError::MalformedHeader("missing dtype".into())),
    }
    let header: VolumeHeader =
        serde_json::from_value(raw).map_err(|e| IngestError::MalformedHeader(e.to_string()))?;
    let payload = &bytes[newline + 1..];
    let n: usize = header.dims.iter().product();
    match (header.dtype, header.content) {
        (Dtype::F32, Content::Image) => {
            if payload.len() != n * 4 {
                return Err(IngestError::SizeMismatch { expected: n * 4, actual: payload.len() });
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(AnyVolume::Image(Volume3D::new(header.dims, header.spacing_mm, data)?))
        }
        (Dtype::U8, Content::Mask) => {
            if payload.len() != n {
                return Err(IngestError::SizeMismatch { expected: n, actual: payload.len() });
            }
            Ok(AnyVolume::Mask(MaskVolume::from_codes(header.dims, header.spacing_mm, payload)?))
        }
        _ => Err(IngestError::MalformedHeader(
            "dtype f32 must pair with content image and u8 with mask".into(),
        )),
    }
}

pub fn read_mvol(path: impl AsRef<Path>) -> Result<AnyVolume, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    decode_mvol(&bytes)
}

pub fn write_mvol<'a>(volume: impl Into<VolumeRef<'a>>, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    fs::write(path, encode_mvol(volume)).map_err(|e| IngestError::io(path, e))
}
