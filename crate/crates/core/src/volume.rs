//! Voxel grids, axial slices and segmentation labels.
//!
//! All grids store voxels x-fastest, then y, then z. Voxel `(x, y, z)` lives
//! at `x + nx * (y + ny * z)` and its center sits at continuous coordinate
//! `(x, y, z)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must all be positive, got {0:?}")]
    ZeroDimension(Vec<usize>),
    #[error("spacing must be finite and positive, got {0:?}")]
    InvalidSpacing(Vec<f64>),
    #[error("data has {len} voxels but dims imply {expected}")]
    LengthMismatch { len: usize, expected: usize },
    #[error("voxel {0} holds a non-finite value")]
    NonFinite(usize),
    #[error("slice index {z} out of range (nz = {nz})")]
    SliceOutOfRange { z: usize, nz: usize },
    #[error("invalid label code {0}; expected 0 (background), 1 (prostate) or 2 (fascia)")]
    InvalidLabel(u8),
    #[error("{0} is empty")]
    EmptyStructure(&'static str),
    #[error("slices disagree on shape or spacing")]
    InconsistentSlices,
}

/// Per-voxel segmentation code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    #[default]
    Background = 0,
    Prostate = 1,
    Fascia = 2,
}

impl Label {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Labels that name an anatomical structure.
    pub fn is_structure(self) -> bool {
        self != Label::Background
    }
}

impl TryFrom<u8> for Label {
    type Error = VolumeError;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        match code {
            0 => Ok(Label::Background),
            1 => Ok(Label::Prostate),
            2 => Ok(Label::Fascia),
            other => Err(VolumeError::InvalidLabel(other)),
        }
    }
}

/// Element type storable in a grid.
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    fn is_valid(&self) -> bool {
        true
    }
}

impl Voxel for f32 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

impl Voxel for Label {}
impl Voxel for bool {}

fn check_spacing(spacing: &[f64]) -> Result<(), VolumeError> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(VolumeError::InvalidSpacing(spacing.to_vec()))
    }
}

fn check_data<T: Voxel>(dims: &[usize], data: &[T]) -> Result<(), VolumeError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::ZeroDimension(dims.to_vec()));
    }
    let expected: usize = dims.iter().product();
    if data.len() != expected {
        return Err(VolumeError::LengthMismatch { len: data.len(), expected });
    }
    if let Some(i) = data.iter().position(|v| !v.is_valid()) {
        return Err(VolumeError::NonFinite(i));
    }
    Ok(())
}

/// A 3-D grid with physical spacing in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    data: Vec<T>,
}

/// Scalar intensity volume.
pub type Volume3D = Volume<f32>;
/// Labelled segmentation volume.
pub type MaskVolume = Volume<Label>;

impl<T: Voxel> Volume<T> {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], data: Vec<T>) -> Result<Self, VolumeError> {
        check_spacing(&spacing_mm)?;
        check_data(&dims, &data)?;
        Ok(Self { dims, spacing_mm, data })
    }

    pub fn filled(dims: [usize; 3], spacing_mm: [f64; 3], value: T) -> Result<Self, VolumeError> {
        Self::new(dims, spacing_mm, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// Copies axial plane `z`.
    pub fn extract_slice(&self, z: usize) -> Result<Slice2D<T>, VolumeError> {
        let [nx, ny, nz] = self.dims;
        if z >= nz {
            return Err(VolumeError::SliceOutOfRange { z, nz });
        }
        let plane = nx * ny;
        Ok(Slice2D {
            dims: [nx, ny],
            spacing_mm: [self.spacing_mm[0], self.spacing_mm[1]],
            data: self.data[z * plane..(z + 1) * plane].to_vec(),
            z_index: z,
        })
    }

    /// Stacks slices in order along z.
    pub fn from_slices(slices: &[Slice2D<T>], spacing_z_mm: f64) -> Result<Self, VolumeError> {
        let first = slices.first().ok_or(VolumeError::ZeroDimension(vec![0, 0, 0]))?;
        if slices
            .iter()
            .any(|s| s.dims != first.dims || s.spacing_mm != first.spacing_mm)
        {
            return Err(VolumeError::InconsistentSlices);
        }
        let data = slices.iter().flat_map(|s| s.data.iter().copied()).collect();
        Self::new(
            [first.dims[0], first.dims[1], slices.len()],
            [first.spacing_mm[0], first.spacing_mm[1], spacing_z_mm],
            data,
        )
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Quarter turn in the axial plane: voxel `(x, y)` moves to `(ny-1-y, x)`.
    ///
    /// A structure at polar angle θ (measured from +x towards +y) ends up at
    /// θ + 90°. In-plane dims and spacings are swapped.
    pub fn rotated_quarter_turn(&self) -> Self {
        let [nx, ny, nz] = self.dims;
        let mut data = vec![T::default(); self.data.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let (xr, yr) = (ny - 1 - y, x);
                    data[xr + ny * (yr + nx * z)] = self.get(x, y, z);
                }
            }
        }
        Self {
            dims: [ny, nx, nz],
            spacing_mm: [self.spacing_mm[1], self.spacing_mm[0], self.spacing_mm[2]],
            data,
        }
    }

    /// In-plane integer shift; voxels shifted in from outside take `fill`.
    pub fn shifted(&self, dx: isize, dy: isize, fill: T) -> Self {
        let [nx, ny, nz] = self.dims;
        let mut data = vec![fill; self.data.len()];
        for z in 0..nz {
            for y in 0..ny {
                let sy = y as isize - dy;
                if sy < 0 || sy >= ny as isize {
                    continue;
                }
                for x in 0..nx {
                    let sx = x as isize - dx;
                    if sx < 0 || sx >= nx as isize {
                        continue;
                    }
                    data[self.index(x, y, z)] = self.get(sx as usize, sy as usize, z);
                }
            }
        }
        Self { dims: self.dims, spacing_mm: self.spacing_mm, data }
    }
}

impl Volume<Label> {
    /// Label codes as raw bytes.
    pub fn codes(&self) -> Vec<u8> {
        self.data.iter().map(|l| l.code()).collect()
    }

    pub fn from_codes(dims: [usize; 3], spacing_mm: [f64; 3], codes: &[u8]) -> Result<Self, VolumeError> {
        let labels = codes
            .iter()
            .map(|&c| Label::try_from(c))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dims, spacing_mm, labels)
    }

    /// Boolean mask that is true exactly where the label equals `label`.
    pub fn binary_component(&self, label: Label) -> Result<Volume<bool>, VolumeError> {
        require_structure(label)?;
        Ok(self.map(|l| l == label))
    }

    pub fn count(&self, label: Label) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    /// First and last axial slice containing prostate.
    pub fn prostate_slice_range(&self) -> Result<(usize, usize), VolumeError> {
        let plane = self.dims[0] * self.dims[1];
        let mut range: Option<(usize, usize)> = None;
        for (z, chunk) in self.data.chunks(plane).enumerate() {
            if chunk.contains(&Label::Prostate) {
                range = Some(match range {
                    None => (z, z),
                    Some((lo, _)) => (lo, z),
                });
            }
        }
        range.ok_or(VolumeError::EmptyStructure("prostate"))
    }
}

fn require_structure(label: Label) -> Result<(), VolumeError> {
    if label.is_structure() {
        Ok(())
    } else {
        Err(VolumeError::InvalidLabel(label.code()))
    }
}

/// Validates a raw code for use with [`Volume::binary_component`].
pub fn structure_label(code: u8) -> Result<Label, VolumeError> {
    let label = Label::try_from(code)?;
    require_structure(label)?;
    Ok(label)
}

/// One axial plane of a volume or mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice2D<T> {
    dims: [usize; 2],
    spacing_mm: [f64; 2],
    data: Vec<T>,
    z_index: usize,
}

impl<T: Voxel> Slice2D<T> {
    pub fn new(dims: [usize; 2], spacing_mm: [f64; 2], data: Vec<T>, z_index: usize) -> Result<Self, VolumeError> {
        check_spacing(&spacing_mm)?;
        check_data(&dims, &data)?;
        Ok(Self { dims, spacing_mm, data, z_index })
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 2] {
        self.spacing_mm
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn z_index(&self) -> usize {
        self.z_index
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x + self.dims[0] * y]
    }

    /// Value at signed coordinates; `None` outside the plane.
    #[inline]
    pub fn get_checked(&self, x: i64, y: i64) -> Option<T> {
        if x < 0 || y < 0 || x >= self.dims[0] as i64 || y >= self.dims[1] as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Slice2D<U> {
        Slice2D {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            data: self.data.iter().map(|&v| f(v)).collect(),
            z_index: self.z_index,
        }
    }

    pub(crate) fn with_data(&self, dims: [usize; 2], data: Vec<T>) -> Self {
        Slice2D { dims, spacing_mm: self.spacing_mm, data, z_index: self.z_index }
    }
}

impl Slice2D<Label> {
    pub fn binary_component(&self, label: Label) -> Result<Slice2D<bool>, VolumeError> {
        require_structure(label)?;
        Ok(self.map(|l| l == label))
    }
}

/// Integer moments of a binary plane: pixel count and coordinate sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PixelMoments {
    pub count: u64,
    pub sum_x: i64,
    pub sum_y: i64,
}

pub(crate) fn pixel_moments(mask: &Slice2D<bool>) -> Option<PixelMoments> {
    let nx = mask.dims[0];
    let mut m = PixelMoments { count: 0, sum_x: 0, sum_y: 0 };
    for (i, &on) in mask.data.iter().enumerate() {
        if on {
            m.count += 1;
            m.sum_x += (i % nx) as i64;
            m.sum_y += (i / nx) as i64;
        }
    }
    (m.count > 0).then_some(m)
}

/// Mean coordinate of the true pixels, in continuous voxel units.
pub fn centroid(mask: &Slice2D<bool>) -> Result<(f64, f64), VolumeError> {
    let m = pixel_moments(mask).ok_or(VolumeError::EmptyStructure("binary slice"))?;
    Ok((m.sum_x as f64 / m.count as f64, m.sum_y as f64 / m.count as f64))
}
