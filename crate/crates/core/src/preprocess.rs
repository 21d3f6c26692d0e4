//! Image standardization (resample, percentile clip, z-score, center crop),
//! slice-selection policies and in-plane augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Label, MaskVolume, Slice2D, Volume, Volume3D, VolumeError, Voxel};

/// Resampling target used throughout the pipeline, in millimetres.
pub const TARGET_SPACING_MM: [f64; 3] = [0.273, 0.273, 2.368];
pub const CLIP_PERCENTILES: (f64, f64) = (0.5, 99.0);
pub const CROP_HW: (usize, usize) = (512, 512);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("target spacing must be finite and positive, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("percentiles must satisfy 0 <= low < high <= 100, got ({0}, {1})")]
    InvalidPercentiles(f64, f64),
    #[error("crop size must be positive and even, got {0:?}")]
    InvalidCrop((usize, usize)),
    #[error("volume has zero variance; cannot z-score")]
    ZeroVariance,
    #[error("empty input")]
    EmptyInput,
    #[error("scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("blur sigma must be non-negative, got {0}")]
    InvalidSigma(f64),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageInterp {
    #[default]
    Trilinear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskInterp {
    #[default]
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_spacing_mm: [f64; 3],
    pub clip_percentiles: (f64, f64),
    pub crop_hw: (usize, usize),
    pub image_interp: ImageInterp,
    pub mask_interp: MaskInterp,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing_mm: TARGET_SPACING_MM,
            clip_percentiles: CLIP_PERCENTILES,
            crop_hw: CROP_HW,
            image_interp: ImageInterp::Trilinear,
            mask_interp: MaskInterp::Nearest,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !self.target_spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(PreprocessError::InvalidSpacing(self.target_spacing_mm));
        }
        let (lo, hi) = self.clip_percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(PreprocessError::InvalidPercentiles(lo, hi));
        }
        let (h, w) = self.crop_hw;
        if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(PreprocessError::InvalidCrop(self.crop_hw));
        }
        Ok(())
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Voxel types that know how to be resampled: intensities interpolate
/// (trilinear / bilinear), labels take the nearest neighbour.
pub trait Resample: Voxel {
    fn sample_3d(vol: &Volume<Self>, x: f64, y: f64, z: f64) -> Self;
    /// In-plane lookup; points outside the plane read as `Self::default()`.
    fn sample_2d(slice: &Slice2D<Self>, x: f64, y: f64) -> Self;
    /// Post-warp smoothing; labels are never blurred.
    fn blur(slice: Slice2D<Self>, _sigma: f64) -> Slice2D<Self> {
        slice
    }
}

fn axis_cell(c: f64, n: usize) -> (usize, usize, f64) {
    let c = c.clamp(0.0, (n - 1) as f64);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - i0 as f64)
}

impl Resample for f32 {
    fn sample_3d(vol: &Volume<f32>, x: f64, y: f64, z: f64) -> f32 {
        let [nx, ny, nz] = vol.dims();
        let (x0, x1, fx) = axis_cell(x, nx);
        let (y0, y1, fy) = axis_cell(y, ny);
        let (z0, z1, fz) = axis_cell(z, nz);
        let v = |x, y, z| vol.get(x, y, z) as f64;
        let plane = |z| {
            let a = lerp(v(x0, y0, z), v(x1, y0, z), fx);
            let b = lerp(v(x0, y1, z), v(x1, y1, z), fx);
            lerp(a, b, fy)
        };
        lerp(plane(z0), plane(z1), fz) as f32
    }

    fn sample_2d(slice: &Slice2D<f32>, x: f64, y: f64) -> f32 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v = |dx, dy| slice.get_checked(ix + dx, iy + dy).unwrap_or(0.0) as f64;
        let a = lerp(v(0, 0), v(1, 0), fx);
        let b = lerp(v(0, 1), v(1, 1), fx);
        lerp(a, b, fy) as f32
    }

    fn blur(slice: Slice2D<f32>, sigma: f64) -> Slice2D<f32> {
        gaussian_blur(&slice, sigma)
    }
}

impl Resample for Label {
    fn sample_3d(vol: &Volume<Label>, x: f64, y: f64, z: f64) -> Label {
        let [nx, ny, nz] = vol.dims();
        let pick = |c: f64, n: usize| ((c + 0.5).floor().clamp(0.0, (n - 1) as f64)) as usize;
        vol.get(pick(x, nx), pick(y, ny), pick(z, nz))
    }

    fn sample_2d(slice: &Slice2D<Label>, x: f64, y: f64) -> Label {
        let ix = (x + 0.5).floor() as i64;
        let iy = (y + 0.5).floor() as i64;
        slice.get_checked(ix, iy).unwrap_or_default()
    }
}

/// Output dims for a spacing change: `round(n * s / t)`, at least 1.
pub fn resampled_dims(dims: [usize; 3], spacing: [f64; 3], target: [f64; 3]) -> [usize; 3] {
    let mut out = [0; 3];
    for a in 0..3 {
        out[a] = ((dims[a] as f64 * spacing[a] / target[a]).round() as usize).max(1);
    }
    out
}

/// Resamples onto `target_spacing_mm` keeping voxel-center alignment of the
/// physical extent. Images interpolate trilinearly, masks use nearest label.
pub fn resample<T: Resample>(vol: &Volume<T>, target_spacing_mm: [f64; 3]) -> Result<Volume<T>, PreprocessError> {
    if !target_spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(PreprocessError::InvalidSpacing(target_spacing_mm));
    }
    let src = vol.spacing_mm();
    if src == target_spacing_mm {
        return Ok(vol.clone());
    }
    let out_dims = resampled_dims(vol.dims(), src, target_spacing_mm);
    let ratio = [0, 1, 2].map(|a| target_spacing_mm[a] / src[a]);
    let to_src = |i: usize, a: usize| (i as f64 + 0.5) * ratio[a] - 0.5;
    let mut data = Vec::with_capacity(out_dims.iter().product());
    for z in 0..out_dims[2] {
        let sz = to_src(z, 2);
        for y in 0..out_dims[1] {
            let sy = to_src(y, 1);
            for x in 0..out_dims[0] {
                data.push(T::sample_3d(vol, to_src(x, 0), sy, sz));
            }
        }
    }
    Ok(Volume::new(out_dims, target_spacing_mm, data)?)
}

/// Percentile with linear interpolation between order statistics of `sorted`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Intensity band `[v_low, v_high]` at the given percentiles.
pub fn percentile_bounds(vol: &Volume3D, p_low: f64, p_high: f64) -> Result<(f64, f64), PreprocessError> {
    if !(0.0 <= p_low && p_low < p_high && p_high <= 100.0) {
        return Err(PreprocessError::InvalidPercentiles(p_low, p_high));
    }
    if vol.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let mut sorted: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok((percentile_sorted(&sorted, p_low), percentile_sorted(&sorted, p_high)))
}

/// Clamps into a fixed band; values inside it pass through untouched.
pub fn clip_to(vol: &Volume3D, bounds: (f64, f64)) -> Volume3D {
    let (lo, hi) = (bounds.0 as f32, bounds.1 as f32);
    vol.map(|v| v.clamp(lo, hi))
}

pub fn clip_intensities(vol: &Volume3D, p_low: f64, p_high: f64) -> Result<Volume3D, PreprocessError> {
    Ok(clip_to(vol, percentile_bounds(vol, p_low, p_high)?))
}

/// Whole-volume standardization with the population standard deviation.
pub fn zscore(vol: &Volume3D) -> Result<Volume3D, PreprocessError> {
    if vol.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let n = vol.len() as f64;
    let mean = vol.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vol.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(PreprocessError::ZeroVariance);
    }
    Ok(vol.map(|v| ((v as f64 - mean) / std) as f32))
}

/// Source offset along one axis: positive crops, negative pads.
fn crop_offset(n: usize, target: usize) -> isize {
    if n >= target {
        ((n - target) / 2) as isize
    } else {
        -(((target - n) / 2) as isize)
    }
}

fn crop_plane<T: Voxel>(src: &[T], nx: usize, ny: usize, hw: (usize, usize), out: &mut Vec<T>) {
    let (h, w) = hw;
    let ox = crop_offset(nx, w);
    let oy = crop_offset(ny, h);
    for y in 0..h {
        let sy = y as isize + oy;
        for x in 0..w {
            let sx = x as isize + ox;
            let inside = sx >= 0 && sy >= 0 && (sx as usize) < nx && (sy as usize) < ny;
            out.push(if inside { src[sx as usize + nx * sy as usize] } else { T::default() });
        }
    }
}

/// Central in-plane window of `hw = (rows, cols)`, zero/background padded
/// symmetrically when the input is smaller.
pub fn center_crop<T: Voxel>(vol: &Volume<T>, hw: (usize, usize)) -> Result<Volume<T>, PreprocessError> {
    if hw.0 == 0 || hw.1 == 0 {
        return Err(PreprocessError::InvalidCrop(hw));
    }
    let [nx, ny, nz] = vol.dims();
    let mut data = Vec::with_capacity(hw.0 * hw.1 * nz);
    for plane in vol.data().chunks(nx * ny) {
        crop_plane(plane, nx, ny, hw, &mut data);
    }
    Ok(Volume::new([hw.1, hw.0, nz], vol.spacing_mm(), data)?)
}

pub fn center_crop_slice<T: Voxel>(slice: &Slice2D<T>, hw: (usize, usize)) -> Result<Slice2D<T>, PreprocessError> {
    if hw.0 == 0 || hw.1 == 0 {
        return Err(PreprocessError::InvalidCrop(hw));
    }
    let [nx, ny] = slice.dims();
    let mut data = Vec::with_capacity(hw.0 * hw.1);
    crop_plane(slice.data(), nx, ny, hw, &mut data);
    Ok(slice.with_data([hw.1, hw.0], data))
}

/// resample → clip → z-score → crop.
pub fn preprocess_image(vol: &Volume3D, cfg: &PreprocessConfig) -> Result<Volume3D, PreprocessError> {
    cfg.validate()?;
    let v = resample(vol, cfg.target_spacing_mm)?;
    let v = clip_intensities(&v, cfg.clip_percentiles.0, cfg.clip_percentiles.1)?;
    let v = zscore(&v)?;
    center_crop(&v, cfg.crop_hw)
}

/// resample (nearest) → crop; masks are never clipped or normalized.
pub fn preprocess_mask(mask: &MaskVolume, cfg: &PreprocessConfig) -> Result<MaskVolume, PreprocessError> {
    cfg.validate()?;
    center_crop(&resample(mask, cfg.target_spacing_mm)?, cfg.crop_hw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlicePolicy {
    SingleMid,
    Mid4,
    BaseMid8,
    All12,
}

impl SlicePolicy {
    pub fn len(self) -> usize {
        match self {
            SlicePolicy::SingleMid => 1,
            SlicePolicy::Mid4 => 4,
            SlicePolicy::BaseMid8 => 8,
            SlicePolicy::All12 => 12,
        }
    }

    /// Slice indices for a prostate spanning `z0..=z1`. Out-of-span indices
    /// clamp to the nearest extreme, so short glands repeat end slices.
    pub fn indices(self, z0: usize, z1: usize) -> Vec<usize> {
        let zm = (z0 + z1) / 2;
        let window = |start: isize, len: usize| -> Vec<usize> {
            (0..len as isize)
                .map(|k| (start + k).clamp(z0 as isize, z1 as isize) as usize)
                .collect()
        };
        match self {
            SlicePolicy::SingleMid => vec![zm],
            SlicePolicy::Mid4 => window(zm as isize - 1, 4),
            SlicePolicy::BaseMid8 => window(z0 as isize, 8),
            SlicePolicy::All12 => window(zm as isize - 5, 12),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSelection {
    pub policy: SlicePolicy,
    pub indices: Vec<usize>,
}

impl SliceSelection {
    /// Indices with repeats removed, in order.
    pub fn distinct(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::with_capacity(self.indices.len());
        for &z in &self.indices {
            if !out.contains(&z) {
                out.push(z);
            }
        }
        out
    }
}

pub fn select_slices(mask: &MaskVolume, policy: SlicePolicy) -> Result<SliceSelection, PreprocessError> {
    let (z0, z1) = mask.prostate_slice_range()?;
    Ok(SliceSelection { policy, indices: policy.indices(z0, z1) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub translate_px: (f64, f64),
    pub scale: f64,
    pub gaussian_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { rotation_deg: 0.0, translate_px: (0.0, 0.0), scale: 1.0, gaussian_sigma: 0.0 }
    }
}

/// Uniform sampling ranges for [`AugmentParams`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    pub max_translate_px: f64,
    pub scale: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { max_rotation_deg: 15.0, max_translate_px: 16.0, scale: (0.9, 1.1), sigma: (0.0, 1.5) }
    }
}

impl AugmentRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let span = |rng: &mut R, (a, b): (f64, f64)| if b > a { rng.gen_range(a..=b) } else { a };
        AugmentParams {
            rotation_deg: sym(rng, self.max_rotation_deg),
            translate_px: (sym(rng, self.max_translate_px), sym(rng, self.max_translate_px)),
            scale: span(rng, self.scale),
            gaussian_sigma: span(rng, self.sigma),
        }
    }
}

/// cos/sin with exact values at multiples of 90°.
fn exact_cos_sin(deg: f64) -> (f64, f64) {
    let turns = (deg / 90.0).floor();
    let rest = (deg - 90.0 * turns).to_radians();
    let (c, s) = if rest == 0.0 { (1.0, 0.0) } else { (rest.cos(), rest.sin()) };
    match (turns as i64).rem_euclid(4) {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

/// In-plane similarity transform about the slice center, then optional blur.
///
/// Output pixel `p` reads source `c + R(-θ)(p - c - t) / scale`; images are
/// sampled bilinearly, masks by nearest label, and both keep their dims.
pub fn augment_slice<T: Resample>(slice: &Slice2D<T>, params: &AugmentParams) -> Result<Slice2D<T>, PreprocessError> {
    if !(params.scale > 0.0 && params.scale.is_finite()) {
        return Err(PreprocessError::InvalidScale(params.scale));
    }
    if !(params.gaussian_sigma >= 0.0) {
        return Err(PreprocessError::InvalidSigma(params.gaussian_sigma));
    }
    let [nx, ny] = slice.dims();
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
    let (cos, sin) = exact_cos_sin(params.rotation_deg);
    let (tx, ty) = params.translate_px;
    let mut data = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            let (dx, dy) = (x as f64 - cx - tx, y as f64 - cy - ty);
            let sx = cx + (cos * dx + sin * dy) / params.scale;
            let sy = cy + (-sin * dx + cos * dy) / params.scale;
            data.push(T::sample_2d(slice, sx, sy));
        }
    }
    let warped = slice.with_data([nx, ny], data);
    Ok(if params.gaussian_sigma > 0.0 { T::blur(warped, params.gaussian_sigma) } else { warped })
}

/// Separable Gaussian with edge replication; radius `ceil(3σ)`.
pub fn gaussian_blur(slice: &Slice2D<f32>, sigma: f64) -> Slice2D<f32> {
    if sigma <= 0.0 {
        return slice.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let [nx, ny] = slice.dims();
    let src: Vec<f64> = slice.data().iter().map(|&v| v as f64).collect();
    let pass = |input: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    let off = j as isize - radius;
                    let (sx, sy) = if along_x {
                        ((x as isize + off).clamp(0, nx as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + off).clamp(0, ny as isize - 1) as usize)
                    };
                    acc += w * input[sx + nx * sy];
                }
                out[x + nx * y] = acc;
            }
        }
        out
    };
    let blurred = pass(&pass(&src, true), false);
    slice.with_data([nx, ny], blurred.into_iter().map(|v| v as f32).collect())
}

/// Same random transform applied to an image slice and its mask.
pub fn augment_pair<R: Rng + ?Sized>(
    image: &Slice2D<f32>,
    mask: &Slice2D<Label>,
    ranges: &AugmentRanges,
    rng: &mut R,
) -> Result<(Slice2D<f32>, Slice2D<Label>, AugmentParams), PreprocessError> {
    let params = ranges.sample(rng);
    Ok((augment_slice(image, &params)?, augment_slice(mask, &params)?, params))
}
