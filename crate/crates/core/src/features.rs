//! Radial fascia thickness and prostate/fascia volume features.
//!
//! Rays are cast from the prostate centroid of each axial slice at 1°
//! increments; angle 0 points along +x and angles grow towards +y. Ray
//! positions use 20-bit fixed-point coordinates so that quarter-turn
//! rotations and integer translations of a mask reproduce every sample
//! point exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{PreprocessError, SlicePolicy, SliceSelection};
use crate::volume::{pixel_moments, Label, MaskVolume, Slice2D, VolumeError};

pub const N_RAYS: usize = 360;
pub const N_SECTORS: usize = 12;
pub const RAYS_PER_SECTOR: usize = N_RAYS / N_SECTORS;
pub const N_MULTI_SLICES: usize = 12;
/// Default march step as a fraction of the finer in-plane spacing.
pub const STEP_FRACTION: f64 = 0.05;

const FRAC_BITS: u32 = 20;
const ONE: i64 = 1 << FRAC_BITS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("ray origin ({0:.3}, {1:.3}) lies outside the prostate")]
    OriginOutsideProstate(f64, f64),
    #[error("angle {0} is outside [0, 360)")]
    InvalidAngle(f64),
    #[error("step {0} mm is too small or not positive")]
    InvalidStep(f64),
    #[error("prostate and fascia slices differ in shape or spacing")]
    ShapeMismatch,
    #[error("slice {0} contains no prostate")]
    EmptySlice(usize),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl From<PreprocessError> for FeatureError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Volume(v) => FeatureError::Volume(v),
            _ => FeatureError::Volume(VolumeError::EmptyStructure("prostate")),
        }
    }
}

/// Symmetric rounding division (half away from zero), so that
/// `round_div(-a, b) == -round_div(a, b)`.
fn round_div(num: i128, den: i128) -> i64 {
    let q = (num.abs() + den / 2) / den;
    (if num < 0 { -q } else { q }) as i64
}

fn to_fixed(v: f64) -> i64 {
    (v * ONE as f64).round() as i64
}

fn from_fixed(v: i64) -> f64 {
    v as f64 / ONE as f64
}

/// Centroid of a binary slice in fixed point, computed from integer moments.
fn fixed_centroid(mask: &Slice2D<bool>) -> Option<(i64, i64)> {
    let m = pixel_moments(mask)?;
    let c = m.count as i128;
    Some((
        round_div(m.sum_x as i128 * ONE as i128, c),
        round_div(m.sum_y as i128 * ONE as i128, c),
    ))
}

/// Bilinear lookup of a binary plane at a fixed-point position, thresholded
/// at one half. Pixels outside the plane read as false.
fn inside(mask: &Slice2D<bool>, px: i64, py: i64) -> bool {
    let (ix, iy) = (px >> FRAC_BITS, py >> FRAC_BITS);
    let (fx, fy) = (px & (ONE - 1), py & (ONE - 1));
    let on = |x: i64, y: i64| mask.get_checked(x, y).unwrap_or(false) as i64;
    let value = on(ix, iy) * (ONE - fx) * (ONE - fy)
        + on(ix + 1, iy) * fx * (ONE - fy)
        + on(ix, iy + 1) * (ONE - fx) * fy
        + on(ix + 1, iy + 1) * fx * fy;
    2 * value >= ONE * ONE
}

/// Unit direction for `angle_deg`, exact at multiples of 90°: the angle is
/// split into whole quarter turns and a remainder, and the remainder's
/// direction is rotated by the quarter turns without rounding.
fn direction(angle_deg: f64) -> (f64, f64) {
    let q = (angle_deg / 90.0).floor();
    let r = angle_deg - 90.0 * q;
    let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (r.to_radians().cos(), r.to_radians().sin()) };
    match (q as i64).rem_euclid(4) {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

fn check_pair(prostate: &Slice2D<bool>, fascia: &Slice2D<bool>) -> Result<(), FeatureError> {
    if prostate.dims() != fascia.dims() || prostate.spacing_mm() != fascia.spacing_mm() {
        return Err(FeatureError::ShapeMismatch);
    }
    Ok(())
}

pub fn default_step_mm(spacing_mm: [f64; 2]) -> f64 {
    STEP_FRACTION * spacing_mm[0].min(spacing_mm[1])
}

fn march(
    prostate: &Slice2D<bool>,
    fascia: &Slice2D<bool>,
    origin: (i64, i64),
    angle_deg: f64,
    step_mm: f64,
) -> Result<f64, FeatureError> {
    if !(0.0..360.0).contains(&angle_deg) {
        return Err(FeatureError::InvalidAngle(angle_deg));
    }
    if !(step_mm > 0.0 && step_mm.is_finite()) {
        return Err(FeatureError::InvalidStep(step_mm));
    }
    if !inside(prostate, origin.0, origin.1) {
        return Err(FeatureError::OriginOutsideProstate(from_fixed(origin.0), from_fixed(origin.1)));
    }
    let [sx, sy] = fascia.spacing_mm();
    let (dx, dy) = direction(angle_deg);
    let inc = (to_fixed(dx * step_mm / sx), to_fixed(dy * step_mm / sy));
    if inc == (0, 0) {
        return Err(FeatureError::InvalidStep(step_mm));
    }
    let [nx, ny] = fascia.dims();
    let (max_x, max_y) = (nx as i64 * ONE, ny as i64 * ONE);

    let mut run_start: Option<i64> = None;
    let mut k = 0i64;
    loop {
        let (px, py) = (origin.0 + k * inc.0, origin.1 + k * inc.1);
        if px < -ONE || py < -ONE || px > max_x || py > max_y {
            break;
        }
        let hit = inside(fascia, px, py);
        match run_start {
            None if hit => run_start = Some(k),
            Some(start) if !hit => return Ok((k - start) as f64 * step_mm),
            _ => {}
        }
        k += 1;
    }
    Ok(run_start.map_or(0.0, |start| (k - start) as f64 * step_mm))
}

/// Length in mm of the first contiguous fascia run met when marching from
/// `origin` (voxel coordinates) along `angle_deg`; 0 when the ray leaves the
/// slice without touching fascia.
pub fn ray_thickness(
    prostate: &Slice2D<bool>,
    fascia: &Slice2D<bool>,
    origin: (f64, f64),
    angle_deg: f64,
    step_mm: f64,
) -> Result<f64, FeatureError> {
    check_pair(prostate, fascia)?;
    march(prostate, fascia, (to_fixed(origin.0), to_fixed(origin.1)), angle_deg, step_mm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub z_index: usize,
    pub origin: (f64, f64),
    pub thickness_mm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorFeatures {
    pub z_index: usize,
    pub medians_mm: [f64; N_SECTORS],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeFeatures {
    pub prostate_ml: f64,
    pub fascia_ml: f64,
    pub n_slices_used: usize,
}

/// Rays at 0°, 1°, …, 359° with the default step.
pub fn radial_profile(
    prostate: &Slice2D<bool>,
    fascia: &Slice2D<bool>,
    origin: (f64, f64),
) -> Result<RadialProfile, FeatureError> {
    radial_profile_with_step(prostate, fascia, origin, default_step_mm(fascia.spacing_mm()))
}

pub fn radial_profile_with_step(
    prostate: &Slice2D<bool>,
    fascia: &Slice2D<bool>,
    origin: (f64, f64),
    step_mm: f64,
) -> Result<RadialProfile, FeatureError> {
    check_pair(prostate, fascia)?;
    let fixed = (to_fixed(origin.0), to_fixed(origin.1));
    let thickness_mm = (0..N_RAYS)
        .map(|a| march(prostate, fascia, fixed, a as f64, step_mm))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RadialProfile { z_index: fascia.z_index(), origin, thickness_mm })
}

/// Median with the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn sector_medians(profile: &RadialProfile) -> SectorFeatures {
    let mut medians_mm = [0.0; N_SECTORS];
    for (k, chunk) in profile.thickness_mm.chunks(RAYS_PER_SECTOR).take(N_SECTORS).enumerate() {
        medians_mm[k] = median(chunk);
    }
    SectorFeatures { z_index: profile.z_index, medians_mm }
}

/// Sector medians of one axial slice, or `None` when it has no prostate.
pub fn slice_sector_features(mask: &MaskVolume, z: usize) -> Result<Option<SectorFeatures>, FeatureError> {
    let labels = mask.extract_slice(z)?;
    let prostate = labels.binary_component(Label::Prostate)?;
    let Some(origin) = fixed_centroid(&prostate) else {
        return Ok(None);
    };
    let fascia = labels.binary_component(Label::Fascia)?;
    let origin_mm = (from_fixed(origin.0), from_fixed(origin.1));
    let profile = radial_profile(&prostate, &fascia, origin_mm)?;
    Ok(Some(sector_medians(&profile)))
}

pub fn slice_profile(mask: &MaskVolume, z: usize) -> Result<RadialProfile, FeatureError> {
    let labels = mask.extract_slice(z)?;
    let prostate = labels.binary_component(Label::Prostate)?;
    let origin = fixed_centroid(&prostate).ok_or(FeatureError::EmptySlice(z))?;
    let fascia = labels.binary_component(Label::Fascia)?;
    radial_profile(&prostate, &fascia, (from_fixed(origin.0), from_fixed(origin.1)))
}

fn selection(mask: &MaskVolume, policy: SlicePolicy) -> Result<SliceSelection, FeatureError> {
    Ok(crate::preprocess::select_slices(mask, policy)?)
}

/// Twelve sector medians on the mid-prostate slice.
pub fn single_slice_features(mask: &MaskVolume) -> Result<SectorFeatures, FeatureError> {
    let z = selection(mask, SlicePolicy::SingleMid)?.indices[0];
    slice_sector_features(mask, z)?.ok_or(FeatureError::EmptySlice(z))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSliceFeatures {
    /// Per-slice medians ordered base (lowest z) to apex.
    pub slices: Vec<SectorFeatures>,
    /// Slices that held no prostate and were filled with zeros.
    pub empty_slices: Vec<usize>,
}

impl MultiSliceFeatures {
    pub fn values(&self) -> Vec<f64> {
        self.slices.iter().flat_map(|s| s.medians_mm).collect()
    }
}

/// Sector medians on the twelve `all12` slices.
pub fn multi_slice_features(mask: &MaskVolume) -> Result<MultiSliceFeatures, FeatureError> {
    let sel = selection(mask, SlicePolicy::All12)?;
    let per_slice = sel
        .indices
        .par_iter()
        .map(|&z| slice_sector_features(mask, z).map(|f| (z, f)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = MultiSliceFeatures { slices: Vec::with_capacity(per_slice.len()), empty_slices: Vec::new() };
    for (z, f) in per_slice {
        match f {
            Some(f) => out.slices.push(f),
            None => {
                log::warn!("slice {z} has no prostate; its sector medians are set to zero");
                out.empty_slices.push(z);
                out.slices.push(SectorFeatures { z_index: z, medians_mm: [0.0; N_SECTORS] });
            }
        }
    }
    Ok(out)
}

/// Prostate and fascia volume over the distinct `all12` slices.
pub fn volume_features(mask: &MaskVolume) -> Result<VolumeFeatures, FeatureError> {
    let distinct = selection(mask, SlicePolicy::All12)?.distinct();
    let [nx, ny, _] = mask.dims();
    let plane = nx * ny;
    let (mut prostate, mut fascia) = (0usize, 0usize);
    for &z in &distinct {
        for &l in &mask.data()[z * plane..(z + 1) * plane] {
            match l {
                Label::Prostate => prostate += 1,
                Label::Fascia => fascia += 1,
                Label::Background => {}
            }
        }
    }
    let [sx, sy, sz] = mask.spacing_mm();
    let voxel_ml = sx * sy * sz / 1000.0;
    Ok(VolumeFeatures {
        prostate_ml: prostate as f64 * voxel_ml,
        fascia_ml: fascia as f64 * voxel_ml,
        n_slices_used: distinct.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Mid,
    Multi,
    Volume,
    All,
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mid" => Ok(FeatureMode::Mid),
            "multi" => Ok(FeatureMode::Multi),
            "volume" => Ok(FeatureMode::Volume),
            "all" => Ok(FeatureMode::All),
            other => Err(format!("unknown feature mode {other:?} (expected mid, multi, volume or all)")),
        }
    }
}

pub fn mid_feature_names() -> Vec<String> {
    (0..N_SECTORS).map(|k| format!("thick_mid_r{k}")).collect()
}

pub fn multi_feature_names() -> Vec<String> {
    (0..N_MULTI_SLICES)
        .flat_map(|s| (0..N_SECTORS).map(move |k| format!("thick_s{s}_r{k}")))
        .collect()
}

pub fn volume_feature_names() -> Vec<String> {
    vec!["vol_prostate_ml".into(), "vol_fascia_ml".into()]
}

pub fn feature_names(mode: FeatureMode) -> Vec<String> {
    match mode {
        FeatureMode::Mid => mid_feature_names(),
        FeatureMode::Multi => multi_feature_names(),
        FeatureMode::Volume => volume_feature_names(),
        FeatureMode::All => {
            let mut v = mid_feature_names();
            v.extend(multi_feature_names());
            v.extend(volume_feature_names());
            v
        }
    }
}

/// Feature row in [`feature_names`] order.
pub fn extract_features(mask: &MaskVolume, mode: FeatureMode) -> Result<Vec<f64>, FeatureError> {
    let mid = || single_slice_features(mask).map(|f| f.medians_mm.to_vec());
    let multi = || multi_slice_features(mask).map(|f| f.values());
    let vol = || volume_features(mask).map(|v| vec![v.prostate_ml, v.fascia_ml]);
    match mode {
        FeatureMode::Mid => mid(),
        FeatureMode::Multi => multi(),
        FeatureMode::Volume => vol(),
        FeatureMode::All => {
            let mut v = mid()?;
            v.extend(multi()?);
            v.extend(vol()?);
            Ok(v)
        }
    }
}
