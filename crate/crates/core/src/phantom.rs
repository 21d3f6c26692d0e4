//! Synthetic cohorts with analytic anatomy and a planted outcome model.
//!
//! Each patient has a cylindrical prostate of radius `R(z)` wrapped in a
//! fascia ring of radial width `w(z, θ)` around an analytic center. Labels are
//! rasterized at voxel centers: prostate where `r <= R`, fascia where
//! `R < r <= R + w(θ)`. The outcome probability is a logistic function of
//! the mid-slice mean fascia width and age.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{median, N_RAYS, N_SECTORS, RAYS_PER_SECTOR};
use crate::io::{
    write_clinical_csv, write_labels_csv, write_mvol, ClinicalRecord, IngestError, OutcomeLabel, SmokingStatus, YesNo,
};
use crate::preprocess::{SlicePolicy, TARGET_SPACING_MM};
use crate::volume::{Label, MaskVolume, Volume3D, VolumeError};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("anatomy does not fit the volume: {0}")]
    OutOfBounds(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("truth serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Angular profile of the fascia width around the prostate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WidthShape {
    Constant,
    /// Outer boundary is an ellipse with semi-axes `R + w(1+e)` along x and
    /// `R + w(1-e)` along y.
    Elliptic { elongation: f64 },
    /// Fascia only for θ in [0°, 180°).
    HalfRing,
    /// `w(θ) = w·(1 + a·sin θ)`: thickest at 90° (+y, posterior).
    Asymmetric { amplitude: f64 },
}

impl WidthShape {
    /// Width in mm at polar angle `theta_deg` for nominal width `w` and
    /// prostate radius `r`.
    pub fn width(&self, theta_deg: f64, w: f64, r: f64) -> f64 {
        let t = theta_deg.to_radians();
        match *self {
            WidthShape::Constant => w,
            WidthShape::Elliptic { elongation } => {
                let a = r + w * (1.0 + elongation);
                let b = r + w * (1.0 - elongation);
                a * b / ((b * t.cos()).powi(2) + (a * t.sin()).powi(2)).sqrt() - r
            }
            WidthShape::HalfRing => {
                if theta_deg.rem_euclid(360.0) < 180.0 {
                    w
                } else {
                    0.0
                }
            }
            WidthShape::Asymmetric { amplitude } => w * (1.0 + amplitude * t.sin()),
        }
    }

    fn max_width(&self, w: f64) -> f64 {
        match *self {
            WidthShape::Constant | WidthShape::HalfRing => w,
            WidthShape::Elliptic { elongation } => w * (1.0 + elongation.abs()),
            WidthShape::Asymmetric { amplitude } => w * (1.0 + amplitude.abs()),
        }
    }

    fn validate(&self) -> Result<(), PhantomError> {
        match *self {
            WidthShape::Elliptic { elongation } if !(0.0..1.0).contains(&elongation.abs()) => {
                Err(PhantomError::InvalidSpec("elliptic elongation must lie in (-1, 1)".into()))
            }
            WidthShape::Asymmetric { amplitude } if !(0.0..=1.0).contains(&amplitude.abs()) => {
                Err(PhantomError::InvalidSpec("asymmetry amplitude must lie in [-1, 1]".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Which inputs carry the planted outcome signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Fascia width and age.
    Strong,
    /// p = 0.5 for everyone.
    None,
    /// Fascia width only.
    ImagingOnly,
    /// Age only.
    ClinicalOnly,
}

impl std::str::FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strong" => Ok(Signal::Strong),
            "none" => Ok(Signal::None),
            "imaging" | "imaging_only" => Ok(Signal::ImagingOnly),
            "clinical" | "clinical_only" => Ok(Signal::ClinicalOnly),
            other => Err(format!("unknown signal {other:?} (expected strong, none, imaging or clinical)")),
        }
    }
}

pub const WIDTH_CENTER_MM: f64 = 4.0;
pub const AGE_MEAN: f64 = 63.0;
pub const AGE_SD: f64 = 7.0;
pub const AGE_RANGE: (f64, f64) = (45.0, 80.0);

/// `logit p = a0 + a1·(w̄ − 4) − a2·(age − 63)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Signal {
    /// Logistic coefficients; `None` means a constant probability of 0.5.
    ///
    /// With width ~ U(2, 6) mm and age ~ N(63, 7) the Bayes AUC is about 0.89
    /// (strong), 0.91 (imaging only) and 0.89 (clinical only).
    pub fn outcome_model(self) -> Option<OutcomeModel> {
        match self {
            Signal::Strong => Some(OutcomeModel { a0: 0.4, a1: 1.8, a2: 0.10 }),
            Signal::ImagingOnly => Some(OutcomeModel { a0: 0.4, a1: 2.0, a2: 0.0 }),
            Signal::ClinicalOnly => Some(OutcomeModel { a0: 0.4, a1: 0.0, a2: 0.35 }),
            Signal::None => None,
        }
    }

    pub fn probability(self, mean_width_mm: f64, age: f64) -> f64 {
        match self.outcome_model() {
            None => 0.5,
            Some(m) => {
                let z = m.a0 + m.a1 * (mean_width_mm - WIDTH_CENTER_MM) - m.a2 * (age - AGE_MEAN);
                1.0 / (1.0 + (-z).exp())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_patients: usize,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// First and last slice holding prostate (base, apex).
    pub prostate_z: (usize, usize),
    /// Base radius drawn uniformly from this range.
    pub radius_mm: (f64, f64),
    /// Fraction of the base radius lost by the apex slice.
    pub radius_taper: f64,
    pub width_shape: WidthShape,
    /// Nominal base fascia width drawn uniformly from this range.
    pub width_mm: (f64, f64),
    /// Fraction of the base width lost by the apex slice.
    pub width_taper: f64,
    /// Center offset drawn uniformly from ±this value per in-plane axis.
    pub center_jitter_mm: f64,
    pub noise_sigma: f64,
    pub signal: Signal,
    /// Per-field probability that a clinical value is blanked.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_patients: 100,
            dims: [256, 256, 24],
            spacing_mm: TARGET_SPACING_MM,
            prostate_z: (6, 17),
            radius_mm: (12.0, 20.0),
            radius_taper: 0.0,
            width_shape: WidthShape::Constant,
            width_mm: (2.0, 6.0),
            width_taper: 0.0,
            center_jitter_mm: 2.0,
            noise_sigma: 20.0,
            signal: Signal::Strong,
            missing_rate: 0.05,
            seed: 0,
        }
    }
}

fn ordered(range: (f64, f64)) -> bool {
    range.0.is_finite() && range.1.is_finite() && range.0 <= range.1
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: &str| Err(PhantomError::InvalidSpec(m.into()));
        if self.dims.iter().any(|&d| d == 0) {
            return bad("dims must be positive");
        }
        if !self.spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad("spacing must be positive");
        }
        if !ordered(self.radius_mm) || self.radius_mm.0 <= 0.0 {
            return bad("radius range must be positive and ordered");
        }
        if !ordered(self.width_mm) || self.width_mm.0 < 0.0 {
            return bad("width range must be non-negative and ordered");
        }
        if !(0.0..1.0).contains(&self.radius_taper) || !(0.0..=1.0).contains(&self.width_taper) {
            return bad("tapers must lie in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) || !(self.center_jitter_mm >= 0.0) {
            return bad("noise and jitter must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return bad("missing rate must lie in [0, 1]");
        }
        self.width_shape.validate()?;
        let (z0, z1) = self.prostate_z;
        if z0 > z1 || z1 >= self.dims[2] {
            return Err(PhantomError::OutOfBounds(format!(
                "prostate slices {z0}..={z1} with {} slices",
                self.dims[2]
            )));
        }
        let outer = self.radius_mm.1 + self.width_shape.max_width(self.width_mm.1) + self.center_jitter_mm;
        for axis in 0..2 {
            let half = (self.dims[axis] as f64 - 1.0) / 2.0 * self.spacing_mm[axis];
            // keep one voxel of background all round
            if outer > half - self.spacing_mm[axis] {
                return Err(PhantomError::OutOfBounds(format!(
                    "outer radius {outer:.2} mm exceeds half-extent {half:.2} mm on axis {axis}"
                )));
            }
        }
        Ok(())
    }

    /// Fractional position of slice `z` between base (0) and apex (1).
    fn taper_t(&self, z: usize) -> f64 {
        let (z0, z1) = self.prostate_z;
        if z1 == z0 {
            0.0
        } else {
            (z as f64 - z0 as f64) / (z1 - z0) as f64
        }
    }

    pub fn patient_id(index: usize) -> String {
        format!("P{index:04}")
    }
}

/// Voxel counts per label over the whole volume.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub background: usize,
    pub prostate: usize,
    pub fascia: usize,
}

/// Ground truth for one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub patient_id: String,
    /// Analytic center in voxel coordinates.
    pub center_vox: (f64, f64),
    pub base_radius_mm: f64,
    pub base_width_mm: f64,
    pub prostate_z: (usize, usize),
    pub mid_z: usize,
    /// Mean analytic width over 360 integer-degree rays on the mid slice.
    pub mean_width_mm: f64,
    /// Median analytic width per 30° sector on the mid slice.
    pub sector_widths_mm: [f64; N_SECTORS],
    /// Slices of the `all12` policy (base to apex) and their sector widths.
    pub multi_slices: Vec<usize>,
    pub multi_sector_widths_mm: Vec<[f64; N_SECTORS]>,
    pub voxel_counts: LabelCounts,
    /// Analytic volumes over the distinct `all12` slices.
    pub prostate_ml: f64,
    pub fascia_ml: f64,
    pub age: f64,
    pub probability: f64,
    pub label: u8,
    pub iief_q1_12mo: u8,
}

/// Cohort-level truth file (`truth.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortTruth {
    pub spec: PhantomSpec,
    pub outcome_model: Option<OutcomeModel>,
    pub patients: Vec<PhantomTruth>,
}

pub struct PhantomMask {
    pub mask: MaskVolume,
    pub clinical: ClinicalRecord,
    pub label: OutcomeLabel,
    pub truth: PhantomTruth,
}

pub struct PhantomPatient {
    pub image: Volume3D,
    pub mask: MaskVolume,
    pub clinical: ClinicalRecord,
    pub label: OutcomeLabel,
    pub truth: PhantomTruth,
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Ring area `∫ ½((R + w(θ))² − R²) dθ` by the midpoint rule.
fn ring_area_mm2(shape: &WidthShape, w: f64, r: f64) -> f64 {
    const N: usize = 7200;
    let h = 360.0 / N as f64;
    let sum: f64 = (0..N)
        .map(|i| {
            let o = r + shape.width((i as f64 + 0.5) * h, w, r);
            0.5 * (o * o - r * r)
        })
        .sum();
    sum * h.to_radians()
}

struct Anatomy {
    center: (f64, f64),
    radius: f64,
    width: f64,
}

impl Anatomy {
    fn at(&self, spec: &PhantomSpec, z: usize) -> (f64, f64) {
        let t = spec.taper_t(z);
        (self.radius * (1.0 - spec.radius_taper * t), self.width * (1.0 - spec.width_taper * t))
    }

    fn ray_widths(&self, spec: &PhantomSpec, z: usize) -> Vec<f64> {
        let (r, w) = self.at(spec, z);
        (0..N_RAYS).map(|d| spec.width_shape.width(d as f64, w, r)).collect()
    }

    fn sector_widths(&self, spec: &PhantomSpec, z: usize) -> [f64; N_SECTORS] {
        let rays = self.ray_widths(spec, z);
        let mut out = [0.0; N_SECTORS];
        for (k, chunk) in rays.chunks(RAYS_PER_SECTOR).enumerate() {
            out[k] = median(chunk);
        }
        out
    }
}

fn rasterize(spec: &PhantomSpec, anatomy: &Anatomy) -> Result<MaskVolume, PhantomError> {
    let [nx, ny, nz] = spec.dims;
    let [sx, sy, _] = spec.spacing_mm;
    let mut labels = vec![Label::Background; nx * ny * nz];
    let (cx, cy) = anatomy.center;
    let (z0, z1) = spec.prostate_z;
    for z in z0..=z1 {
        let (r, w) = anatomy.at(spec, z);
        let outer = r + spec.width_shape.max_width(w);
        let x_lo = ((cx - outer / sx).floor().max(0.0)) as usize;
        let x_hi = ((cx + outer / sx).ceil() as usize).min(nx - 1);
        let y_lo = ((cy - outer / sy).floor().max(0.0)) as usize;
        let y_hi = ((cy + outer / sy).ceil() as usize).min(ny - 1);
        for y in y_lo..=y_hi {
            let dy = (y as f64 - cy) * sy;
            for x in x_lo..=x_hi {
                let dx = (x as f64 - cx) * sx;
                let rho = dx.hypot(dy);
                let label = if rho <= r {
                    Label::Prostate
                } else if rho <= outer {
                    let theta = dy.atan2(dx).to_degrees().rem_euclid(360.0);
                    if rho <= r + spec.width_shape.width(theta, w, r) {
                        Label::Fascia
                    } else {
                        Label::Background
                    }
                } else {
                    Label::Background
                };
                labels[x + nx * (y + ny * z)] = label;
            }
        }
    }
    Ok(MaskVolume::new(spec.dims, spec.spacing_mm, labels)?)
}

fn render_image<R: Rng>(spec: &PhantomSpec, mask: &MaskVolume, rng: &mut R) -> Result<Volume3D, PhantomError> {
    let [nx, ny, _] = spec.dims;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
    // slow multiplicative shading across the field of view
    let pi = std::f64::consts::PI;
    let shade: Vec<f64> = (0..nx * ny)
        .map(|i| 1.0 + 0.1 * (pi * (i % nx) as f64 / nx as f64).sin() * (pi * (i / nx) as f64 / ny as f64).sin())
        .collect();
    let data = mask
        .data()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let base = match l {
                Label::Background => 120.0,
                Label::Prostate => 320.0,
                Label::Fascia => 200.0,
            };
            let n = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            (base * shade[i % (nx * ny)] + n) as f32
        })
        .collect();
    Ok(Volume3D::new(spec.dims, spec.spacing_mm, data)?)
}

fn sample_clinical<R: Rng>(rng: &mut R, id: &str, age: f64) -> ClinicalRecord {
    let normal = |rng: &mut R, m: f64, s: f64| m + s * rng.sample::<f64, _>(rand_distr::StandardNormal);
    let height = round1(normal(rng, 178.0, 7.0).clamp(150.0, 205.0));
    let weight = round1(normal(rng, 84.0, 11.0).clamp(50.0, 140.0));
    let u: f64 = rng.gen();
    let smoking = if u < 0.5 {
        SmokingStatus::Never
    } else if u < 0.85 {
        SmokingStatus::Former
    } else {
        SmokingStatus::Current
    };
    let smoking_freq = match smoking {
        SmokingStatus::Current => round1(normal(rng, 12.0, 5.0).clamp(1.0, 40.0)),
        _ => 0.0,
    };
    let alcohol = if rng.gen_bool(0.7) { YesNo::Yes } else { YesNo::No };
    let units = match alcohol {
        YesNo::Yes => round1(normal(rng, 8.0, 4.0).clamp(0.5, 40.0)),
        YesNo::No => 0.0,
    };
    let medication = if rng.gen_bool(0.4) { YesNo::Yes } else { YesNo::No };
    let comorbidities = if rng.gen_bool(0.3) { YesNo::Yes } else { YesNo::No };
    let preop = if rng.gen_bool(0.7) { 5 } else { 4 };
    ClinicalRecord {
        patient_id: id.to_string(),
        age: Some(age),
        height_cm: Some(height),
        weight_kg: Some(weight),
        smoking_status: Some(smoking),
        smoking_freq: Some(smoking_freq),
        alcohol_use: Some(alcohol),
        alcohol_units_week: Some(units),
        medication: Some(medication),
        comorbidities: Some(comorbidities),
        preop_iief_q1: Some(preop),
    }
}

fn blank_fields<R: Rng>(rng: &mut R, rec: &mut ClinicalRecord, rate: f64) {
    macro_rules! maybe {
        ($($f:ident),*) => {$(
            if rng.gen_bool(rate) {
                rec.$f = None;
            }
        )*};
    }
    maybe!(age, height_cm, weight_kg, smoking_status, smoking_freq, alcohol_use, alcohol_units_week, medication, comorbidities, preop_iief_q1);
}

/// Generates patient `index` of the cohort described by `spec`.
///
/// Every patient draws from its own stream of the master seed, so a patient
/// is identical whether generated alone, in sequence or in parallel.
pub fn generate_patient(spec: &PhantomSpec, index: usize) -> Result<PhantomPatient, PhantomError> {
    let (image, p) = build_patient(spec, index, true)?;
    let image = image.ok_or_else(|| PhantomError::InvalidSpec("image was not rendered".into()))?;
    Ok(PhantomPatient { image, mask: p.mask, clinical: p.clinical, label: p.label, truth: p.truth })
}

/// Same patient as [`generate_patient`] without rendering the intensity image.
pub fn generate_patient_mask(spec: &PhantomSpec, index: usize) -> Result<PhantomMask, PhantomError> {
    Ok(build_patient(spec, index, false)?.1)
}

fn build_patient(spec: &PhantomSpec, index: usize, render: bool) -> Result<(Option<Volume3D>, PhantomMask), PhantomError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let id = PhantomSpec::patient_id(index);
    let [sx, sy, sz] = spec.spacing_mm;
    let [nx, ny, _] = spec.dims;

    let uniform = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| if b > a { rng.gen_range(a..=b) } else { a };
    let radius = uniform(&mut rng, spec.radius_mm);
    let width = uniform(&mut rng, spec.width_mm);
    let j = spec.center_jitter_mm;
    let (jx, jy) = (uniform(&mut rng, (-j, j)), uniform(&mut rng, (-j, j)));
    let center = ((nx as f64 - 1.0) / 2.0 + jx / sx, (ny as f64 - 1.0) / 2.0 + jy / sy);
    let anatomy = Anatomy { center, radius, width };

    let age = round1((AGE_MEAN + AGE_SD * rng.sample::<f64, _>(rand_distr::StandardNormal)).clamp(AGE_RANGE.0, AGE_RANGE.1));
    let mut clinical = sample_clinical(&mut rng, &id, age);

    let (z0, z1) = spec.prostate_z;
    let mid_z = SlicePolicy::SingleMid.indices(z0, z1)[0];
    let mid_rays = anatomy.ray_widths(spec, mid_z);
    let mean_width_mm = mid_rays.iter().sum::<f64>() / N_RAYS as f64;
    let probability = spec.signal.probability(mean_width_mm, age);
    let label = rng.gen_bool(probability) as u8;
    let score = if label == 1 { rng.gen_range(4..=5) } else { rng.gen_range(0..=3) };
    blank_fields(&mut rng, &mut clinical, spec.missing_rate);

    let mask = rasterize(spec, &anatomy)?;
    let image = if render { Some(render_image(spec, &mask, &mut rng)?) } else { None };

    let multi_slices = SlicePolicy::All12.indices(z0, z1);
    let multi_sector_widths_mm = multi_slices.iter().map(|&z| anatomy.sector_widths(spec, z)).collect();
    let mut distinct = multi_slices.clone();
    distinct.dedup();
    let (mut prostate_mm3, mut fascia_mm3) = (0.0, 0.0);
    for &z in &distinct {
        let (r, w) = anatomy.at(spec, z);
        prostate_mm3 += std::f64::consts::PI * r * r * sz;
        fascia_mm3 += ring_area_mm2(&spec.width_shape, w, r) * sz;
    }
    let voxel_counts = LabelCounts {
        background: mask.count(Label::Background),
        prostate: mask.count(Label::Prostate),
        fascia: mask.count(Label::Fascia),
    };

    let truth = PhantomTruth {
        patient_id: id.clone(),
        center_vox: center,
        base_radius_mm: radius,
        base_width_mm: width,
        prostate_z: spec.prostate_z,
        mid_z,
        mean_width_mm,
        sector_widths_mm: anatomy.sector_widths(spec, mid_z),
        multi_slices,
        multi_sector_widths_mm,
        voxel_counts,
        prostate_ml: prostate_mm3 / 1000.0,
        fascia_ml: fascia_mm3 / 1000.0,
        age,
        probability,
        label,
        iief_q1_12mo: score,
    };
    Ok((image, PhantomMask { mask, clinical, label: OutcomeLabel::new(id, score)?, truth }))
}

fn io_err(path: &Path, source: std::io::Error) -> PhantomError {
    PhantomError::Io { path: path.display().to_string(), source }
}

/// Writes a full dataset directory:
/// `volumes/<id>.mvol`, `masks/<id>.mvol`, `clinical.csv`, `labels.csv`,
/// `truth.json`.
pub fn generate_cohort(spec: &PhantomSpec, out_dir: impl AsRef<Path>) -> Result<CohortTruth, PhantomError> {
    spec.validate()?;
    let out = out_dir.as_ref();
    let volumes = out.join("volumes");
    let masks = out.join("masks");
    for d in [out, volumes.as_path(), masks.as_path()] {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let rows = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| {
            let p = generate_patient(spec, i)?;
            let id = &p.truth.patient_id;
            write_mvol(&p.image, volumes.join(format!("{id}.mvol")))?;
            write_mvol(&p.mask, masks.join(format!("{id}.mvol")))?;
            Ok((p.clinical, p.label, p.truth))
        })
        .collect::<Result<Vec<_>, PhantomError>>()?;

    let mut clinical = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut patients = Vec::with_capacity(rows.len());
    for (c, l, t) in rows {
        clinical.push(c);
        labels.push(l);
        patients.push(t);
    }
    write_clinical_csv(&clinical, out.join("clinical.csv"))?;
    write_labels_csv(&labels, out.join("labels.csv"))?;
    let truth = CohortTruth { spec: spec.clone(), outcome_model: spec.signal.outcome_model(), patients };
    let path = out.join("truth.json");
    fs::write(&path, serde_json::to_vec_pretty(&truth)?).map_err(|e| io_err(&path, e))?;
    Ok(truth)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<CohortTruth, PhantomError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{multi_slice_features, single_slice_features, volume_features};

    fn small(signal: Signal) -> PhantomSpec {
        PhantomSpec {
            n_patients: 4,
            dims: [220, 220, 16],
            prostate_z: (2, 13),
            radius_mm: (12.0, 16.0),
            width_mm: (2.0, 5.0),
            noise_sigma: 5.0,
            signal,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn constant_width_truth() {
        let spec = PhantomSpec { width_mm: (4.0, 4.0), ..small(Signal::Strong) };
        let p = generate_patient(&spec, 0).unwrap();
        assert_eq!(p.truth.sector_widths_mm, [4.0; 12]);
        assert_eq!(p.truth.mean_width_mm, 4.0);
    }

    #[test]
    fn label_counts_match_components() {
        let spec = small(Signal::Strong);
        let p = generate_patient(&spec, 1).unwrap();
        let fascia = p.mask.binary_component(Label::Fascia).unwrap();
        assert_eq!(fascia.data().iter().filter(|&&b| b).count(), p.truth.voxel_counts.fascia);
        assert_eq!(p.mask.prostate_slice_range().unwrap(), (2, 13));
        let c = p.truth.voxel_counts;
        assert_eq!(c.background + c.prostate + c.fascia, p.mask.len());
    }

    #[test]
    fn extractor_recovers_truth() {
        for shape in [
            WidthShape::Constant,
            WidthShape::Elliptic { elongation: 0.3 },
            WidthShape::Asymmetric { amplitude: 0.5 },
            WidthShape::HalfRing,
        ] {
            let spec = PhantomSpec { width_shape: shape, ..small(Signal::Strong) };
            for i in 0..2 {
                let p = generate_patient(&spec, i).unwrap();
                let got = single_slice_features(&p.mask).unwrap().medians_mm;
                for k in 0..12 {
                    assert!((got[k] - p.truth.sector_widths_mm[k]).abs() <= 0.273, "{shape:?} {k}: {} vs {}", got[k], p.truth.sector_widths_mm[k]);
                }
                let v = volume_features(&p.mask).unwrap();
                assert!((v.prostate_ml - p.truth.prostate_ml).abs() / p.truth.prostate_ml < 0.02);
                assert!((v.fascia_ml - p.truth.fascia_ml).abs() / p.truth.fascia_ml < 0.02);
            }
        }
    }

    #[test]
    fn asymmetric_is_thicker_posterior() {
        let spec = PhantomSpec { width_shape: WidthShape::Asymmetric { amplitude: 0.6 }, ..small(Signal::Strong) };
        let p = generate_patient(&spec, 2).unwrap();
        let m = single_slice_features(&p.mask).unwrap().medians_mm;
        // posterior (+y) sectors 2,3 versus anterior sectors 8,9
        assert!(m[2].min(m[3]) > m[8].max(m[9]));
    }

    #[test]
    fn tapered_width_thins_towards_apex() {
        let spec = PhantomSpec { width_taper: 0.6, width_mm: (5.0, 5.0), ..small(Signal::Strong) };
        let p = generate_patient(&spec, 0).unwrap();
        let f = multi_slice_features(&p.mask).unwrap();
        let means: Vec<f64> = f.slices.iter().map(|s| s.medians_mm.iter().sum::<f64>() / 12.0).collect();
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 0.05, "{means:?}");
        }
        assert!(means[0] - means[11] > 2.0);
    }

    #[test]
    fn uniform_cylinder_blocks_equal() {
        let spec = PhantomSpec { center_jitter_mm: 0.0, ..small(Signal::Strong) };
        let p = generate_patient(&spec, 3).unwrap();
        let f = multi_slice_features(&p.mask).unwrap();
        assert!(f.slices.iter().all(|s| s.medians_mm == f.slices[0].medians_mm));
    }

    #[test]
    fn half_ring_profiles_have_many_zero_rays() {
        let spec = PhantomSpec { width_shape: WidthShape::HalfRing, ..small(Signal::Strong) };
        let p = generate_patient(&spec, 0).unwrap();
        let prof = crate::features::slice_profile(&p.mask, p.truth.mid_z).unwrap();
        assert!(prof.thickness_mm.iter().filter(|&&t| t == 0.0).count() >= 120);
    }

    #[test]
    fn patients_are_independent_of_generation_order() {
        let spec = small(Signal::Strong);
        let a = generate_patient(&spec, 3).unwrap();
        let _ = generate_patient(&spec, 0).unwrap();
        let b = generate_patient(&spec, 3).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.image, b.image);
        assert_ne!(generate_patient(&spec, 2).unwrap().truth, a.truth);
    }

    #[test]
    fn out_of_bounds_geometry_rejected() {
        let spec = PhantomSpec { dims: [64, 64, 16], ..small(Signal::Strong) };
        assert!(matches!(generate_patient(&spec, 0), Err(PhantomError::OutOfBounds(_))));
        let spec = PhantomSpec { prostate_z: (3, 16), ..small(Signal::Strong) };
        assert!(matches!(spec.validate(), Err(PhantomError::OutOfBounds(_))));
    }

    /// Masks and truth only; skips the image noise for speed.
    fn labels_only(spec: &PhantomSpec, n: usize) -> Vec<PhantomTruth> {
        let spec = PhantomSpec { dims: [130, 130, 16], radius_mm: (6.0, 8.0), noise_sigma: 0.0, ..spec.clone() };
        (0..n).into_par_iter().map(|i| generate_patient_mask(&spec, i).unwrap().truth).collect()
    }

    #[test]
    fn null_signal_rate_near_half() {
        let t = labels_only(&small(Signal::None), 1000);
        let pos = t.iter().filter(|p| p.label == 1).count() as f64;
        let sd = (1000.0f64 * 0.25).sqrt();
        assert!((pos - 500.0).abs() <= 3.0 * sd, "{pos}");
        assert!(t.iter().all(|p| p.probability == 0.5));
    }

    #[test]
    fn label_rate_tracks_planted_probability() {
        let t = labels_only(&small(Signal::Strong), 1000);
        let pbar = t.iter().map(|p| p.probability).sum::<f64>() / 1000.0;
        let se = t.iter().map(|p| p.probability * (1.0 - p.probability)).sum::<f64>().sqrt() / 1000.0;
        let rate = t.iter().filter(|p| p.label == 1).count() as f64 / 1000.0;
        assert!((rate - pbar).abs() <= 3.0 * se, "{rate} vs {pbar}");
        assert!(t.iter().all(|p| (p.label == 1) == (p.iief_q1_12mo >= 4)));
    }

    #[test]
    fn strong_signal_point_biserial() {
        let t = labels_only(&small(Signal::Strong), 400);
        let w: Vec<f64> = t.iter().map(|p| p.mean_width_mm).collect();
        let y: Vec<f64> = t.iter().map(|p| p.label as f64).collect();
        let (mw, my) = (w.iter().sum::<f64>() / 400.0, y.iter().sum::<f64>() / 400.0);
        let cov: f64 = w.iter().zip(&y).map(|(a, b)| (a - mw) * (b - my)).sum();
        let vw: f64 = w.iter().map(|a| (a - mw).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        assert!(cov / (vw * vy).sqrt() > 0.3);
    }

    #[test]
    fn cohort_is_byte_deterministic_and_handles_empty() {
        let spec = PhantomSpec { n_patients: 2, dims: [140, 140, 14], radius_mm: (8.0, 10.0), prostate_z: (1, 12), ..small(Signal::None) };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_cohort(&spec, a.path()).unwrap();
        generate_cohort(&spec, b.path()).unwrap();
        for f in ["truth.json", "clinical.csv", "labels.csv", "volumes/P0001.mvol", "masks/P0000.mvol"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let back = read_truth(a.path().join("truth.json")).unwrap();
        assert_eq!(back.patients.len(), 2);
        let m: MaskVolume = crate::io::read_mvol(a.path().join("masks/P0001.mvol")).unwrap().into_mask().unwrap();
        assert_eq!(m.count(Label::Fascia), back.patients[1].voxel_counts.fascia);

        let empty = tempfile::tempdir().unwrap();
        generate_cohort(&PhantomSpec { n_patients: 0, ..spec }, empty.path()).unwrap();
        assert_eq!(fs::read_to_string(empty.path().join("labels.csv")).unwrap().trim(), "patient_id,iief_q1_12mo");
        assert_eq!(crate::io::read_clinical_csv(empty.path().join("clinical.csv")).unwrap().len(), 0);
    }

    #[test]
    fn mid_slice_disk_area_matches_counts() {
        let spec = PhantomSpec { radius_mm: (15.0, 15.0), ..small(Signal::Strong) };
        let p = generate_patient(&spec, 0).unwrap();
        let s = p.mask.extract_slice(p.truth.mid_z).unwrap();
        let n = s.data().iter().filter(|&&l| l == Label::Prostate).count() as f64;
        let expected = std::f64::consts::PI * 225.0 / (0.273 * 0.273);
        assert!((n - expected).abs() / expected < 0.02);
    }

    #[test]
    fn mask_only_path_matches_full_patient() {
        let spec = PhantomSpec { dims: [130, 130, 16], radius_mm: (6.0, 8.0), ..small(Signal::Strong) };
        let full = generate_patient(&spec, 3).unwrap();
        let part = generate_patient_mask(&spec, 3).unwrap();
        assert_eq!(full.mask, part.mask);
        assert_eq!(full.truth, part.truth);
        assert_eq!(full.clinical, part.clinical);
    }
}
