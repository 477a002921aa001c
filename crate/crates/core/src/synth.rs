//! Synthetic two-sensor iris datasets with known identities.
//!
//! Each identity owns a band-limited texture defined in normalized
//! (rubber-sheet) coordinates: `rho` runs from 0 at the pupil boundary to 1
//! at the limbus, `theta` is the image angle with y pointing down. Samples
//! place that texture between a randomly sized pupil and the iris circle,
//! then apply the sensor's degradations.
//!
//! All randomness comes from ChaCha8 streams keyed by
//! `(seed, identity, sample, purpose)`, so the output does not depend on
//! generation order or thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::evaluation::PairId;
use crate::iso_image::{save_image, EyeImage, ImageError, ImageKind, ANGULAR_RESOLUTION};
use crate::segmentation::{SegmentedPolar, BAND_ROWS};
use crate::sigset::{Comparison, Label, SigSet, SigSetError, TemplateEntry};

pub const IMAGE_WIDTH: usize = 320;
pub const IMAGE_HEIGHT: usize = 280;
const PUPIL_LEVEL: f64 = 18.0;
const SCLERA_LEVEL: f64 = 205.0;
const TEXTURE_RHO_STEPS: usize = 64;
const TEXTURE_THETA_STEPS: usize = 720;
const HARMONICS: usize = 48;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    SigSet(#[from] SigSetError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Acquisition defects injected into individual samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Defect {
    /// Pupil radius multiplied by 1.8.
    DilatedPupil,
    /// Horizontal band of iris-like gray across the pupil.
    Occlusion,
    /// Pupil displaced from the iris center by a fifth of the iris radius.
    GazeShift,
    /// Featureless frame.
    NoIris,
    /// Extra Gaussian blur of sigma 4.
    HeavyBlur,
}

impl Defect {
    pub const ALL: [Defect; 5] = [
        Defect::DilatedPupil,
        Defect::Occlusion,
        Defect::GazeShift,
        Defect::NoIris,
        Defect::HeavyBlur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Defect::DilatedPupil => "dilated_pupil",
            Defect::Occlusion => "occlusion",
            Defect::GazeShift => "gaze_shift",
            Defect::NoIris => "no_iris",
            Defect::HeavyBlur => "heavy_blur",
        }
    }
}

impl std::str::FromStr for Defect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Defect::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown defect '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorProfile {
    pub name: String,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    /// Odd rows replaced by the mean of their neighbours.
    pub interlace: bool,
    /// Contrast scaling about mid-gray.
    pub contrast_scale: f64,
}

impl SensorProfile {
    /// Newer, sharper enrollment sensor.
    pub fn sensor_a() -> Self {
        Self {
            name: "sensor_a".into(),
            blur_sigma: 0.5,
            noise_sigma: 2.0,
            interlace: false,
            contrast_scale: 1.0,
        }
    }

    /// Older probe sensor: blurrier, noisier, interlaced, flatter.
    pub fn sensor_b() -> Self {
        Self {
            name: "sensor_b".into(),
            blur_sigma: 1.5,
            noise_sigma: 6.0,
            interlace: true,
            contrast_scale: 0.85,
        }
    }

    /// No degradation at all.
    pub fn ideal() -> Self {
        Self {
            name: "ideal".into(),
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            interlace: false,
            contrast_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.blur_sigma) || !ok(self.noise_sigma) || !(self.contrast_scale > 0.0) || !self.contrast_scale.is_finite() {
            return Err(SynthError::InvalidConfig(format!(
                "profile '{}': blur and noise must be >= 0 and contrast > 0",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub samples_per_identity_per_sensor: usize,
    pub seed: u64,
    /// Independent probability of each defect per sample.
    pub defect_rates: BTreeMap<Defect, f64>,
    /// Probability that an enrollment entry has its identity swapped.
    pub mislabel_rate: f64,
    /// Enrollment sensor.
    pub sensor_a: SensorProfile,
    /// Probe sensor.
    pub sensor_b: SensorProfile,
    /// Number of different-identity pairs declared; all of them when `None`.
    pub imposter_sample: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            samples_per_identity_per_sensor: 2,
            seed: 1,
            defect_rates: BTreeMap::new(),
            mislabel_rate: 0.0,
            sensor_a: SensorProfile::sensor_a(),
            sensor_b: SensorProfile::sensor_b(),
            imposter_sample: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_identities == 0 || self.samples_per_identity_per_sensor == 0 {
            return Err(SynthError::InvalidConfig("counts must be at least 1".into()));
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.mislabel_rate) || !self.defect_rates.values().all(|&p| prob(p)) {
            return Err(SynthError::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        self.sensor_a.validate()?;
        self.sensor_b.validate()
    }
}

// --- keyed randomness --------------------------------------------------------

#[derive(Clone, Copy, Debug)]
#[repr(u64)]
enum Purpose {
    Texture = 1,
    Geometry = 2,
    Noise = 3,
    Defects = 4,
    Mislabels = 5,
    Imposters = 6,
    Sample = 7,
}

fn keyed_rng(seed: u64, identity: u64, sample: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, identity, sample, purpose as u64].into_iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Seed of one sample of one identity on one sensor.
pub fn sample_seed(seed: u64, identity: usize, sample: usize, sensor: usize) -> u64 {
    keyed_rng(seed, identity as u64, (sample as u64) << 1 | sensor as u64, Purpose::Sample).random()
}

// --- textures ------------------------------------------------------------------

/// Texture of one identity on a `rho × theta` grid, values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityTexture {
    pub identity_index: usize,
    /// Limbus radius in pixels.
    pub iris_radius: f64,
    values: Vec<f64>,
}

pub fn generate_identity_texture(seed: u64, identity_index: usize) -> IdentityTexture {
    let mut rng = keyed_rng(seed, identity_index as u64, 0, Purpose::Texture);
    let iris_radius = rng.random_range(76.0..86.0);
    let mean = rng.random_range(100.0..125.0);
    let std = rng.random_range(18.0..24.0);
    let harmonics: Vec<(f64, f64, f64, f64)> = (0..HARMONICS)
        .map(|_| {
            let m = rng.random_range(8..=45) as f64;
            let amplitude = rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..TAU);
            let drift = rng.random_range(-14.0..14.0);
            (m, amplitude, phase, drift)
        })
        .collect();
    let power: f64 = harmonics.iter().map(|h| h.1 * h.1 / 2.0).sum();
    let gain = std / power.sqrt();

    let mut values = Vec::with_capacity((TEXTURE_RHO_STEPS + 1) * TEXTURE_THETA_STEPS);
    for i in 0..=TEXTURE_RHO_STEPS {
        let rho = i as f64 / TEXTURE_RHO_STEPS as f64;
        // slightly darker towards the limbus
        let base = mean - 12.0 * rho * rho;
        for j in 0..TEXTURE_THETA_STEPS {
            let theta = TAU * j as f64 / TEXTURE_THETA_STEPS as f64;
            let v: f64 = harmonics
                .iter()
                .map(|&(m, a, p, d)| a * (m * theta + p + d * rho).cos())
                .sum();
            values.push((base + gain * v).clamp(35.0, 190.0));
        }
    }
    IdentityTexture {
        identity_index,
        iris_radius,
        values,
    }
}

impl IdentityTexture {
    /// Bilinear lookup, `rho` clamped to `[0, 1]`, `theta` periodic.
    pub fn sample(&self, rho: f64, theta: f64) -> f64 {
        let r = rho.clamp(0.0, 1.0) * TEXTURE_RHO_STEPS as f64;
        let t = theta.rem_euclid(TAU) / TAU * TEXTURE_THETA_STEPS as f64;
        let r0 = (r.floor() as usize).min(TEXTURE_RHO_STEPS - 1);
        let fr = r - r0 as f64;
        let t0 = t.floor() as usize % TEXTURE_THETA_STEPS;
        let t1 = (t0 + 1) % TEXTURE_THETA_STEPS;
        let ft = t - t.floor();
        let at = |i: usize, j: usize| self.values[i * TEXTURE_THETA_STEPS + j];
        let top = at(r0, t0) * (1.0 - ft) + at(r0, t1) * ft;
        let bottom = at(r0 + 1, t0) * (1.0 - ft) + at(r0 + 1, t1) * ft;
        top * (1.0 - fr) + bottom * fr
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The texture as an ideal normalized band, row `i` at `rho = i / 32`.
    pub fn band(&self) -> SegmentedPolar {
        SegmentedPolar::from_fn(|r, c| {
            let rho = r as f64 / BAND_ROWS as f64;
            let theta = TAU * c as f64 / ANGULAR_RESOLUTION as f64;
            self.sample(rho, theta).round() as u8
        })
    }
}

// --- rendering ---------------------------------------------------------------

/// Where the eye ended up in a rendered sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleGeometry {
    pub pupil_center: (f64, f64),
    pub pupil_radius: f64,
    pub iris_center: (f64, f64),
    pub iris_radius: f64,
    /// Rotation of the texture in radians.
    pub rotation: f64,
}

fn draw_geometry(texture: &IdentityTexture, sample_seed: u64, defects: &BTreeSet<Defect>) -> SampleGeometry {
    let mut rng = keyed_rng(sample_seed, texture.identity_index as u64, 0, Purpose::Geometry);
    let iris_center = (
        IMAGE_WIDTH as f64 / 2.0 + rng.random_range(-6.0..6.0),
        IMAGE_HEIGHT as f64 / 2.0 + rng.random_range(-6.0..6.0),
    );
    let iris_radius = texture.iris_radius + rng.random_range(-1.0..1.0);
    let mut pupil_radius = rng.random_range(26.0..34.0);
    let mut offset = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let rotation = rng.random_range(-1.0..1.0f64).to_radians();
    let gaze_direction = rng.random_range(0.0..TAU);
    if defects.contains(&Defect::DilatedPupil) {
        pupil_radius *= 1.8;
    }
    if defects.contains(&Defect::GazeShift) {
        let shift = 0.2 * iris_radius;
        offset = (shift * gaze_direction.cos(), shift * gaze_direction.sin());
    }
    SampleGeometry {
        pupil_center: (iris_center.0 + offset.0, iris_center.1 + offset.1),
        pupil_radius,
        iris_center,
        iris_radius,
        rotation,
    }
}

/// Noise-free intensity at `(x, y)`.
fn scene_value(texture: &IdentityTexture, g: &SampleGeometry, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - g.pupil_center.0, y - g.pupil_center.1);
    let r = dx.hypot(dy);
    if r <= g.pupil_radius {
        return PUPIL_LEVEL;
    }
    let (ux, uy) = (dx / r, dy / r);
    // distance along the ray from the pupil center to the iris circle
    let (wx, wy) = (g.pupil_center.0 - g.iris_center.0, g.pupil_center.1 - g.iris_center.1);
    let b = wx * ux + wy * uy;
    let c = wx * wx + wy * wy - g.iris_radius * g.iris_radius;
    let limbus = -b + (b * b - c).max(0.0).sqrt();
    if r >= limbus {
        return SCLERA_LEVEL;
    }
    let rho = (r - g.pupil_radius) / (limbus - g.pupil_radius);
    texture.sample(rho, uy.atan2(ux) - g.rotation)
}

fn gaussian_blur(data: &mut [f64], w: usize, h: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * data[y * w + clamp(x as i64 + k as i64 - radius, w)])
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, c)| c * tmp[clamp(y as i64 + k as i64 - radius, h) * w + x])
                .sum();
        }
    }
}

/// Renders one eye image; see [`render_sample_with_geometry`].
pub fn render_sample(
    texture: &IdentityTexture,
    profile: &SensorProfile,
    sample_seed: u64,
    defects: &BTreeSet<Defect>,
) -> EyeImage {
    render_sample_with_geometry(texture, profile, sample_seed, defects).0
}

/// Renders pupil, textured iris and sclera with 2×2 supersampling, then
/// applies defects and the sensor profile (blur, noise, interlace,
/// contrast). Pixel values are kept in `[1, 255]`.
pub fn render_sample_with_geometry(
    texture: &IdentityTexture,
    profile: &SensorProfile,
    sample_seed: u64,
    defects: &BTreeSet<Defect>,
) -> (EyeImage, SampleGeometry) {
    let (w, h) = (IMAGE_WIDTH, IMAGE_HEIGHT);
    let g = draw_geometry(texture, sample_seed, defects);
    let mut data = vec![0.0; w * h];
    if defects.contains(&Defect::NoIris) {
        data.fill(128.0);
    } else {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (sx, sy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    acc += scene_value(texture, &g, x as f64 + sx, y as f64 + sy);
                }
                data[y * w + x] = acc / 4.0;
            }
        }
        if defects.contains(&Defect::Occlusion) {
            let half = 0.45 * g.pupil_radius;
            for y in 0..h {
                if (y as f64 - g.pupil_center.1).abs() <= half {
                    data[y * w..(y + 1) * w].fill(120.0);
                }
            }
        }
    }
    let extra = if defects.contains(&Defect::HeavyBlur) { 4.0 } else { 0.0 };
    gaussian_blur(&mut data, w, h, profile.blur_sigma.hypot(extra));
    if profile.noise_sigma > 0.0 {
        let mut rng = keyed_rng(sample_seed, texture.identity_index as u64, 0, Purpose::Noise);
        let normal = Normal::new(0.0, profile.noise_sigma).expect("validated noise sigma");
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    if profile.interlace {
        for y in (1..h.saturating_sub(1)).step_by(2) {
            for x in 0..w {
                data[y * w + x] = 0.5 * (data[(y - 1) * w + x] + data[(y + 1) * w + x]);
            }
        }
    }
    let pixels = data
        .iter()
        .map(|v| (128.0 + profile.contrast_scale * (v - 128.0)).round().clamp(1.0, 255.0) as u8)
        .collect();
    let image = EyeImage::new(w, h, pixels, ImageKind::RectilinearFull).expect("fixed valid dimensions");
    (image, g)
}

// --- datasets ------------------------------------------------------------------

/// One planned image.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub template_id: String,
    /// Index of the identity whose texture the image shows.
    pub identity_index: usize,
    pub sample_index: usize,
    /// 0 for enrollment (sensor A), 1 for probe (sensor B).
    pub sensor: usize,
    pub path: PathBuf,
    pub defects: BTreeSet<Defect>,
    pub seed: u64,
}

/// An exchange of declared identities between two enrollment entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Swap {
    pub first: String,
    pub second: String,
}

/// Everything of a dataset except the pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPlan {
    pub sigset: SigSet,
    pub samples: Vec<SampleRecord>,
    pub swaps: Vec<Swap>,
}

pub fn identity_id(index: usize) -> String {
    format!("id{index:04}")
}

impl DatasetPlan {
    /// True identity index of a template.
    pub fn true_identity(&self, template_id: &str) -> Option<usize> {
        self.samples
            .iter()
            .find(|s| s.template_id == template_id)
            .map(|s| s.identity_index)
    }

    /// Declared comparisons whose label contradicts the true identities.
    pub fn mislabeled_pairs(&self) -> BTreeSet<PairId> {
        let truth: BTreeMap<&str, usize> = self
            .samples
            .iter()
            .map(|s| (s.template_id.as_str(), s.identity_index))
            .collect();
        self.sigset
            .comparisons
            .iter()
            .filter(|c| {
                let same = truth[c.probe.as_str()] == truth[c.enrolled.as_str()];
                same != (c.label == Label::Genuine)
            })
            .map(|c| PairId::new(&c.probe, &c.enrolled))
            .collect()
    }

    /// Whether a declared comparison truly matches one identity.
    pub fn is_true_match(&self, probe: &str, enrolled: &str) -> bool {
        self.true_identity(probe) == self.true_identity(enrolled)
    }
}

/// Lays out samples, identity swaps and comparisons without rendering.
pub fn plan_dataset(config: &SynthConfig) -> Result<DatasetPlan, SynthError> {
    config.validate()?;
    let n = config.n_identities;
    let k = config.samples_per_identity_per_sensor;
    let mut samples = Vec::with_capacity(2 * n * k);
    for sensor in 0..2 {
        for id in 0..n {
            for s in 0..k {
                let (prefix, dir) = if sensor == 0 { ("e", "enroll") } else { ("p", "probe") };
                let template_id = format!("{prefix}{id:04}_{s:02}");
                let seed = sample_seed(config.seed, id, s, sensor);
                let mut rng = keyed_rng(config.seed, id as u64, (s as u64) << 1 | sensor as u64, Purpose::Defects);
                let defects = config
                    .defect_rates
                    .iter()
                    .filter(|(_, &p)| rng.random::<f64>() < p)
                    .map(|(&d, _)| d)
                    .collect();
                samples.push(SampleRecord {
                    path: PathBuf::from(dir).join(format!("{template_id}.pgm")),
                    template_id,
                    identity_index: id,
                    sample_index: s,
                    sensor,
                    defects,
                    seed,
                });
            }
        }
    }
    let to_entry = |s: &SampleRecord| TemplateEntry {
        template_id: s.template_id.clone(),
        identity_id: identity_id(s.identity_index),
        path: s.path.clone(),
    };
    let mut enrollment: Vec<TemplateEntry> = samples.iter().filter(|s| s.sensor == 0).map(to_entry).collect();
    let probes: Vec<TemplateEntry> = samples.iter().filter(|s| s.sensor == 1).map(to_entry).collect();

    // identity swaps between enrollment entries of different identities
    let mut swaps = Vec::new();
    let mut rng = keyed_rng(config.seed, 0, 0, Purpose::Mislabels);
    let mut swapped = vec![false; enrollment.len()];
    for i in 0..enrollment.len() {
        if swapped[i] || !(rng.random::<f64>() < config.mislabel_rate) {
            continue;
        }
        let partners: Vec<usize> = (0..enrollment.len())
            .filter(|&j| !swapped[j] && j != i && enrollment[j].identity_id != enrollment[i].identity_id)
            .collect();
        if partners.is_empty() {
            continue;
        }
        let j = partners[rng.random_range(0..partners.len())];
        let tmp = enrollment[i].identity_id.clone();
        enrollment[i].identity_id = enrollment[j].identity_id.clone();
        enrollment[j].identity_id = tmp;
        swapped[i] = true;
        swapped[j] = true;
        swaps.push(Swap {
            first: enrollment[i].template_id.clone(),
            second: enrollment[j].template_id.clone(),
        });
    }

    let mut genuine = Vec::new();
    let mut imposter = Vec::new();
    for p in &probes {
        for e in &enrollment {
            let c = |label| Comparison {
                probe: p.template_id.clone(),
                enrolled: e.template_id.clone(),
                label,
            };
            if p.identity_id == e.identity_id {
                genuine.push(c(Label::Genuine));
            } else {
                imposter.push(c(Label::Imposter));
            }
        }
    }
    if let Some(limit) = config.imposter_sample {
        if limit < imposter.len() {
            let mut rng = keyed_rng(config.seed, 0, 0, Purpose::Imposters);
            let mut keep = sample_indices(&mut rng, imposter.len(), limit).into_vec();
            keep.sort_unstable();
            imposter = keep.into_iter().map(|i| imposter[i].clone()).collect();
        }
    }
    let mut comparisons = genuine;
    comparisons.extend(imposter);
    Ok(DatasetPlan {
        sigset: SigSet {
            enrollment_entries: enrollment,
            probe_entries: probes,
            comparisons,
        },
        samples,
        swaps,
    })
}

pub const SIGSET_FILE: &str = "sigset.csv";
pub const SWAPS_FILE: &str = "ground_truth_swaps.csv";

fn swaps_csv(swaps: &[Swap]) -> String {
    let mut s = String::from("first_template,second_template\n");
    for w in swaps {
        s.push_str(&format!("{},{}\n", w.first, w.second));
    }
    s
}

/// Renders the planned images into `out_dir` and writes the sigset and the
/// swap sidecar.
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path) -> Result<DatasetPlan, SynthError> {
    let plan = plan_dataset(config)?;
    fs::create_dir_all(out_dir.join("enroll"))?;
    fs::create_dir_all(out_dir.join("probe"))?;
    let textures: Vec<IdentityTexture> = (0..config.n_identities)
        .into_par_iter()
        .map(|i| generate_identity_texture(config.seed, i))
        .collect();
    plan.samples.par_iter().try_for_each(|s| -> Result<(), SynthError> {
        let profile = if s.sensor == 0 { &config.sensor_a } else { &config.sensor_b };
        let image = render_sample(&textures[s.identity_index], profile, s.seed, &s.defects);
        save_image(out_dir.join(&s.path), &image)?;
        Ok(())
    })?;
    plan.sigset.save(out_dir.join(SIGSET_FILE))?;
    fs::write(out_dir.join(SWAPS_FILE), swaps_csv(&plan.swaps))?;
    Ok(plan)
}
