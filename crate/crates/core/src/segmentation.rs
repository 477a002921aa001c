//! Pupil localisation and limbic boundary search.
//!
//! The pupil is found in the rectilinear image as the largest dark, round
//! connected component under an Otsu threshold. The limbic boundary is
//! found in the pupil-centered polar image: each column proposes the
//! radius with the strongest outward intensity step, a fuzzy two-cluster
//! split separates columns that agree with a circular boundary model from
//! outliers (eyelid, lashes, reflections), outliers are re-interpolated
//! around the circle and the result is smoothed circularly.

use std::collections::VecDeque;
use std::f64::consts::PI;

use thiserror::Error;

use crate::iso_image::{
    column_angle, EyeImage, ImageKind, PolarImage, PupilDescriptor, ANGULAR_RESOLUTION,
};

/// Height of the segmented iris band, equal to the iris code height.
pub const BAND_ROWS: usize = 32;

const MIN_BAND_RADIUS: f64 = 8.0;
const MIN_POLAR_ROWS: usize = 64;
const MIN_BOUNDARY_COLUMNS: usize = 180;
const MAX_ADJACENT_STEP: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("no pupil found: {0}")]
    NoPupilFound(String),
    #[error("limbic boundary not found: only {found} of {ANGULAR_RESOLUTION} columns show an edge")]
    BoundaryNotFound { found: usize },
    #[error("iris band too thin: column {column} has boundary radius {radius:.2} rows")]
    BandTooThin { column: usize, radius: f64 },
    #[error("only {fraction:.3} of the iris band samples are valid")]
    InsufficientValidity { fraction: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationConfig {
    /// Minimum pupil component area as a fraction of the image.
    pub min_pupil_area_fraction: f64,
    /// Minimum 4π·area/perimeter² of a pupil component.
    pub min_circularity: f64,
    /// Optional Gaussian pre-blur (sigma in pixels) of the polar image
    /// before the boundary search. Disabled by default.
    pub polar_pre_blur: Option<f64>,
    /// Half-width of the column window the radial gradient is averaged over.
    pub gradient_half_window: usize,
    /// First row searched for the limbic edge; keeps the pupil edge out.
    pub min_boundary_row: usize,
    /// Width of the final circular moving average.
    pub smoothing_width: usize,
    /// Residual (rows) below which a column is never treated as an outlier.
    pub outlier_tolerance: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            min_pupil_area_fraction: 0.0005,
            min_circularity: 0.6,
            polar_pre_blur: None,
            gradient_half_window: 5,
            min_boundary_row: 8,
            smoothing_width: 11,
            outlier_tolerance: 3.0,
        }
    }
}

// --- pupil ------------------------------------------------------------------

/// Otsu threshold over histogram bins `[lo, hi]`. Returns the last level
/// of the darker class, or `None` when the range holds a single level.
pub fn otsu_threshold(histogram: &[u64; 256], lo: usize, hi: usize) -> Option<usize> {
    let total: u64 = histogram[lo..=hi].iter().sum();
    if total == 0 {
        return None;
    }
    let sum_all: f64 = (lo..=hi).map(|v| v as f64 * histogram[v] as f64).sum();
    let mut weight_dark = 0u64;
    let mut sum_dark = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for t in lo..hi {
        weight_dark += histogram[t];
        sum_dark += t as f64 * histogram[t] as f64;
        let weight_bright = total - weight_dark;
        if weight_dark == 0 || weight_bright == 0 {
            continue;
        }
        let mean_dark = sum_dark / weight_dark as f64;
        let mean_bright = (sum_all - sum_dark) / weight_bright as f64;
        let between =
            weight_dark as f64 * weight_bright as f64 * (mean_dark - mean_bright).powi(2);
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, t));
        }
    }
    best.map(|(_, t)| t)
}

#[derive(Debug, Clone)]
struct Component {
    pixels: Vec<(usize, usize)>,
}

/// 8-connected components of `mask`, largest first.
fn connected_components(mask: &[bool], width: usize, height: usize) -> Vec<Component> {
    let mut labels = vec![u32::MAX; mask.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != u32::MAX {
            continue;
        }
        let label = components.len() as u32;
        labels[start] = label;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % width, idx / width);
            pixels.push((x, y));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let n = ny as usize * width + nx as usize;
                    if mask[n] && labels[n] == u32::MAX {
                        labels[n] = label;
                        queue.push_back(n);
                    }
                }
            }
        }
        components.push(Component { pixels });
    }
    components.sort_by(|a, b| b.pixels.len().cmp(&a.pixels.len()));
    components
}

/// Component rasterised into its bounding box with a one pixel border.
struct ComponentMask {
    width: usize,
    height: usize,
    origin: (usize, usize),
    bits: Vec<bool>,
}

impl ComponentMask {
    fn new(component: &Component) -> Self {
        let min_x = component.pixels.iter().map(|p| p.0).min().unwrap();
        let max_x = component.pixels.iter().map(|p| p.0).max().unwrap();
        let min_y = component.pixels.iter().map(|p| p.1).min().unwrap();
        let max_y = component.pixels.iter().map(|p| p.1).max().unwrap();
        let width = max_x - min_x + 3;
        let height = max_y - min_y + 3;
        let mut bits = vec![false; width * height];
        for &(x, y) in &component.pixels {
            bits[(y - min_y + 1) * width + (x - min_x + 1)] = true;
        }
        Self {
            width,
            height,
            origin: (min_x, min_y),
            bits,
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Length of the marching-squares contour through pixel centres.
    fn perimeter(&self) -> f64 {
        let diag = std::f64::consts::FRAC_1_SQRT_2;
        let mut length = 0.0;
        for y in 0..self.height - 1 {
            for x in 0..self.width - 1 {
                let corners = [
                    self.at(x, y),
                    self.at(x + 1, y),
                    self.at(x + 1, y + 1),
                    self.at(x, y + 1),
                ];
                let count = corners.iter().filter(|&&c| c).count();
                length += match count {
                    1 | 3 => diag,
                    2 if corners[0] == corners[2] => 2.0 * diag,
                    2 => 1.0,
                    _ => 0.0,
                };
            }
        }
        length
    }

    /// Midpoints of every edge between a component pixel and a 4-neighbour
    /// outside it, in source coordinates.
    fn edge_points(&self) -> Vec<(f64, f64)> {
        let mut points = Vec::new();
        let ox = self.origin.0 as f64 - 1.0;
        let oy = self.origin.1 as f64 - 1.0;
        for y in 1..self.height - 1 {
            for x in 1..self.width - 1 {
                if !self.at(x, y) {
                    continue;
                }
                let (fx, fy) = (x as f64 + ox, y as f64 + oy);
                if !self.at(x - 1, y) {
                    points.push((fx - 0.5, fy));
                }
                if !self.at(x + 1, y) {
                    points.push((fx + 0.5, fy));
                }
                if !self.at(x, y - 1) {
                    points.push((fx, fy - 0.5));
                }
                if !self.at(x, y + 1) {
                    points.push((fx, fy + 0.5));
                }
            }
        }
        points
    }
}

/// Algebraic least-squares circle through `points`: `(cx, cy, r)`.
pub fn fit_circle(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if points.len() < 3 {
        return None;
    }
    // centre the data for conditioning
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut suu, mut svv, mut suv, mut suuu, mut svvv, mut suvv, mut svuu) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (u, v) = (x - mx, y - my);
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suuu += u * u * u;
        svvv += v * v * v;
        suvv += u * v * v;
        svuu += v * u * u;
    }
    let det = suu * svv - suv * suv;
    if det.abs() < 1e-12 {
        return None;
    }
    let b1 = 0.5 * (suuu + suvv);
    let b2 = 0.5 * (svvv + svuu);
    let uc = (b1 * svv - b2 * suv) / det;
    let vc = (suu * b2 - suv * b1) / det;
    let r = (uc * uc + vc * vc + (suu + svv) / n).sqrt();
    Some((uc + mx, vc + my, r))
}

fn residual(p: (f64, f64), c: (f64, f64, f64)) -> f64 {
    ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() - c.2
}

/// Circle fit that iteratively discards edge points far from the current
/// circle, so a straight occluding edge does not drag the centre.
fn robust_circle_fit(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    let mut circle = fit_circle(points)?;
    let mut inliers: Vec<(f64, f64)> = points.to_vec();
    for _ in 0..20 {
        let mut abs_res: Vec<f64> = points.iter().map(|&p| residual(p, circle).abs()).collect();
        abs_res.sort_by(f64::total_cmp);
        let median = abs_res[abs_res.len() / 2];
        let cutoff = (3.0 * 1.4826 * median).max(1.0);
        let next: Vec<(f64, f64)> = points
            .iter()
            .copied()
            .filter(|&p| residual(p, circle).abs() <= cutoff)
            .collect();
        if next.len() < 8 || next == inliers {
            break;
        }
        inliers = next;
        circle = fit_circle(&inliers)?;
    }
    Some(circle)
}

/// Locates the pupil as the largest dark round blob.
///
/// The image is binarised with Otsu's threshold, keeping the darker class.
/// Eye images are at least three-toned (pupil, iris, sclera), so when the
/// darker class holds no acceptable blob the threshold is refined by
/// re-running Otsu inside the darker class; the darkest level that yields
/// an acceptable blob wins.
pub fn detect_pupil(
    image: &EyeImage,
    config: &SegmentationConfig,
) -> Result<PupilDescriptor, SegmentationError> {
    if image.kind() != ImageKind::RectilinearFull {
        return Err(SegmentationError::InvalidInput(
            "pupil detection expects a full rectilinear image".into(),
        ));
    }
    let (width, height) = (image.width(), image.height());
    let mut histogram = [0u64; 256];
    for &p in image.pixels() {
        histogram[p as usize] += 1;
    }
    let min_area = (config.min_pupil_area_fraction * (width * height) as f64).ceil() as usize;
    let lowest = histogram.iter().position(|&c| c > 0).unwrap_or(0);

    let mut best: Option<PupilDescriptor> = None;
    let mut hi = 255usize;
    for _ in 0..4 {
        let Some(threshold) = otsu_threshold(&histogram, lowest, hi) else {
            break;
        };
        let dark: usize = histogram[..=threshold].iter().sum::<u64>() as usize;
        if dark < min_area {
            break;
        }
        let mask: Vec<bool> = image.pixels().iter().map(|&p| p as usize <= threshold).collect();
        if let Some(p) = best_pupil_component(&mask, width, height, min_area, config) {
            best = Some(p);
        }
        hi = threshold;
    }
    best.ok_or_else(|| {
        SegmentationError::NoPupilFound(format!(
            "no dark component with area >= {min_area} px and circularity >= {}",
            config.min_circularity
        ))
    })
}

fn best_pupil_component(
    mask: &[bool],
    width: usize,
    height: usize,
    min_area: usize,
    config: &SegmentationConfig,
) -> Option<PupilDescriptor> {
    for component in connected_components(mask, width, height) {
        let area = component.pixels.len();
        if area < min_area {
            break;
        }
        let cmask = ComponentMask::new(&component);
        let perimeter = cmask.perimeter();
        let circularity = 4.0 * PI * area as f64 / (perimeter * perimeter);
        if circularity < config.min_circularity {
            continue;
        }
        let points = cmask.edge_points();
        let Some((cx, cy, r)) = robust_circle_fit(&points) else {
            continue;
        };
        if !(r > 0.0) || cx < 0.0 || cy < 0.0 || cx > (width - 1) as f64 || cy > (height - 1) as f64
        {
            continue;
        }
        let rms = (points.iter().map(|&p| residual(p, (cx, cy, r)).powi(2)).sum::<f64>()
            / points.len() as f64)
            .sqrt();
        return Some(PupilDescriptor {
            center: (cx, cy),
            radius: r,
            boundary_confidence: (1.0 - rms / r).clamp(0.0, 1.0),
        });
    }
    None
}

// --- limbic boundary --------------------------------------------------------

/// Outer iris boundary, one fractional row index per polar column.
#[derive(Clone, Debug, PartialEq)]
pub struct LimbicBoundary {
    pub radius_per_column: Vec<f64>,
    pub smoothed: bool,
    pub mean_radius: f64,
}

impl LimbicBoundary {
    pub fn constant(radius: f64) -> Self {
        Self {
            radius_per_column: vec![radius; ANGULAR_RESOLUTION],
            smoothed: true,
            mean_radius: radius,
        }
    }

    pub fn from_radii(radius_per_column: Vec<f64>, smoothed: bool) -> Self {
        let mean_radius = radius_per_column.iter().sum::<f64>() / radius_per_column.len() as f64;
        Self {
            radius_per_column,
            smoothed,
            mean_radius,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Polar intensities as f64, optionally blurred (circular in angle,
/// clamped in radius).
fn polar_field(polar: &PolarImage, pre_blur: Option<f64>) -> Vec<f64> {
    let rows = polar.radial_resolution();
    let mut field: Vec<f64> = polar.pixels().iter().map(|&p| p as f64).collect();
    let Some(sigma) = pre_blur.filter(|s| *s > 0.0) else {
        return field;
    };
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as i64;
    let n = ANGULAR_RESOLUTION as i64;
    let mut tmp = vec![0.0; field.len()];
    for r in 0..rows {
        for c in 0..ANGULAR_RESOLUTION {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                let cc = (c as i64 + i as i64 - half).rem_euclid(n) as usize;
                acc += w * field[r * ANGULAR_RESOLUTION + cc];
            }
            tmp[r * ANGULAR_RESOLUTION + c] = acc;
        }
    }
    for r in 0..rows {
        for c in 0..ANGULAR_RESOLUTION {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                let rr = (r as i64 + i as i64 - half).clamp(0, rows as i64 - 1) as usize;
                acc += w * tmp[rr * ANGULAR_RESOLUTION + c];
            }
            field[r * ANGULAR_RESOLUTION + c] = acc;
        }
    }
    field
}

/// Per-column edge candidates: `Some(row)` where the window-averaged
/// outward step exceeds the noise floor.
fn edge_candidates(polar: &PolarImage, config: &SegmentationConfig) -> Vec<Option<usize>> {
    let rows = polar.radial_resolution();
    let field = polar_field(polar, config.polar_pre_blur);
    let n = ANGULAR_RESOLUTION as i64;

    // forward difference: gradient[r] = I(r) - I(r - 1), zero where either
    // sample is out-of-bounds fill
    let mut gradient = vec![0.0; rows * ANGULAR_RESOLUTION];
    for r in 1..rows {
        for c in 0..ANGULAR_RESOLUTION {
            if polar.is_valid(r, c) && polar.is_valid(r - 1, c) {
                gradient[r * ANGULAR_RESOLUTION + c] =
                    field[r * ANGULAR_RESOLUTION + c] - field[(r - 1) * ANGULAR_RESOLUTION + c];
            }
        }
    }
    let half = config.gradient_half_window as i64;
    let width = (2 * half + 1) as f64;
    let mut smoothed = vec![0.0; rows * ANGULAR_RESOLUTION];
    for r in 1..rows {
        for c in 0..ANGULAR_RESOLUTION {
            let mut acc = 0.0;
            for d in -half..=half {
                let cc = (c as i64 + d).rem_euclid(n) as usize;
                acc += gradient[r * ANGULAR_RESOLUTION + cc];
            }
            smoothed[r * ANGULAR_RESOLUTION + c] = acc / width;
        }
    }

    // robust noise scale of the smoothed gradient
    let first = config.min_boundary_row.max(1).min(rows - 1);
    let mut magnitudes: Vec<f64> = smoothed[first * ANGULAR_RESOLUTION..]
        .iter()
        .map(|v| v.abs())
        .collect();
    magnitudes.sort_by(f64::total_cmp);
    let mad = magnitudes[magnitudes.len() / 2];
    let noise_floor = (3.0 * 1.4826 * mad).max(1.0);

    (0..ANGULAR_RESOLUTION)
        .map(|c| {
            let mut best: Option<(f64, usize)> = None;
            for r in first..rows {
                let g = smoothed[r * ANGULAR_RESOLUTION + c];
                if best.is_none_or(|(b, _)| g > b) {
                    best = Some((g, r));
                }
            }
            best.filter(|&(g, _)| g > noise_floor).map(|(_, r)| r)
        })
        .collect()
}

/// Weighted least-squares fit of `a + b·cos θ + c·sin θ`, the polar trace
/// of a circle near the pupil centre. Returns the model per column.
fn fit_circle_trace(radii: &[f64], weights: &[f64]) -> Vec<f64> {
    // normal equations for the 3 parameter linear model
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for c in 0..ANGULAR_RESOLUTION {
        let w = weights[c];
        if w <= 0.0 {
            continue;
        }
        let t = column_angle(c);
        let basis = [1.0, t.cos(), t.sin()];
        for i in 0..3 {
            atb[i] += w * basis[i] * radii[c];
            for j in 0..3 {
                ata[i][j] += w * basis[i] * basis[j];
            }
        }
    }
    let coef = solve3(ata, atb).unwrap_or_else(|| {
        let wsum: f64 = weights.iter().sum();
        [atb[0] / wsum.max(f64::MIN_POSITIVE), 0.0, 0.0]
    });
    (0..ANGULAR_RESOLUTION)
        .map(|c| {
            let t = column_angle(c);
            coef[0] + coef[1] * t.cos() + coef[2] * t.sin()
        })
        .collect()
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Fuzzy c-means (m = 2) with two centres over 1-D values. Returns the
/// memberships of each value to the cluster seeded at `seeds.0`.
pub fn fuzzy_two_cluster(values: &[f64], seeds: (f64, f64)) -> (Vec<f64>, (f64, f64)) {
    let (mut c0, mut c1) = seeds;
    let mut membership = vec![1.0; values.len()];
    for _ in 0..100 {
        for (u, &v) in membership.iter_mut().zip(values) {
            let d0 = (v - c0).powi(2);
            let d1 = (v - c1).powi(2);
            *u = if d0 == 0.0 && d1 == 0.0 {
                0.5
            } else if d0 == 0.0 {
                1.0
            } else if d1 == 0.0 {
                0.0
            } else {
                // m = 2: u0 = 1 / (1 + d0/d1)
                d1 / (d0 + d1)
            };
        }
        let (mut n0, mut s0, mut n1, mut s1) = (0.0, 0.0, 0.0, 0.0);
        for (&u, &v) in membership.iter().zip(values) {
            n0 += u * u;
            s0 += u * u * v;
            n1 += (1.0 - u) * (1.0 - u);
            s1 += (1.0 - u) * (1.0 - u) * v;
        }
        let next0 = if n0 > 0.0 { s0 / n0 } else { c0 };
        let next1 = if n1 > 0.0 { s1 / n1 } else { c1 };
        let moved = (next0 - c0).abs().max((next1 - c1).abs());
        c0 = next0;
        c1 = next1;
        if moved < 1e-9 {
            break;
        }
    }
    (membership, (c0, c1))
}

/// Replaces `None` entries by linear interpolation between the nearest
/// known neighbours around the circle.
fn circular_interpolate(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let n = values.len();
    let known: Vec<usize> = (0..n).filter(|&i| values[i].is_some()).collect();
    if known.is_empty() {
        return None;
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        if let Some(v) = values[i] {
            out[i] = v;
            continue;
        }
        // previous and next known index, circularly
        let next_pos = known.partition_point(|&k| k < i);
        let next = known[next_pos % known.len()];
        let prev = known[(next_pos + known.len() - 1) % known.len()];
        let gap = (next + n - prev) % n;
        let gap = if gap == 0 { n } else { gap };
        let t = ((i + n - prev) % n) as f64 / gap as f64;
        let (a, b) = (values[prev].unwrap(), values[next].unwrap());
        out[i] = a + (b - a) * t;
    }
    Some(out)
}

fn circular_moving_average(values: &[f64], width: usize) -> Vec<f64> {
    let n = values.len() as i64;
    let half = (width / 2) as i64;
    (0..n)
        .map(|c| {
            let mut acc = 0.0;
            for d in -half..=half {
                acc += values[(c + d).rem_euclid(n) as usize];
            }
            acc / (2 * half + 1) as f64
        })
        .collect()
}

fn max_adjacent_step(values: &[f64]) -> f64 {
    let n = values.len();
    (0..n)
        .map(|i| (values[(i + 1) % n] - values[i]).abs())
        .fold(0.0, f64::max)
}

/// Finds the limbic boundary in a pupil-centered polar image.
pub fn find_limbic_boundary(
    polar: &PolarImage,
    config: &SegmentationConfig,
) -> Result<LimbicBoundary, SegmentationError> {
    let rows = polar.radial_resolution();
    if rows < MIN_POLAR_ROWS {
        return Err(SegmentationError::InvalidInput(format!(
            "polar image has {rows} rows, at least {MIN_POLAR_ROWS} needed"
        )));
    }
    let candidates = edge_candidates(polar, config);
    let found = candidates.iter().filter(|c| c.is_some()).count();
    if found < MIN_BOUNDARY_COLUMNS {
        return Err(SegmentationError::BoundaryNotFound { found });
    }
    let radii: Vec<f64> = candidates.iter().map(|c| c.unwrap_or(0) as f64).collect();

    // Alternate a circle-trace fit with a fuzzy split of the residuals into
    // an inlier cluster (seeded at 0) and an outlier cluster.
    let mut weights: Vec<f64> = candidates.iter().map(|c| c.map_or(0.0, |_| 1.0)).collect();
    let mut inlier = vec![true; ANGULAR_RESOLUTION];
    for _ in 0..4 {
        let model = fit_circle_trace(&radii, &weights);
        let residuals: Vec<f64> = (0..ANGULAR_RESOLUTION)
            .filter(|&c| candidates[c].is_some())
            .map(|c| (radii[c] - model[c]).abs())
            .collect();
        let far = residuals.iter().copied().fold(0.0, f64::max);
        let (membership, _) = fuzzy_two_cluster(&residuals, (0.0, far.max(1e-9)));
        let mut next = vec![false; ANGULAR_RESOLUTION];
        let mut k = 0;
        for c in 0..ANGULAR_RESOLUTION {
            if candidates[c].is_none() {
                continue;
            }
            next[c] = membership[k] >= 0.5 || residuals[k] <= config.outlier_tolerance;
            k += 1;
        }
        let next_weights: Vec<f64> = next.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        if next == inlier && next_weights == weights {
            break;
        }
        inlier = next;
        weights = next_weights;
    }
    let kept = inlier.iter().filter(|&&b| b).count();
    if kept < MIN_BOUNDARY_COLUMNS {
        return Err(SegmentationError::BoundaryNotFound { found: kept });
    }

    let masked: Vec<Option<f64>> = (0..ANGULAR_RESOLUTION)
        .map(|c| inlier[c].then_some(radii[c]))
        .collect();
    let filled = circular_interpolate(&masked).expect("at least one inlier column");
    let mut smoothed = circular_moving_average(&filled, config.smoothing_width.max(1));
    for _ in 0..32 {
        if max_adjacent_step(&smoothed) <= MAX_ADJACENT_STEP {
            break;
        }
        smoothed = circular_moving_average(&smoothed, config.smoothing_width.max(3));
    }
    let upper = (rows - 1) as f64;
    for v in smoothed.iter_mut() {
        *v = v.clamp(1.0, upper);
    }
    Ok(LimbicBoundary::from_radii(smoothed, true))
}

// --- band extraction ---------------------------------------------------------

/// The iris band between pupil and limbic boundary, resampled to 32 rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedPolar {
    pixels: Vec<u8>,
    validity_mask: Vec<bool>,
}

impl SegmentedPolar {
    pub fn new(pixels: Vec<u8>, validity_mask: Vec<bool>) -> Result<Self, SegmentationError> {
        let n = BAND_ROWS * ANGULAR_RESOLUTION;
        if pixels.len() != n || validity_mask.len() != n {
            return Err(SegmentationError::InvalidInput(format!(
                "band must hold {BAND_ROWS}x{ANGULAR_RESOLUTION} samples"
            )));
        }
        Ok(Self {
            pixels,
            validity_mask,
        })
    }

    /// Fully valid band from a sample function `f(row, col)`.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(BAND_ROWS * ANGULAR_RESOLUTION);
        for r in 0..BAND_ROWS {
            for c in 0..ANGULAR_RESOLUTION {
                pixels.push(f(r, c));
            }
        }
        Self {
            pixels,
            validity_mask: vec![true; BAND_ROWS * ANGULAR_RESOLUTION],
        }
    }

    pub fn rows(&self) -> usize {
        BAND_ROWS
    }

    pub fn cols(&self) -> usize {
        ANGULAR_RESOLUTION
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.pixels[r * ANGULAR_RESOLUTION..(r + 1) * ANGULAR_RESOLUTION]
    }

    pub fn validity_mask(&self) -> &[bool] {
        &self.validity_mask
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * ANGULAR_RESOLUTION + col]
    }

    pub fn valid_fraction(&self) -> f64 {
        self.validity_mask.iter().filter(|&&v| v).count() as f64 / self.validity_mask.len() as f64
    }

    /// Output column `c` holds input column `c - k`.
    pub fn rotate_columns(&self, k: i64) -> Self {
        let n = ANGULAR_RESOLUTION as i64;
        let mut out = self.clone();
        for r in 0..BAND_ROWS {
            for c in 0..ANGULAR_RESOLUTION {
                let src = r * ANGULAR_RESOLUTION + (c as i64 - k).rem_euclid(n) as usize;
                out.pixels[r * ANGULAR_RESOLUTION + c] = self.pixels[src];
                out.validity_mask[r * ANGULAR_RESOLUTION + c] = self.validity_mask[src];
            }
        }
        out
    }

    pub fn to_image(&self) -> EyeImage {
        EyeImage::new(
            ANGULAR_RESOLUTION,
            BAND_ROWS,
            self.pixels.clone(),
            ImageKind::RectilinearRoi,
        )
        .expect("band dimensions are fixed")
    }

    /// Mask as an image of the same size: 255 valid, 0 invalid.
    pub fn mask_image(&self) -> EyeImage {
        EyeImage::new(
            ANGULAR_RESOLUTION,
            BAND_ROWS,
            self.validity_mask.iter().map(|&v| if v { 255 } else { 0 }).collect(),
            ImageKind::RectilinearRoi,
        )
        .expect("band dimensions are fixed")
    }
}

/// Resamples, per column, polar rows `[0, boundary)` onto 32 band rows:
/// band row `i` reads polar position `i·boundary/32`.
pub fn extract_band(
    polar: &PolarImage,
    boundary: &LimbicBoundary,
) -> Result<SegmentedPolar, SegmentationError> {
    if boundary.radius_per_column.len() != ANGULAR_RESOLUTION {
        return Err(SegmentationError::InvalidInput(format!(
            "boundary has {} columns",
            boundary.radius_per_column.len()
        )));
    }
    let rows = polar.radial_resolution();
    for (column, &radius) in boundary.radius_per_column.iter().enumerate() {
        if !(radius >= MIN_BAND_RADIUS) {
            return Err(SegmentationError::BandTooThin { column, radius });
        }
        if radius > rows as f64 {
            return Err(SegmentationError::InvalidInput(format!(
                "column {column} boundary {radius:.2} beyond {rows} polar rows"
            )));
        }
    }
    let mut pixels = vec![0u8; BAND_ROWS * ANGULAR_RESOLUTION];
    let mut valid = vec![false; BAND_ROWS * ANGULAR_RESOLUTION];
    for c in 0..ANGULAR_RESOLUTION {
        let scale = boundary.radius_per_column[c] / BAND_ROWS as f64;
        for i in 0..BAND_ROWS {
            let pos = i as f64 * scale;
            let r0 = (pos.floor() as usize).min(rows - 1);
            let frac = pos - r0 as f64;
            let (value, ok) = if frac > 0.0 && r0 + 1 < rows {
                let a = polar.get(r0, c) as f64;
                let b = polar.get(r0 + 1, c) as f64;
                (
                    a + (b - a) * frac,
                    polar.is_valid(r0, c) && polar.is_valid(r0 + 1, c),
                )
            } else {
                (polar.get(r0, c) as f64, polar.is_valid(r0, c))
            };
            pixels[i * ANGULAR_RESOLUTION + c] = value.round().clamp(0.0, 255.0) as u8;
            valid[i * ANGULAR_RESOLUTION + c] = ok;
        }
    }
    let band = SegmentedPolar {
        pixels,
        validity_mask: valid,
    };
    let fraction = band.valid_fraction();
    if fraction < 0.5 {
        return Err(SegmentationError::InsufficientValidity { fraction });
    }
    Ok(band)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disc_image(cx: f64, cy: f64, r: f64) -> EyeImage {
        EyeImage::from_fn(640, 480, ImageKind::RectilinearFull, |x, y| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if d <= r {
                0
            } else {
                128
            }
        })
        .unwrap()
    }

    fn step_polar(step_row: impl Fn(usize) -> usize) -> PolarImage {
        PolarImage::from_fn(128, |r, c| if r >= step_row(c) { 200 } else { 80 }).unwrap()
    }

    #[test]
    fn otsu_splits_two_levels() {
        let mut h = [0u64; 256];
        h[20] = 100;
        h[200] = 300;
        let t = otsu_threshold(&h, 0, 255).unwrap();
        assert!((20..200).contains(&t));
        assert_eq!(otsu_threshold(&h, 0, 20), None);
    }

    #[test]
    fn circle_fit_recovers_exact_circle() {
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.157;
                (12.0 + 7.5 * t.cos(), -3.0 + 7.5 * t.sin())
            })
            .collect();
        let (cx, cy, r) = fit_circle(&pts).unwrap();
        assert!((cx - 12.0).abs() < 1e-9 && (cy + 3.0).abs() < 1e-9 && (r - 7.5).abs() < 1e-9);
    }

    #[test]
    fn marching_squares_perimeter_of_disc() {
        let img = disc_image(100.0, 100.0, 40.0);
        let mask: Vec<bool> = img.pixels().iter().map(|&p| p == 0).collect();
        let comps = connected_components(&mask, 640, 480);
        let p = ComponentMask::new(&comps[0]).perimeter();
        // the contour of a digitized disc runs a few percent longer than
        // the true circle
        assert!(p >= 2.0 * PI * 40.0 && p < 1.08 * 2.0 * PI * 40.0, "perimeter {p}");
        let circularity = 4.0 * PI * comps[0].pixels.len() as f64 / (p * p);
        assert!(circularity > 0.85, "circularity {circularity}");
    }

    #[test]
    fn dark_disc_is_found() {
        let img = disc_image(320.0, 240.0, 40.0);
        let p = detect_pupil(&img, &SegmentationConfig::default()).unwrap();
        assert!((p.center.0 - 320.0).abs() <= 1.0);
        assert!((p.center.1 - 240.0).abs() <= 1.0);
        assert!((p.radius - 40.0).abs() <= 1.0);
        assert!(p.boundary_confidence > 0.9);
    }

    #[test]
    fn white_image_has_no_pupil() {
        let img = EyeImage::filled(640, 480, 255, ImageKind::RectilinearFull).unwrap();
        assert!(matches!(
            detect_pupil(&img, &SegmentationConfig::default()),
            Err(SegmentationError::NoPupilFound(_))
        ));
    }

    #[test]
    fn roi_images_are_rejected_by_pupil_detection() {
        let img = EyeImage::filled(80, 80, 10, ImageKind::RectilinearRoi).unwrap();
        assert!(matches!(
            detect_pupil(&img, &SegmentationConfig::default()),
            Err(SegmentationError::InvalidInput(_))
        ));
    }

    #[test]
    fn elongated_dark_bar_is_not_a_pupil() {
        let img = EyeImage::from_fn(640, 480, ImageKind::RectilinearFull, |x, y| {
            if (100..540).contains(&x) && (200..215).contains(&y) {
                0
            } else {
                128
            }
        })
        .unwrap();
        assert!(detect_pupil(&img, &SegmentationConfig::default()).is_err());
    }

    #[test]
    fn occluded_disc_center_within_three_pixels() {
        // gray band hiding the top 20% of the disc area: chord at 0.49 r
        let (cx, cy, r) = (320.0, 240.0, 40.0);
        let chord = cy - 0.4899 * r;
        let img = EyeImage::from_fn(640, 480, ImageKind::RectilinearFull, |x, y| {
            let yf = y as f64;
            if yf < chord && yf > chord - 60.0 {
                128
            } else if ((x as f64 - cx).powi(2) + (yf - cy).powi(2)).sqrt() <= r {
                0
            } else {
                128
            }
        })
        .unwrap();
        let dark = img.pixels().iter().filter(|&&p| p == 0).count() as f64;
        let hidden = 1.0 - dark / (PI * r * r);
        assert!((hidden - 0.2).abs() < 0.02, "occluded fraction {hidden}");
        let p = detect_pupil(&img, &SegmentationConfig::default()).unwrap();
        let err = ((p.center.0 - cx).powi(2) + (p.center.1 - cy).powi(2)).sqrt();
        assert!(err <= 3.0, "center error {err}");
    }

    #[test]
    fn step_field_boundary() {
        let polar = step_polar(|_| 50);
        let b = find_limbic_boundary(&polar, &SegmentationConfig::default()).unwrap();
        assert!(b.smoothed);
        assert!(b.radius_per_column.iter().all(|&r| (r - 50.0).abs() <= 1.0));
        assert!((b.mean_radius - 50.0).abs() <= 1.0);
    }

    #[test]
    fn constant_polar_has_no_boundary() {
        let polar = PolarImage::from_fn(128, |_, _| 120).unwrap();
        assert!(matches!(
            find_limbic_boundary(&polar, &SegmentationConfig::default()),
            Err(SegmentationError::BoundaryNotFound { .. })
        ));
    }

    #[test]
    fn short_polar_is_rejected() {
        let polar = PolarImage::from_fn(40, |r, _| if r > 20 { 200 } else { 50 }).unwrap();
        assert!(find_limbic_boundary(&polar, &SegmentationConfig::default()).is_err());
    }

    #[test]
    fn occlusion_columns_are_interpolated_back() {
        let polar = step_polar(|c| if (100..130).contains(&c) { 90 } else { 50 });
        let b = find_limbic_boundary(&polar, &SegmentationConfig::default()).unwrap();
        for (c, &r) in b.radius_per_column.iter().enumerate() {
            assert!((r - 50.0).abs() <= 3.0, "column {c} radius {r}");
        }
    }

    #[test]
    fn off_centre_circle_is_kept() {
        // limbus offset from the pupil centre traces a sinusoid in polar rows
        let polar = step_polar(|c| (60.0 + 12.0 * column_angle(c).cos()).round() as usize);
        let b = find_limbic_boundary(&polar, &SegmentationConfig::default()).unwrap();
        for (c, &r) in b.radius_per_column.iter().enumerate() {
            let truth = 60.0 + 12.0 * column_angle(c).cos();
            assert!((r - truth).abs() <= 1.5, "column {c}: {r} vs {truth}");
        }
    }

    #[test]
    fn pre_blur_keeps_step_location() {
        let polar = step_polar(|_| 70);
        let config = SegmentationConfig {
            polar_pre_blur: Some(1.0),
            ..Default::default()
        };
        let b = find_limbic_boundary(&polar, &config).unwrap();
        assert!(b.radius_per_column.iter().all(|&r| (r - 70.0).abs() <= 1.0));
    }

    #[test]
    fn smoothed_boundary_has_bounded_steps() {
        let polar = step_polar(|c| 40 + (c / 45) * 5);
        let b = find_limbic_boundary(&polar, &SegmentationConfig::default()).unwrap();
        assert!(max_adjacent_step(&b.radius_per_column) <= 2.0);
        assert!(b.radius_per_column.iter().all(|&r| (1.0..128.0).contains(&r)));
    }

    #[test]
    fn fuzzy_clusters_separate_outliers() {
        let mut values = vec![0.5; 300];
        values.extend(vec![30.0; 60]);
        let (u, (c0, c1)) = fuzzy_two_cluster(&values, (0.0, 30.0));
        assert!(c0 < 1.0 && c1 > 29.0);
        assert!(u[..300].iter().all(|&m| m > 0.9));
        assert!(u[300..].iter().all(|&m| m < 0.1));
    }

    #[test]
    fn unit_resampling_copies_rows() {
        let polar = PolarImage::from_fn(128, |r, c| (1 + (r * 3 + c) % 250) as u8).unwrap();
        let band = extract_band(&polar, &LimbicBoundary::constant(32.0)).unwrap();
        for r in 0..32 {
            for c in 0..360 {
                assert_eq!(band.get(r, c), polar.get(r, c));
            }
        }
        assert!(band.validity_mask().iter().all(|&v| v));
    }

    #[test]
    fn double_height_boundary_reads_every_other_row() {
        let polar = PolarImage::from_fn(128, |r, c| (1 + (r * 2 + c) % 250) as u8).unwrap();
        let band = extract_band(&polar, &LimbicBoundary::constant(64.0)).unwrap();
        for r in 0..32 {
            for c in 0..360 {
                assert_eq!(band.get(r, c), polar.get(2 * r, c));
            }
        }
    }

    #[test]
    fn zero_wedge_maps_to_mask_footprint() {
        // columns 40..80, rows >= 20 zero-filled
        let wedge = |r: usize, c: usize| (40..80).contains(&c) && r >= 20;
        let polar = PolarImage::from_fn(128, |r, c| if wedge(r, c) { 0 } else { 150 }).unwrap();
        let boundary = LimbicBoundary::constant(48.0);
        let band = extract_band(&polar, &boundary).unwrap();
        for i in 0..32 {
            let pos = i as f64 * 48.0 / 32.0;
            let (r0, frac) = (pos.floor() as usize, pos.fract());
            for c in 0..360 {
                let touched = wedge(r0, c) || (frac > 0.0 && wedge(r0 + 1, c));
                assert_eq!(band.validity_mask()[i * 360 + c], !touched, "row {i} col {c}");
            }
        }
    }

    #[test]
    fn thin_band_is_rejected() {
        let polar = step_polar(|_| 50);
        let mut radii = vec![40.0; 360];
        radii[17] = 6.0;
        assert_eq!(
            extract_band(&polar, &LimbicBoundary::from_radii(radii, true)),
            Err(SegmentationError::BandTooThin {
                column: 17,
                radius: 6.0
            })
        );
    }

    #[test]
    fn mostly_invalid_band_is_rejected() {
        let polar = PolarImage::from_fn(128, |r, _| if r > 5 { 0 } else { 100 }).unwrap();
        assert!(matches!(
            extract_band(&polar, &LimbicBoundary::constant(40.0)),
            Err(SegmentationError::InsufficientValidity { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn boundary_rotates_with_columns(k in 0i64..360, base in 30usize..90, amp in 0usize..10, phase in 0usize..360) {
            let rows = move |c: usize| base + ((amp as f64) * column_angle(c + phase).sin()).round() as usize;
            let polar = step_polar(rows);
            let config = SegmentationConfig::default();
            let b = find_limbic_boundary(&polar, &config).unwrap();
            let br = find_limbic_boundary(&polar.rotate_columns(k), &config).unwrap();
            for c in 0..360 {
                let src = (c as i64 - k).rem_euclid(360) as usize;
                prop_assert_eq!(br.radius_per_column[c], b.radius_per_column[src]);
            }
            let band = extract_band(&polar, &b).unwrap();
            let band_r = extract_band(&polar.rotate_columns(k), &br).unwrap();
            prop_assert_eq!(band.rotate_columns(k), band_r);
        }

        #[test]
        fn boundary_ignores_positive_affine_intensity(a in 0.3f64..1.2, b in 0.0f64..40.0, base in 30usize..90) {
            let polar = step_polar(|c| base + c % 3);
            let mapped = PolarImage::from_pixels(
                128,
                polar.pixels().iter().map(|&p| (a * p as f64 + b).round().clamp(0.0, 255.0) as u8).collect(),
            ).unwrap();
            let config = SegmentationConfig::default();
            let b0 = find_limbic_boundary(&polar, &config).unwrap();
            let b1 = find_limbic_boundary(&mapped, &config).unwrap();
            prop_assert_eq!(b0.radius_per_column, b1.radius_per_column);
        }

        #[test]
        fn analytic_discs_are_located(cx in 80.0f64..560.0, cy in 80.0f64..400.0, r in 15.0f64..60.0) {
            let img = disc_image(cx, cy, r);
            let p = detect_pupil(&img, &SegmentationConfig::default()).unwrap();
            prop_assert!((p.center.0 - cx).abs() <= 1.0);
            prop_assert!((p.center.1 - cy).abs() <= 1.0);
            prop_assert!((p.radius - r).abs() <= 1.0);
        }
    }
}
