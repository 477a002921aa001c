//! Image containers for the acquisition stages of the pipeline.
//!
//! An eye image moves through three roles: the full rectilinear capture,
//! a square region of interest centered on the pupil, and a pupil-centered
//! polar unwrapping of that region. The role is carried as metadata on the
//! container; no interchange record is produced.
//!
//! Pixel coordinates place pixel `(x, y)` at the integer point `(x, y)`.
//! Angles are measured from the +x axis towards +y (image rows grow
//! downwards), so angle column `a` samples direction `(cos θ, sin θ)` with
//! `θ = 2π·a/360`.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Number of angle samples in every polar image and iris code.
pub const ANGULAR_RESOLUTION: usize = 360;

/// Default number of radial rows of the unsegmented polar image.
pub const DEFAULT_RADIAL_RESOLUTION: usize = 128;

/// Default ROI half-side, in pupil radii.
pub const DEFAULT_MARGIN_FACTOR: f64 = 4.0;

const MIN_FULL_SIDE: usize = 64;
const MIN_RADIAL_RESOLUTION: usize = 32;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("invalid pupil: {0}")]
    InvalidPupil(String),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Acquisition role of a rectilinear image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ImageKind {
    /// Whole eye capture (ISO kind 1).
    RectilinearFull,
    /// Pupil-centered crop (ISO kind 48).
    RectilinearRoi,
}

impl ImageKind {
    pub fn iso_kind(self) -> u8 {
        match self {
            ImageKind::RectilinearFull => 1,
            ImageKind::RectilinearRoi => 48,
        }
    }
}

/// 8-bit grayscale rectilinear image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EyeImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    kind: ImageKind,
}

impl EyeImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        kind: ImageKind,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions(format!(
                "{width}x{height} has no pixels"
            )));
        }
        if pixels.len() != width * height {
            return Err(ImageError::InvalidDimensions(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if kind == ImageKind::RectilinearFull && (width < MIN_FULL_SIDE || height < MIN_FULL_SIDE)
        {
            return Err(ImageError::InvalidDimensions(format!(
                "full eye images must be at least {MIN_FULL_SIDE}x{MIN_FULL_SIDE}, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            kind,
        })
    }

    /// Image of constant intensity.
    pub fn filled(width: usize, height: usize, value: u8, kind: ImageKind) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height], kind)
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        kind: ImageKind,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels, kind)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> ImageKind {
        self.kind
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel value at signed coordinates, `None` outside the image.
    #[inline]
    pub fn get_checked(&self, x: i64, y: i64) -> Option<u8> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    /// Bilinear sample at a sub-pixel position.
    ///
    /// Returns `None` when any of the four taps lies outside the image; a
    /// position exactly on the last row or column is still in bounds.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x > max_x || y > max_y {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Pupil location in the coordinates of some rectilinear image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PupilDescriptor {
    pub center: (f64, f64),
    pub radius: f64,
    /// 1 for a perfect circle fit, falling towards 0 with fit residual.
    pub boundary_confidence: f64,
}

impl PupilDescriptor {
    pub fn new(center: (f64, f64), radius: f64) -> Self {
        Self {
            center,
            radius,
            boundary_confidence: 1.0,
        }
    }

    pub fn validate_for(&self, image: &EyeImage) -> Result<(), ImageError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(ImageError::InvalidPupil(format!(
                "radius {} must be positive",
                self.radius
            )));
        }
        let (cx, cy) = self.center;
        if !image.contains(cx, cy) {
            return Err(ImageError::InvalidPupil(format!(
                "center ({cx:.2}, {cy:.2}) lies outside the {}x{} image",
                image.width(),
                image.height()
            )));
        }
        if !(0.0..=1.0).contains(&self.boundary_confidence) {
            return Err(ImageError::InvalidPupil(format!(
                "boundary confidence {} outside [0, 1]",
                self.boundary_confidence
            )));
        }
        Ok(())
    }

    /// Same pupil expressed in the coordinates of a crop whose origin sits
    /// at `origin` in the current frame.
    pub fn translated(&self, origin: (f64, f64)) -> Self {
        Self {
            center: (self.center.0 - origin.0, self.center.1 - origin.1),
            ..*self
        }
    }
}

/// Pupil-centered polar image: one column per degree, row 0 on the pupil
/// boundary, radius growing with the row index.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarImage {
    radial_resolution: usize,
    pixels: Vec<u8>,
    valid: Vec<bool>,
    pupil_center: (f64, f64),
    pupil_radius: f64,
    radial_step: f64,
}

impl PolarImage {
    /// Wraps raw polar pixels. Zero-valued samples are treated as
    /// out-of-bounds fill, matching what [`unwrap_polar`] writes.
    pub fn from_pixels(radial_resolution: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        let valid = pixels.iter().map(|&p| p != 0).collect();
        Self::with_validity(radial_resolution, pixels, valid)
    }

    pub fn with_validity(
        radial_resolution: usize,
        pixels: Vec<u8>,
        valid: Vec<bool>,
    ) -> Result<Self, ImageError> {
        if radial_resolution == 0 || pixels.len() != radial_resolution * ANGULAR_RESOLUTION {
            return Err(ImageError::InvalidDimensions(format!(
                "{} pixels for a polar image of {radial_resolution} rows x {ANGULAR_RESOLUTION} columns",
                pixels.len()
            )));
        }
        if valid.len() != pixels.len() {
            return Err(ImageError::InvalidDimensions(
                "validity map and pixels differ in length".into(),
            ));
        }
        Ok(Self {
            radial_resolution,
            pixels,
            valid,
            pupil_center: (0.0, 0.0),
            pupil_radius: 1.0,
            radial_step: 1.0,
        })
    }

    pub fn from_fn(
        radial_resolution: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(radial_resolution * ANGULAR_RESOLUTION);
        for r in 0..radial_resolution {
            for a in 0..ANGULAR_RESOLUTION {
                pixels.push(f(r, a));
            }
        }
        Self::from_pixels(radial_resolution, pixels)
    }

    pub fn angular_resolution(&self) -> usize {
        ANGULAR_RESOLUTION
    }

    pub fn radial_resolution(&self) -> usize {
        self.radial_resolution
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn pupil_center(&self) -> (f64, f64) {
        self.pupil_center
    }

    pub fn pupil_radius(&self) -> f64 {
        self.pupil_radius
    }

    /// Source-image distance between consecutive rows.
    pub fn radial_step(&self) -> f64 {
        self.radial_step
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * ANGULAR_RESOLUTION + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * ANGULAR_RESOLUTION + col]
    }

    /// Column rotation: output column `c` holds input column `c - k`.
    pub fn rotate_columns(&self, k: i64) -> Self {
        let n = ANGULAR_RESOLUTION as i64;
        let mut out = self.clone();
        for r in 0..self.radial_resolution {
            for c in 0..ANGULAR_RESOLUTION {
                let src = (c as i64 - k).rem_euclid(n) as usize;
                out.pixels[r * ANGULAR_RESOLUTION + c] = self.pixels[r * ANGULAR_RESOLUTION + src];
                out.valid[r * ANGULAR_RESOLUTION + c] = self.valid[r * ANGULAR_RESOLUTION + src];
            }
        }
        out
    }

    /// The polar pixels as a rectilinear container (360 wide).
    pub fn to_image(&self) -> EyeImage {
        EyeImage {
            width: ANGULAR_RESOLUTION,
            height: self.radial_resolution,
            pixels: self.pixels.clone(),
            kind: ImageKind::RectilinearRoi,
        }
    }
}

/// Angle in radians of polar column `a`.
#[inline]
pub fn column_angle(a: usize) -> f64 {
    2.0 * PI * a as f64 / ANGULAR_RESOLUTION as f64
}

/// Square crop of side `2·margin_factor·radius` centered on the pupil.
///
/// Parts of the crop that fall outside the source are filled with 0. The
/// returned origin is the source position of the crop's pixel `(0, 0)`.
pub fn crop_roi_with_origin(
    image: &EyeImage,
    pupil: &PupilDescriptor,
    margin_factor: f64,
) -> Result<(EyeImage, (i64, i64)), ImageError> {
    pupil.validate_for(image)?;
    if !(margin_factor >= 1.0) || !margin_factor.is_finite() {
        return Err(ImageError::InvalidPupil(format!(
            "margin factor {margin_factor} must be at least 1"
        )));
    }
    let side = (2.0 * margin_factor * pupil.radius).round().max(1.0) as usize;
    let half = side as f64 / 2.0;
    let x0 = (pupil.center.0 - half).round() as i64;
    let y0 = (pupil.center.1 - half).round() as i64;
    let mut pixels = vec![0u8; side * side];
    for j in 0..side {
        let sy = y0 + j as i64;
        if sy < 0 || sy >= image.height() as i64 {
            continue;
        }
        for i in 0..side {
            if let Some(v) = image.get_checked(x0 + i as i64, sy) {
                pixels[j * side + i] = v;
            }
        }
    }
    let roi = EyeImage {
        width: side,
        height: side,
        pixels,
        kind: ImageKind::RectilinearRoi,
    };
    Ok((roi, (x0, y0)))
}

/// Square region of interest around the pupil; see [`crop_roi_with_origin`].
pub fn crop_roi(
    image: &EyeImage,
    pupil: &PupilDescriptor,
    margin_factor: f64,
) -> Result<EyeImage, ImageError> {
    crop_roi_with_origin(image, pupil, margin_factor).map(|(roi, _)| roi)
}

/// Unwraps the annulus between the pupil boundary and half the shorter
/// image side. For a crop produced by [`crop_roi`] that is the ROI edge.
pub fn unwrap_polar(
    image: &EyeImage,
    pupil: &PupilDescriptor,
    radial_resolution: usize,
) -> Result<PolarImage, ImageError> {
    let outer = image.width().min(image.height()) as f64 / 2.0;
    unwrap_polar_to(image, pupil, radial_resolution, outer)
}

/// Unwraps the annulus `[pupil.radius, outer_radius]` into
/// `radial_resolution` rows by bilinear sampling.
pub fn unwrap_polar_to(
    image: &EyeImage,
    pupil: &PupilDescriptor,
    radial_resolution: usize,
    outer_radius: f64,
) -> Result<PolarImage, ImageError> {
    pupil.validate_for(image)?;
    if radial_resolution < MIN_RADIAL_RESOLUTION {
        return Err(ImageError::InvalidDimensions(format!(
            "radial resolution {radial_resolution} is below {MIN_RADIAL_RESOLUTION}"
        )));
    }
    if !(outer_radius > pupil.radius) {
        return Err(ImageError::InvalidPupil(format!(
            "pupil radius {:.2} reaches the unwrapping edge {outer_radius:.2}",
            pupil.radius
        )));
    }
    let radial_step = (outer_radius - pupil.radius) / (radial_resolution - 1) as f64;
    let (cx, cy) = pupil.center;
    let directions: Vec<(f64, f64)> = (0..ANGULAR_RESOLUTION)
        .map(|a| {
            let theta = column_angle(a);
            (theta.cos(), theta.sin())
        })
        .collect();

    let mut pixels = Vec::with_capacity(radial_resolution * ANGULAR_RESOLUTION);
    let mut valid = Vec::with_capacity(radial_resolution * ANGULAR_RESOLUTION);
    for r in 0..radial_resolution {
        let rho = pupil.radius + r as f64 * radial_step;
        for &(dx, dy) in &directions {
            match image.sample_bilinear(cx + rho * dx, cy + rho * dy) {
                Some(v) => {
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                    valid.push(true);
                }
                None => {
                    pixels.push(0);
                    valid.push(false);
                }
            }
        }
    }
    Ok(PolarImage {
        radial_resolution,
        pixels,
        valid,
        pupil_center: pupil.center,
        pupil_radius: pupil.radius,
        radial_step,
    })
}

// --- PGM (P5) container -------------------------------------------------

/// Decodes a binary 8-bit PGM into `(width, height, pixels)`.
///
/// Header tokens may be separated by any whitespace and `#` comments; the
/// maxval must be 255 and exactly one whitespace byte precedes the raster.
pub fn decode_pgm(data: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageError> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(ImageError::MalformedImage("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = data.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::MalformedImage("truncated header".into())),
            }
        }
        let start = pos;
        while data.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::MalformedImage("expected a header number".into()));
        }
        let text = std::str::from_utf8(&data[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| ImageError::MalformedImage(format!("header value {text} out of range")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::MalformedImage(format!(
            "maxval {maxval} is not 8-bit 255"
        )));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedImage(format!("empty raster {width}x{height}")));
    }
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::MalformedImage("missing raster separator".into())),
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| ImageError::MalformedImage("raster size overflows".into()))?;
    let raster = &data[pos..];
    if raster.len() < expected {
        return Err(ImageError::MalformedImage(format!(
            "truncated payload: {} of {expected} bytes",
            raster.len()
        )));
    }
    if raster.len() > expected {
        return Err(ImageError::MalformedImage(format!(
            "{} trailing bytes after raster",
            raster.len() - expected
        )));
    }
    Ok((width, height, raster.to_vec()))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(pixels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, ImageError> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageError::FileNotFound(path.display().to_string()),
        _ => ImageError::Io(e),
    })
}

/// Loads a full eye image from a PGM file.
pub fn load_image(path: impl AsRef<Path>) -> Result<EyeImage, ImageError> {
    let bytes = read_file(path.as_ref())?;
    let (width, height, pixels) = decode_pgm(&bytes)?;
    EyeImage::new(width, height, pixels, ImageKind::RectilinearFull)
}

/// Loads any PGM raster (no minimum size) as a region-of-interest image.
pub fn load_raster(path: impl AsRef<Path>) -> Result<EyeImage, ImageError> {
    let bytes = read_file(path.as_ref())?;
    let (width, height, pixels) = decode_pgm(&bytes)?;
    EyeImage::new(width, height, pixels, ImageKind::RectilinearRoi)
}

pub fn save_image(path: impl AsRef<Path>, image: &EyeImage) -> Result<(), ImageError> {
    fs::write(path, encode_pgm(image.width, image.height, &image.pixels))?;
    Ok(())
}

pub fn save_polar(path: impl AsRef<Path>, polar: &PolarImage) -> Result<(), ImageError> {
    fs::write(
        path,
        encode_pgm(ANGULAR_RESOLUTION, polar.radial_resolution, &polar.pixels),
    )?;
    Ok(())
}
