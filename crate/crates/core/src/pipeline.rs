//! Eye image to iris code: pupil → ROI → polar → band → code.

use thiserror::Error;

use crate::encoder::{EncodeError, IrisCode, LogGaborEncoder, LogGaborParams};
use crate::iso_image::{
    crop_roi_with_origin, unwrap_polar, EyeImage, ImageError, PolarImage, PupilDescriptor,
    DEFAULT_MARGIN_FACTOR, DEFAULT_RADIAL_RESOLUTION,
};
use crate::segmentation::{
    detect_pupil, extract_band, find_limbic_boundary, LimbicBoundary, SegmentationConfig,
    SegmentationError, SegmentedPolar,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("code rejected: only {valid} of {total} bits are valid")]
    CodeRejected { valid: usize, total: usize },
}

impl PipelineError {
    /// Failures caused by the eye image content rather than by I/O or
    /// configuration; such templates are dropped from an evaluation.
    pub fn is_segmentation_failure(&self) -> bool {
        matches!(
            self,
            PipelineError::Segmentation(_)
                | PipelineError::CodeRejected { .. }
                | PipelineError::Image(ImageError::InvalidPupil(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub margin_factor: f64,
    pub radial_resolution: usize,
    pub segmentation: SegmentationConfig,
    pub log_gabor: LogGaborParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            margin_factor: DEFAULT_MARGIN_FACTOR,
            radial_resolution: DEFAULT_RADIAL_RESOLUTION,
            segmentation: SegmentationConfig::default(),
            log_gabor: LogGaborParams::default(),
        }
    }
}

/// Every intermediate of one run, for inspection and debugging output.
#[derive(Clone, Debug)]
pub struct PipelineTrace {
    pub pupil: PupilDescriptor,
    pub roi: EyeImage,
    pub polar: PolarImage,
    pub boundary: LimbicBoundary,
    pub band: SegmentedPolar,
    pub code: IrisCode,
}

/// Reusable pipeline; holds the encoder's FFT plans.
#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    encoder: LogGaborEncoder,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        let encoder = LogGaborEncoder::new(config.log_gabor)?;
        Ok(Self { config, encoder })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn trace(&self, image: &EyeImage, source_id: &str) -> Result<PipelineTrace, PipelineError> {
        let pupil = detect_pupil(image, &self.config.segmentation)?;
        let (roi, origin) = crop_roi_with_origin(image, &pupil, self.config.margin_factor)?;
        let roi_pupil = pupil.translated((origin.0 as f64, origin.1 as f64));
        let polar = unwrap_polar(&roi, &roi_pupil, self.config.radial_resolution)?;
        let boundary = find_limbic_boundary(&polar, &self.config.segmentation)?;
        let band = extract_band(&polar, &boundary)?;
        let code = self.encoder.encode(&band, source_id);
        if !code.is_accepted() {
            return Err(PipelineError::CodeRejected {
                valid: code.mask_count(),
                total: code.len(),
            });
        }
        Ok(PipelineTrace {
            pupil,
            roi,
            polar,
            boundary,
            band,
            code,
        })
    }

    pub fn encode_eye(&self, image: &EyeImage, source_id: &str) -> Result<IrisCode, PipelineError> {
        self.trace(image, source_id).map(|t| t.code)
    }
}

/// One-shot convenience over [`Pipeline::encode_eye`].
pub fn encode_eye(
    image: &EyeImage,
    source_id: &str,
    config: &PipelineConfig,
) -> Result<IrisCode, PipelineError> {
    Pipeline::new(config.clone())?.encode_eye(image, source_id)
}
