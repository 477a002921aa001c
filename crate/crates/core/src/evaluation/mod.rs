//! Verification performance of a set of labeled similarity scores.
//!
//! A comparison is accepted iff its score is at or above the threshold:
//! `FAR(t)` is the fraction of imposter scores `>= t` and `FRR(t)` the
//! fraction of genuine scores `< t`. Standard deviations are population
//! (divide by N). All statistics are computed from sorted copies of the
//! scores so results do not depend on collection order.

mod collect;
mod report;
mod svg;

pub use collect::{collect_scores, CollectConfig, Collected, ExcludedTemplate, ScoreMode};
pub use report::{emit_report, read_scores_csv, write_scores_csv, ReportFiles};

use std::io;

use thiserror::Error;

use crate::matcher::MatchError;
use crate::pipeline::PipelineError;
use crate::sigset::Label;

/// Number of histogram bins over `[0, 1]`.
pub const HISTOGRAM_BINS: usize = 200;
/// Default FAR targets, one per decade from 1e-3 to 1e-6.
pub const DEFAULT_FAR_TARGETS: [f64; 4] = [1e-3, 1e-4, 1e-5, 1e-6];
/// Default outlier multiplier for mislabel detection.
pub const DEFAULT_MISLABEL_K: f64 = 6.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("thresholds must be strictly increasing values in [0, 1]")]
    InvalidThresholds,
    #[error("FAR target {0} outside (0, 1]")]
    InvalidTarget(f64),
    #[error("decidability undefined: both distributions have zero variance and equal means")]
    ZeroVariance,
    #[error("invalid pipeline configuration: {0}")]
    Config(#[source] PipelineError),
    #[error("template '{template_id}': {source}")]
    Template {
        template_id: String,
        #[source]
        source: PipelineError,
    },
    #[error("comparison {probe} vs {enrolled}: {source}")]
    Match {
        probe: String,
        enrolled: String,
        #[source]
        source: MatchError,
    },
    #[error("malformed score file at line {line}: {reason}")]
    MalformedScores { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// The `(probe, enrolled)` template pair a score came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairId {
    pub probe: String,
    pub enrolled: String,
}

impl PairId {
    pub fn new(probe: impl Into<String>, enrolled: impl Into<String>) -> Self {
        Self {
            probe: probe.into(),
            enrolled: enrolled.into(),
        }
    }
}

/// Genuine and imposter scores of one experiment, as declared.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    genuine: Vec<f64>,
    imposter: Vec<f64>,
    genuine_pairs: Vec<PairId>,
    imposter_pairs: Vec<PairId>,
}

fn check_range(scores: &[f64]) -> Result<(), EvalError> {
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(&bad) => Err(EvalError::ScoreOutOfRange(bad)),
        None => Ok(()),
    }
}

impl ScoreSet {
    /// Scores without pair ids; pairs are named by list position.
    pub fn new(genuine: Vec<f64>, imposter: Vec<f64>) -> Result<Self, EvalError> {
        let genuine_pairs = (0..genuine.len()).map(|i| PairId::new(format!("genuine#{i}"), "")).collect();
        let imposter_pairs = (0..imposter.len()).map(|i| PairId::new(format!("imposter#{i}"), "")).collect();
        Self::with_pairs(genuine, genuine_pairs, imposter, imposter_pairs)
    }

    pub fn with_pairs(
        genuine: Vec<f64>,
        genuine_pairs: Vec<PairId>,
        imposter: Vec<f64>,
        imposter_pairs: Vec<PairId>,
    ) -> Result<Self, EvalError> {
        check_range(&genuine)?;
        check_range(&imposter)?;
        assert_eq!(genuine.len(), genuine_pairs.len(), "one pair per genuine score");
        assert_eq!(imposter.len(), imposter_pairs.len(), "one pair per imposter score");
        Ok(Self {
            genuine,
            imposter,
            genuine_pairs,
            imposter_pairs,
        })
    }

    /// Builds a set from `(pair, declared label, score)` records.
    pub fn from_records(records: impl IntoIterator<Item = (PairId, Label, f64)>) -> Result<Self, EvalError> {
        let (mut g, mut gp, mut i, mut ip) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (pair, label, score) in records {
            match label {
                Label::Genuine => {
                    g.push(score);
                    gp.push(pair);
                }
                Label::Imposter => {
                    i.push(score);
                    ip.push(pair);
                }
            }
        }
        Self::with_pairs(g, gp, i, ip)
    }

    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    pub fn imposter(&self) -> &[f64] {
        &self.imposter
    }

    pub fn genuine_pairs(&self) -> &[PairId] {
        &self.genuine_pairs
    }

    pub fn imposter_pairs(&self) -> &[PairId] {
        &self.imposter_pairs
    }

    /// All records, genuine first, in stored order.
    pub fn records(&self) -> impl Iterator<Item = (&PairId, Label, f64)> {
        self.genuine_pairs
            .iter()
            .zip(&self.genuine)
            .map(|(p, &s)| (p, Label::Genuine, s))
            .chain(
                self.imposter_pairs
                    .iter()
                    .zip(&self.imposter)
                    .map(|(p, &s)| (p, Label::Imposter, s)),
            )
    }

    fn require_both(&self) -> Result<(), EvalError> {
        if self.genuine.is_empty() {
            return Err(EvalError::EmptyInput("no genuine scores"));
        }
        if self.imposter.is_empty() {
            return Err(EvalError::EmptyInput("no imposter scores"));
        }
        Ok(())
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sorted copies of both score lists with counting helpers.
struct SortedScores {
    genuine: Vec<f64>,
    imposter: Vec<f64>,
}

impl SortedScores {
    fn new(scores: &ScoreSet) -> Result<Self, EvalError> {
        scores.require_both()?;
        Ok(Self {
            genuine: sorted(&scores.genuine),
            imposter: sorted(&scores.imposter),
        })
    }

    /// Imposter scores at or above `t`.
    fn false_accepts(&self, t: f64) -> usize {
        self.imposter.len() - self.imposter.partition_point(|&x| x < t)
    }

    /// Genuine scores below `t`.
    fn false_rejects(&self, t: f64) -> usize {
        self.genuine.partition_point(|&x| x < t)
    }

    fn far(&self, t: f64) -> f64 {
        self.false_accepts(t) as f64 / self.imposter.len() as f64
    }

    fn frr(&self, t: f64) -> f64 {
        self.false_rejects(t) as f64 / self.genuine.len() as f64
    }

    /// Sign of FAR(t) − FRR(t), exact.
    fn far_minus_frr_sign(&self, t: f64) -> std::cmp::Ordering {
        let fa = self.false_accepts(t) as u128 * self.genuine.len() as u128;
        let fr = self.false_rejects(t) as u128 * self.imposter.len() as u128;
        fa.cmp(&fr)
    }

    fn distinct_merged(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.genuine.iter().chain(&self.imposter).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

/// Smallest float strictly above every score: the reject-all threshold.
fn above(max: f64) -> f64 {
    max.next_up()
}

// --- distribution statistics -------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    /// Counts of 200 bins of width 0.005 over `[0, 1]`; bin `i` covers
    /// `[i/200, (i+1)/200)`, the last bin also holds 1.0.
    pub histogram: Vec<u64>,
}

/// Histogram bin of a score in `[0, 1]`.
pub fn histogram_bin(score: f64) -> usize {
    ((score * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
}

pub fn stats(scores: &[f64]) -> Result<DistributionStats, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput("no scores"));
    }
    check_range(scores)?;
    let values = sorted(scores);
    let n = values.len() as f64;
    let mean = (values.iter().sum::<f64>() / n).clamp(values[0], values[values.len() - 1]);
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for &v in &values {
        histogram[histogram_bin(v)] += 1;
    }
    Ok(DistributionStats {
        mean,
        std: var.sqrt(),
        count: values.len(),
        min: values[0],
        max: values[values.len() - 1],
        histogram,
    })
}

/// d' from moments: imposter (`mean1`, `std1`), genuine (`mean2`, `std2`).
pub fn decidability_index(mean1: f64, std1: f64, mean2: f64, std2: f64) -> Result<f64, EvalError> {
    let separation = (mean1 - mean2).abs();
    let pooled = (0.5 * (std1 * std1 + std2 * std2)).sqrt();
    if pooled == 0.0 {
        if separation == 0.0 {
            return Err(EvalError::ZeroVariance);
        }
        return Ok(f64::INFINITY);
    }
    Ok(separation / pooled)
}

pub fn decidability(imposter: &DistributionStats, genuine: &DistributionStats) -> Result<f64, EvalError> {
    decidability_index(imposter.mean, imposter.std, genuine.mean, genuine.std)
}

// --- FAR / FRR ------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// FAR and FRR at each threshold.
pub fn far_frr_curves(scores: &ScoreSet, thresholds: &[f64]) -> Result<Vec<CurvePoint>, EvalError> {
    let s = SortedScores::new(scores)?;
    if thresholds.is_empty() {
        return Err(EvalError::EmptyInput("no thresholds"));
    }
    let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
    let in_range = thresholds.iter().all(|t| (0.0..=1.0).contains(t) || *t == above(1.0));
    if !increasing || !in_range {
        return Err(EvalError::InvalidThresholds);
    }
    Ok(thresholds
        .iter()
        .map(|&t| CurvePoint {
            threshold: t,
            far: s.far(t),
            frr: s.frr(t),
        })
        .collect())
}

/// `steps + 1` evenly spaced thresholds over `[0, 1]`.
pub fn threshold_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

// --- EER ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EerPoint {
    pub value: f64,
    pub threshold: f64,
}

/// Equal error rate.
///
/// FAR and FRR are evaluated at every distinct score and at the midpoint
/// between consecutive distinct scores. Where a candidate gives FAR = FRR
/// exactly, that common value is the EER and the threshold is the middle
/// of the whole score gap over which equality holds. Otherwise FAR and FRR
/// are interpolated linearly between the two candidates bracketing the
/// sign change of FAR − FRR.
pub fn eer(scores: &ScoreSet) -> Result<EerPoint, EvalError> {
    use std::cmp::Ordering::*;

    let s = SortedScores::new(scores)?;
    let distinct = s.distinct_merged();
    // (threshold, left end of the constant-rate interval it represents)
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(2 * distinct.len() + 1);
    for (i, &v) in distinct.iter().enumerate() {
        if i > 0 {
            let prev = distinct[i - 1];
            candidates.push((prev + (v - prev) / 2.0, prev));
        }
        candidates.push((v, if i > 0 { distinct[i - 1] } else { f64::NEG_INFINITY }));
    }
    let top = *distinct.last().unwrap();
    let beyond = if top < 1.0 { top + (1.0 - top) / 2.0 } else { above(top) };
    candidates.push((beyond, top));

    // FAR − FRR is non-increasing in t and positive at the lowest score
    let first = candidates
        .iter()
        .position(|&(t, _)| s.far_minus_frr_sign(t) != Greater)
        .expect("FAR - FRR is negative above every score");
    let (t_hi, left) = candidates[first];
    if s.far_minus_frr_sign(t_hi) == Equal {
        let mut last = first;
        while last + 1 < candidates.len() && s.far_minus_frr_sign(candidates[last + 1].0) == Equal {
            last += 1;
        }
        let right = candidates[last].0;
        let start = if left.is_finite() { left } else { right };
        return Ok(EerPoint {
            value: s.far(t_hi),
            threshold: (start + (right - start) / 2.0).clamp(0.0, 1.0),
        });
    }
    let (t_lo, _) = candidates[first - 1];
    let (far_lo, frr_lo) = (s.far(t_lo), s.frr(t_lo));
    let (far_hi, frr_hi) = (s.far(t_hi), s.frr(t_hi));
    let d_lo = far_lo - frr_lo;
    let d_hi = far_hi - frr_hi;
    let alpha = d_lo / (d_lo - d_hi);
    let far = far_lo + alpha * (far_hi - far_lo);
    let frr = frr_lo + alpha * (frr_hi - frr_lo);
    Ok(EerPoint {
        value: 0.5 * (far + frr),
        threshold: (t_lo + alpha * (t_hi - t_lo)).clamp(0.0, 1.0),
    })
}

// --- operating points --------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatingOutcome {
    Resolved { threshold: f64, far: f64, frr: f64 },
    /// The target lies below one false accept in the available imposter
    /// comparisons.
    Unresolvable { imposter_count: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub far_target: f64,
    pub outcome: OperatingOutcome,
}

impl OperatingPoint {
    pub fn is_resolved(&self) -> bool {
        matches!(self.outcome, OperatingOutcome::Resolved { .. })
    }
}

pub fn validate_far_target(target: f64) -> Result<(), EvalError> {
    if target > 0.0 && target <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidTarget(target))
    }
}

/// For each FAR target, the smallest threshold among 0, the distinct
/// scores and the reject-all threshold whose FAR does not exceed the
/// target, with the FRR there.
pub fn operating_points(scores: &ScoreSet, far_targets: &[f64]) -> Result<Vec<OperatingPoint>, EvalError> {
    let s = SortedScores::new(scores)?;
    let n = s.imposter.len();
    let distinct = s.distinct_merged();
    far_targets
        .iter()
        .map(|&target| {
            validate_far_target(target)?;
            if 1.0 / (n as f64) > target {
                return Ok(OperatingPoint {
                    far_target: target,
                    outcome: OperatingOutcome::Unresolvable { imposter_count: n },
                });
            }
            // largest number of tolerated false accepts
            let mut allowed = ((target * n as f64).floor() as usize).min(n);
            while allowed < n && ((allowed + 1) as f64) / (n as f64) <= target {
                allowed += 1;
            }
            while allowed > 0 && (allowed as f64) / (n as f64) > target {
                allowed -= 1;
            }
            let threshold = if allowed == n {
                0.0
            } else {
                // strictly above the (allowed + 1)-th largest imposter score
                let pivot = s.imposter[n - allowed - 1];
                let next = distinct.partition_point(|&v| v <= pivot);
                distinct.get(next).copied().unwrap_or_else(|| above(pivot))
            };
            Ok(OperatingPoint {
                far_target: target,
                outcome: OperatingOutcome::Resolved {
                    threshold,
                    far: s.far(threshold),
                    frr: s.frr(threshold),
                },
            })
        })
        .collect()
}

// --- ROC ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
}

/// (FAR, TAR) at every distinct score and above the top score, sorted by
/// FAR then TAR, duplicates removed. Runs from (0, 0) to (1, 1).
pub fn roc(scores: &ScoreSet) -> Result<Vec<RocPoint>, EvalError> {
    let s = SortedScores::new(scores)?;
    let distinct = s.distinct_merged();
    let top = *distinct.last().unwrap();
    let mut points: Vec<RocPoint> = distinct
        .iter()
        .copied()
        .chain(std::iter::once(above(top)))
        .map(|t| RocPoint {
            far: s.far(t),
            tar: 1.0 - s.frr(t),
        })
        .collect();
    points.sort_by(|a, b| a.far.total_cmp(&b.far).then(a.tar.total_cmp(&b.tar)));
    points.dedup();
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[0].tar + w[1].tar) / 2.0)
        .sum()
}

/// TAR at the largest FAR not exceeding `far`; `None` when no point
/// qualifies.
pub fn tar_at_far(points: &[RocPoint], far: f64) -> Option<f64> {
    points.iter().filter(|p| p.far <= far).map(|p| p.tar).last()
}

// --- mislabel detection --------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MislabelConfig {
    /// Outlier distance in standard deviations.
    pub k: f64,
    /// Re-estimate the moments from scores on the expected side of the
    /// class midpoint before flagging.
    pub refine: bool,
}

impl Default for MislabelConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_MISLABEL_K,
            refine: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Suspect {
    pub pair: PairId,
    pub declared: Label,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Moments {
    imposter_mean: f64,
    imposter_std: f64,
    genuine_mean: f64,
    genuine_std: f64,
}

impl Moments {
    fn midpoint(&self) -> f64 {
        (self.imposter_mean + self.genuine_mean) / 2.0
    }
}

fn moments_of(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn flag(scores: &ScoreSet, m: &Moments, k: f64) -> (Vec<bool>, Vec<bool>) {
    let mid = m.midpoint();
    let genuine = scores
        .genuine
        .iter()
        .map(|&s| s < m.genuine_mean - k * m.genuine_std && s <= mid)
        .collect();
    let imposter = scores
        .imposter
        .iter()
        .map(|&s| s > m.imposter_mean + k * m.imposter_std && s >= mid)
        .collect();
    (genuine, imposter)
}

/// Declared-imposter comparisons scoring far above the imposter
/// distribution, and declared-genuine ones far below the genuine
/// distribution, on the wrong side of the midpoint between the means.
///
/// With `refine`, the moments are first re-estimated iteratively from the
/// scores that lie on their class's side of the midpoint and are not yet
/// flagged, so a few strong mislabels cannot inflate the deviation they
/// are measured against.
pub fn detect_mislabels(
    scores: &ScoreSet,
    imposter_stats: &DistributionStats,
    genuine_stats: &DistributionStats,
    config: MislabelConfig,
) -> Vec<Suspect> {
    let mut m = Moments {
        imposter_mean: imposter_stats.mean,
        imposter_std: imposter_stats.std,
        genuine_mean: genuine_stats.mean,
        genuine_std: genuine_stats.std,
    };
    if config.refine {
        for _ in 0..32 {
            let (gf, imf) = flag(scores, &m, config.k);
            let mid = m.midpoint();
            let genuine = moments_of(
                scores.genuine.iter().zip(&gf).filter(|(&s, &f)| !f && s > mid).map(|(&s, _)| s),
            );
            let imposter = moments_of(
                scores.imposter.iter().zip(&imf).filter(|(&s, &f)| !f && s < mid).map(|(&s, _)| s),
            );
            let mut next = m;
            if let Some((mean, std)) = genuine {
                next.genuine_mean = mean;
                next.genuine_std = std;
            }
            if let Some((mean, std)) = imposter {
                next.imposter_mean = mean;
                next.imposter_std = std;
            }
            if next == m {
                break;
            }
            m = next;
        }
    }
    let (gf, imf) = flag(scores, &m, config.k);
    let mut suspects = Vec::new();
    for (i, _) in gf.iter().enumerate().filter(|(_, &f)| f) {
        suspects.push(Suspect {
            pair: scores.genuine_pairs[i].clone(),
            declared: Label::Genuine,
            score: scores.genuine[i],
        });
    }
    for (i, _) in imf.iter().enumerate().filter(|(_, &f)| f) {
        suspects.push(Suspect {
            pair: scores.imposter_pairs[i].clone(),
            declared: Label::Imposter,
            score: scores.imposter[i],
        });
    }
    suspects
}

// --- full report -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub far_targets: Vec<f64>,
    pub mislabel: MislabelConfig,
    /// Number of steps of the FAR/FRR threshold grid over `[0, 1]`.
    pub threshold_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            far_targets: DEFAULT_FAR_TARGETS.to_vec(),
            mislabel: MislabelConfig::default(),
            threshold_steps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub imposter_stats: DistributionStats,
    pub genuine_stats: DistributionStats,
    pub decidability: f64,
    pub eer: EerPoint,
    pub operating_points: Vec<OperatingPoint>,
    pub roc: Vec<RocPoint>,
    pub far_frr: Vec<CurvePoint>,
    pub min_genuine: f64,
    pub max_imposter: f64,
    pub suspected_mislabels: Vec<Suspect>,
    /// Templates dropped before matching, with the reason.
    pub excluded_templates: Vec<(String, String)>,
    pub skipped_comparisons: usize,
}

pub fn evaluate(scores: &ScoreSet, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    scores.require_both()?;
    let imposter_stats = stats(&scores.imposter)?;
    let genuine_stats = stats(&scores.genuine)?;
    let decidability = decidability(&imposter_stats, &genuine_stats)?;
    let suspected_mislabels = detect_mislabels(scores, &imposter_stats, &genuine_stats, config.mislabel);
    Ok(EvalReport {
        decidability,
        eer: eer(scores)?,
        operating_points: operating_points(scores, &config.far_targets)?,
        roc: roc(scores)?,
        far_frr: far_frr_curves(scores, &threshold_grid(config.threshold_steps.max(1)))?,
        min_genuine: genuine_stats.min,
        max_imposter: imposter_stats.max,
        suspected_mislabels,
        imposter_stats,
        genuine_stats,
        excluded_templates: Vec::new(),
        skipped_comparisons: 0,
    })
}
