//! Hamming similarity between iris codes and fuzzy membership of a probe
//! code to an enrolled digital identity.
//!
//! Similarity is the fraction of agreeing bits. The default mode compares
//! every bit with no rotation; masks and column shifts are opt-in.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::encoder::IrisCode;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no commonly valid bits between the compared codes")]
    EmptyOverlap,
    #[error("digital identity {0} has no codes")]
    EmptyIdentity(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityScore {
    pub value: f64,
    /// Number of agreeing bits among the compared ones.
    pub agreeing_bits: usize,
    pub compared_bits: usize,
    /// Column rotation applied to the second code (0 without shifting).
    pub shift_used: i64,
}

impl SimilarityScore {
    fn new(agreeing_bits: usize, compared_bits: usize, shift_used: i64) -> Self {
        Self {
            value: agreeing_bits as f64 / compared_bits as f64,
            agreeing_bits,
            compared_bits,
            shift_used,
        }
    }

    /// Exact comparison of the underlying ratios.
    fn beats(&self, other: &Self) -> bool {
        (self.agreeing_bits as u128) * (other.compared_bits as u128)
            > (other.agreeing_bits as u128) * (self.compared_bits as u128)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct MatchConfig {
    pub max_shift: usize,
    pub use_masks: bool,
}

// --- popcount kernels --------------------------------------------------------

#[inline]
fn xor_popcount_portable(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[inline]
fn masked_popcount_portable(a: &[u64], b: &[u64], ma: &[u64], mb: &[u64]) -> (u32, u32) {
    let mut agree = 0;
    let mut common = 0;
    for i in 0..a.len() {
        let m = ma[i] & mb[i];
        common += m.count_ones();
        agree += (!(a[i] ^ b[i]) & m).count_ones();
    }
    (agree, common)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn xor_popcount_popcnt(a: &[u64], b: &[u64]) -> u32 {
    xor_popcount_portable(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn masked_popcount_popcnt(a: &[u64], b: &[u64], ma: &[u64], mb: &[u64]) -> (u32, u32) {
    masked_popcount_portable(a, b, ma, mb)
}

/// Number of differing bits between two equally long word slices.
#[inline]
pub fn xor_popcount(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt
            return unsafe { xor_popcount_popcnt(a, b) };
        }
    }
    xor_popcount_portable(a, b)
}

/// `(agreeing, commonly valid)` bit counts under both masks.
#[inline]
pub fn masked_popcount(a: &[u64], b: &[u64], ma: &[u64], mb: &[u64]) -> (u32, u32) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("popcnt") {
            // SAFETY: the CPU supports popcnt
            return unsafe { masked_popcount_popcnt(a, b, ma, mb) };
        }
    }
    masked_popcount_portable(a, b, ma, mb)
}

// --- similarity -------------------------------------------------------------

fn check_dims(a: &IrisCode, b: &IrisCode) -> Result<(), MatchError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MatchError::DimensionMismatch(a.rows(), a.cols(), b.rows(), b.cols()));
    }
    Ok(())
}

fn similarity_unchecked(a: &IrisCode, b: &IrisCode, use_masks: bool, shift: i64) -> Result<SimilarityScore, MatchError> {
    if use_masks {
        let (agree, common) =
            masked_popcount(a.bit_words(), b.bit_words(), a.mask_words(), b.mask_words());
        if common == 0 {
            return Err(MatchError::EmptyOverlap);
        }
        Ok(SimilarityScore::new(agree as usize, common as usize, shift))
    } else {
        // padding bits are zero in both codes so they never differ
        let n = a.len();
        let differ = xor_popcount(a.bit_words(), b.bit_words()) as usize;
        Ok(SimilarityScore::new(n - differ, n, shift))
    }
}

/// Fraction of agreeing bits between `a` and `b`.
pub fn hamming_similarity(
    a: &IrisCode,
    b: &IrisCode,
    use_masks: bool,
) -> Result<SimilarityScore, MatchError> {
    check_dims(a, b)?;
    similarity_unchecked(a, b, use_masks, 0)
}

/// Shift order: 0, -1, +1, -2, +2, ...
fn shift_sequence(max_shift: usize) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=max_shift as i64).flat_map(|s| [-s, s]))
}

/// Best similarity over column rotations of `b` by `-max_shift..=max_shift`.
///
/// `shift_used` is the rotation applied to `b` (see
/// [`IrisCode::rotate_columns`]); if `b` is `a` rotated by +3 the best
/// shift is -3. Ties keep the smallest magnitude, negative first.
pub fn hamming_similarity_shifted(
    a: &IrisCode,
    b: &IrisCode,
    max_shift: usize,
    use_masks: bool,
) -> Result<SimilarityScore, MatchError> {
    check_dims(a, b)?;
    let mut best: Option<SimilarityScore> = None;
    for shift in shift_sequence(max_shift) {
        let score = if shift == 0 {
            similarity_unchecked(a, b, use_masks, 0)
        } else {
            similarity_unchecked(a, &b.rotate_columns(shift), use_masks, shift)
        };
        let score = match score {
            Ok(s) => s,
            // a rotation with no overlap can be skipped if another has one
            Err(MatchError::EmptyOverlap) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| score.beats(b)) {
            best = Some(score);
        }
    }
    best.ok_or(MatchError::EmptyOverlap)
}

// --- digital identities ----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
    /// Ordered weighted average with weights 0.5, 0.3, 0.2 over the
    /// descending scores.
    Owa,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Self::Max),
            "mean" => Ok(Self::Mean),
            "owa" => Ok(Self::Owa),
            other => Err(format!("unknown aggregation '{other}' (max, mean, owa)")),
        }
    }
}

const OWA_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

impl Aggregation {
    /// Aggregates scores; the sum runs in descending score order so the
    /// result does not depend on enrollment order.
    pub fn aggregate(self, scores: &[f64]) -> f64 {
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        match self {
            Aggregation::Max => sorted[0],
            Aggregation::Mean => sorted.iter().sum::<f64>() / sorted.len() as f64,
            Aggregation::Owa => {
                let weights = &OWA_WEIGHTS[..sorted.len().min(OWA_WEIGHTS.len())];
                let total: f64 = weights.iter().sum();
                weights.iter().zip(&sorted).map(|(w, s)| w * s).sum::<f64>() / total
            }
        }
    }
}

/// Enrolled codes of one eye, matched as a group.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitalIdentity {
    identity_id: String,
    codes: Vec<IrisCode>,
    aggregation: Aggregation,
}

impl DigitalIdentity {
    pub fn new(
        identity_id: impl Into<String>,
        codes: Vec<IrisCode>,
        aggregation: Aggregation,
    ) -> Result<Self, MatchError> {
        let identity_id = identity_id.into();
        let Some(first) = codes.first() else {
            return Err(MatchError::EmptyIdentity(identity_id));
        };
        for c in &codes[1..] {
            check_dims(first, c)?;
        }
        Ok(Self {
            identity_id,
            codes,
            aggregation,
        })
    }

    pub fn identity_id(&self) -> &str {
        &self.identity_id
    }

    pub fn codes(&self) -> &[IrisCode] {
        &self.codes
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }
}

/// Degree of membership of `probe` to `identity` in `[0, 1]`.
pub fn identity_membership(
    probe: &IrisCode,
    identity: &DigitalIdentity,
    config: MatchConfig,
) -> Result<f64, MatchError> {
    let scores = identity
        .codes
        .iter()
        .map(|c| {
            hamming_similarity_shifted(probe, c, config.max_shift, config.use_masks).map(|s| s.value)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(identity.aggregation.aggregate(&scores))
}

/// Probe × identity membership matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub probe_ids: Vec<String>,
    pub identity_ids: Vec<String>,
    /// Row-major, one row per probe.
    pub values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn get(&self, probe: usize, identity: usize) -> f64 {
        self.values[probe * self.identity_ids.len() + identity]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("probe_id");
        for id in &self.identity_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (p, probe) in self.probe_ids.iter().enumerate() {
            out.push_str(probe);
            for i in 0..self.identity_ids.len() {
                write!(out, ",{:.6}", self.get(p, i)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn cross_match_cells(
    probes: &[IrisCode],
    gallery: &[DigitalIdentity],
    config: MatchConfig,
    parallel: bool,
) -> Result<ScoreMatrix, MatchError> {
    if probes.is_empty() {
        return Err(MatchError::EmptyInput("no probes"));
    }
    if gallery.is_empty() {
        return Err(MatchError::EmptyInput("empty gallery"));
    }
    let reference = &probes[0];
    for code in probes.iter().chain(gallery.iter().flat_map(|g| g.codes.iter())) {
        check_dims(reference, code)?;
    }
    let cells = probes.len() * gallery.len();
    let cell = |i: usize| identity_membership(&probes[i / gallery.len()], &gallery[i % gallery.len()], config);
    let values = if parallel {
        (0..cells).into_par_iter().map(cell).collect::<Result<Vec<_>, _>>()?
    } else {
        (0..cells).map(cell).collect::<Result<Vec<_>, _>>()?
    };
    Ok(ScoreMatrix {
        probe_ids: probes.iter().map(|p| p.source_id().to_string()).collect(),
        identity_ids: gallery.iter().map(|g| g.identity_id.clone()).collect(),
        values,
    })
}

/// Membership of every probe to every identity, computed in parallel.
/// Each cell is an independent exact computation, so the matrix is
/// identical at any degree of parallelism.
pub fn cross_match(
    probes: &[IrisCode],
    gallery: &[DigitalIdentity],
    config: MatchConfig,
) -> Result<ScoreMatrix, MatchError> {
    cross_match_cells(probes, gallery, config, true)
}

/// Single-threaded [`cross_match`].
pub fn cross_match_serial(
    probes: &[IrisCode],
    gallery: &[DigitalIdentity],
    config: MatchConfig,
) -> Result<ScoreMatrix, MatchError> {
    cross_match_cells(probes, gallery, config, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_code(seed: u64) -> IrisCode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        IrisCode::from_fn(32, 360, format!("c{seed}"), |_, _| rng.random(), |_, _| true)
    }

    fn naive_agreement(a: &IrisCode, b: &IrisCode) -> usize {
        let mut n = 0;
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                n += (a.bit(r, c) == b.bit(r, c)) as usize;
            }
        }
        n
    }

    #[test]
    fn identity_and_complement() {
        let a = random_code(1);
        assert_eq!(hamming_similarity(&a, &a, false).unwrap().value, 1.0);
        assert_eq!(hamming_similarity(&a, &a.complement(), false).unwrap().value, 0.0);
        assert_eq!(hamming_similarity(&a, &a, false).unwrap().compared_bits, 11520);
    }

    #[test]
    fn half_agreement() {
        let a = IrisCode::from_fn(32, 360, "", |_, _| false, |_, _| true);
        let b = IrisCode::from_fn(32, 360, "", |r, _| r < 16, |_, _| true);
        let s = hamming_similarity(&a, &b, false).unwrap();
        assert_eq!(s.value, 0.5);
        assert_eq!(s.agreeing_bits, 5760);
    }

    #[test]
    fn dimension_mismatch() {
        let a = IrisCode::zeros(32, 360, "");
        let b = IrisCode::zeros(16, 360, "");
        assert_eq!(
            hamming_similarity(&a, &b, false),
            Err(MatchError::DimensionMismatch(32, 360, 16, 360))
        );
    }

    #[test]
    fn masks_restrict_comparison() {
        let a = IrisCode::from_fn(32, 360, "", |_, c| c % 2 == 0, |r, _| r < 16);
        let b = IrisCode::from_fn(32, 360, "", |r, c| r < 16 && c % 2 == 0, |r, _| r < 24);
        let s = hamming_similarity(&a, &b, true).unwrap();
        assert_eq!(s.compared_bits, 16 * 360);
        assert_eq!(s.value, 1.0);
        let unmasked = hamming_similarity(&a, &b, false).unwrap();
        assert_eq!(unmasked.compared_bits, 11520);
        assert!(unmasked.value < 1.0);
    }

    #[test]
    fn empty_overlap() {
        let a = IrisCode::from_fn(32, 360, "", |_, _| true, |r, _| r < 16);
        let b = IrisCode::from_fn(32, 360, "", |_, _| true, |r, _| r >= 16);
        assert_eq!(hamming_similarity(&a, &b, true), Err(MatchError::EmptyOverlap));
        assert_eq!(
            hamming_similarity_shifted(&a, &b, 4, true),
            Err(MatchError::EmptyOverlap)
        );
    }

    #[test]
    fn zero_shift_equals_plain_similarity() {
        let (a, b) = (random_code(3), random_code(4));
        assert_eq!(
            hamming_similarity_shifted(&a, &b, 0, false).unwrap(),
            hamming_similarity(&a, &b, false).unwrap()
        );
    }

    #[test]
    fn rotated_code_is_recovered() {
        let a = random_code(5);
        let b = a.rotate_columns(3);
        let s = hamming_similarity_shifted(&a, &b, 5, false).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.shift_used, -3);
        let c = a.rotate_columns(-2);
        assert_eq!(hamming_similarity_shifted(&a, &c, 2, false).unwrap().shift_used, 2);
    }

    #[test]
    fn shift_ties_prefer_small_negative() {
        // constant rows make every rotation equivalent
        let a = IrisCode::from_fn(32, 360, "", |r, _| r % 2 == 0, |_, _| true);
        assert_eq!(hamming_similarity_shifted(&a, &a, 6, false).unwrap().shift_used, 0);
        let b = IrisCode::from_fn(32, 360, "", |_, c| c % 2 == 0, |_, _| true);
        let c = b.complement();
        // odd shifts align b's complement with b; -1 wins over +1
        assert_eq!(hamming_similarity_shifted(&b, &c, 3, false).unwrap().shift_used, -1);
    }

    #[test]
    fn aggregations() {
        assert!((Aggregation::Mean.aggregate(&[0.9, 0.6, 0.6]) - 0.7).abs() < 1e-12);
        assert_eq!(Aggregation::Max.aggregate(&[0.2, 0.9, 0.6]), 0.9);
        let owa = Aggregation::Owa.aggregate(&[0.6, 0.9, 0.7, 0.1]);
        assert!((owa - (0.5 * 0.9 + 0.3 * 0.7 + 0.2 * 0.6)).abs() < 1e-12);
        let owa2 = Aggregation::Owa.aggregate(&[0.6, 0.8]);
        assert!((owa2 - (0.5 * 0.8 + 0.3 * 0.6) / 0.8).abs() < 1e-12);
        assert_eq!("OWA".parse::<Aggregation>().unwrap(), Aggregation::Owa);
        assert!("median".parse::<Aggregation>().is_err());
    }

    #[test]
    fn singleton_identity_equals_pair_score() {
        let (p, e) = (random_code(7), random_code(8));
        let config = MatchConfig { max_shift: 2, use_masks: false };
        for agg in [Aggregation::Max, Aggregation::Mean, Aggregation::Owa] {
            let id = DigitalIdentity::new("x", vec![e.clone()], agg).unwrap();
            assert_eq!(
                identity_membership(&p, &id, config).unwrap(),
                hamming_similarity_shifted(&p, &e, 2, false).unwrap().value
            );
        }
    }

    #[test]
    fn probe_identical_to_enrolled_code() {
        let p = random_code(10);
        let id = DigitalIdentity::new(
            "x",
            vec![random_code(11), p.clone(), random_code(12)],
            Aggregation::Max,
        )
        .unwrap();
        assert_eq!(identity_membership(&p, &id, MatchConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn empty_identity_rejected() {
        assert!(matches!(
            DigitalIdentity::new("x", vec![], Aggregation::Max),
            Err(MatchError::EmptyIdentity(_))
        ));
    }

    #[test]
    fn cross_match_diagonal_and_csv() {
        let codes: Vec<IrisCode> = (0..4).map(random_code).collect();
        let gallery: Vec<DigitalIdentity> = codes
            .iter()
            .map(|c| DigitalIdentity::new(c.source_id(), vec![c.clone()], Aggregation::Max).unwrap())
            .collect();
        let m = cross_match(&codes, &gallery, MatchConfig::default()).unwrap();
        for i in 0..4 {
            assert_eq!(m.get(i, i), 1.0);
        }
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "probe_id,c0,c1,c2,c3");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("c0,1.000000,0."));
        let single = cross_match(&codes[..1], &gallery[1..2], MatchConfig::default()).unwrap();
        assert_eq!(single.values.len(), 1);
    }

    #[test]
    fn cross_match_rejects_mixed_dimensions() {
        let probes = vec![random_code(1), IrisCode::zeros(16, 360, "s")];
        let gallery = vec![DigitalIdentity::new("g", vec![random_code(2)], Aggregation::Max).unwrap()];
        assert!(matches!(
            cross_match(&probes, &gallery, MatchConfig::default()),
            Err(MatchError::DimensionMismatch(..))
        ));
        assert!(cross_match(&[], &gallery, MatchConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_naive_loop_and_metric_laws(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            let (a, b, c) = (random_code(s1), random_code(s2), random_code(s3));
            let ab = hamming_similarity(&a, &b, false).unwrap();
            prop_assert_eq!(ab.agreeing_bits, naive_agreement(&a, &b));
            prop_assert_eq!(ab.value, naive_agreement(&a, &b) as f64 / 11520.0);
            prop_assert_eq!(ab, hamming_similarity(&b, &a, false).unwrap());
            let comp = hamming_similarity(&a, &b.complement(), false).unwrap();
            prop_assert_eq!(ab.value + comp.value, 1.0);
            let d = |x: &IrisCode, y: &IrisCode| 1.0 - hamming_similarity(x, y, false).unwrap().value;
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn shifting_never_lowers_the_score(s1 in any::<u64>(), s2 in any::<u64>(), max_shift in 0usize..6) {
            let (a, b) = (random_code(s1), random_code(s2));
            let plain = hamming_similarity(&a, &b, false).unwrap().value;
            let shifted = hamming_similarity_shifted(&a, &b, max_shift, false).unwrap();
            prop_assert!(shifted.value >= plain);
            prop_assert!(shifted.shift_used.unsigned_abs() as usize <= max_shift);
        }
    }
}
