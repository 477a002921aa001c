//! Scores for every comparison of a sigset.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;

use super::{EvalError, PairId, ScoreSet};
use crate::encoder::IrisCode;
use crate::iso_image::load_image;
use crate::matcher::{hamming_similarity_shifted, identity_membership, Aggregation, DigitalIdentity, MatchConfig};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError};
use crate::sigset::{Label, SigSet, TemplateEntry};

/// How a comparison is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// One score per probe/enrollment template pair.
    #[default]
    Pairwise,
    /// One membership per probe and declared enrolled identity; all
    /// comparisons of a probe against templates of one identity collapse
    /// into a single score named after the identity.
    Identity(Aggregation),
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CollectConfig {
    pub pipeline: PipelineConfig,
    pub matching: MatchConfig,
    pub mode: ScoreMode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExcludedTemplate {
    pub template_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Collected {
    pub scores: ScoreSet,
    /// Templates whose eye image could not be segmented or encoded.
    pub excluded_templates: Vec<ExcludedTemplate>,
    /// Comparisons dropped because a side was excluded or the codes had
    /// no jointly valid bits.
    pub skipped_comparisons: usize,
}

enum Encoded {
    Code(IrisCode),
    Excluded(String),
}

fn encode_entries(
    entries: &[TemplateEntry],
    base_dir: &Path,
    pipeline: &Pipeline,
) -> Result<Vec<Encoded>, EvalError> {
    let results: Vec<Result<Encoded, EvalError>> = entries
        .par_iter()
        .map(|e| {
            let wrap = |source: PipelineError| EvalError::Template {
                template_id: e.template_id.clone(),
                source,
            };
            let image = load_image(base_dir.join(&e.path)).map_err(|err| wrap(err.into()))?;
            match pipeline.encode_eye(&image, &e.template_id) {
                Ok(code) => Ok(Encoded::Code(code)),
                Err(err) if err.is_segmentation_failure() => Ok(Encoded::Excluded(err.to_string())),
                Err(err) => Err(wrap(err)),
            }
        })
        .collect();
    // first failure in entry order, independent of scheduling
    results.into_iter().collect()
}

/// Encodes every template of `sigset` (paths relative to `base_dir`) and
/// scores every comparison.
///
/// A missing or unreadable image is an error naming its template; an
/// image that fails segmentation is excluded and its comparisons skipped.
pub fn collect_scores(sigset: &SigSet, base_dir: &Path, config: &CollectConfig) -> Result<Collected, EvalError> {
    let pipeline = Pipeline::new(config.pipeline.clone()).map_err(EvalError::Config)?;
    let enrolled = encode_entries(&sigset.enrollment_entries, base_dir, &pipeline)?;
    let probes = encode_entries(&sigset.probe_entries, base_dir, &pipeline)?;

    let mut excluded_templates = Vec::new();
    let mut index = |entries: &[TemplateEntry], encoded: Vec<Encoded>| -> HashMap<String, IrisCode> {
        let mut map = HashMap::new();
        for (e, enc) in entries.iter().zip(encoded) {
            match enc {
                Encoded::Code(c) => {
                    map.insert(e.template_id.clone(), c);
                }
                Encoded::Excluded(reason) => excluded_templates.push(ExcludedTemplate {
                    template_id: e.template_id.clone(),
                    reason,
                }),
            }
        }
        map
    };
    let enrolled_codes = index(&sigset.enrollment_entries, enrolled);
    let probe_codes = index(&sigset.probe_entries, probes);

    match config.mode {
        ScoreMode::Pairwise => score_pairs(sigset, &enrolled_codes, &probe_codes, config.matching, excluded_templates),
        ScoreMode::Identity(agg) => {
            score_identities(sigset, &enrolled_codes, &probe_codes, config.matching, agg, excluded_templates)
        }
    }
}

fn score_pairs(
    sigset: &SigSet,
    enrolled: &HashMap<String, IrisCode>,
    probes: &HashMap<String, IrisCode>,
    matching: MatchConfig,
    excluded_templates: Vec<ExcludedTemplate>,
) -> Result<Collected, EvalError> {
    let scored: Vec<Option<f64>> = sigset
        .comparisons
        .par_iter()
        .map(|c| {
            let (Some(p), Some(e)) = (probes.get(&c.probe), enrolled.get(&c.enrolled)) else {
                return None;
            };
            hamming_similarity_shifted(p, e, matching.max_shift, matching.use_masks)
                .ok()
                .map(|s| s.value)
        })
        .collect();
    let mut skipped = 0;
    let mut records = Vec::with_capacity(scored.len());
    for (c, s) in sigset.comparisons.iter().zip(scored) {
        match s {
            Some(v) => records.push((PairId::new(&c.probe, &c.enrolled), c.label, v)),
            None => skipped += 1,
        }
    }
    Ok(Collected {
        scores: ScoreSet::from_records(records)?,
        excluded_templates,
        skipped_comparisons: skipped,
    })
}

fn score_identities(
    sigset: &SigSet,
    enrolled: &HashMap<String, IrisCode>,
    probes: &HashMap<String, IrisCode>,
    matching: MatchConfig,
    aggregation: Aggregation,
    excluded_templates: Vec<ExcludedTemplate>,
) -> Result<Collected, EvalError> {
    let mut identities = BTreeMap::new();
    for (identity_id, templates) in sigset.enrollment_identities() {
        let codes: Vec<IrisCode> = templates.iter().filter_map(|t| enrolled.get(t).cloned()).collect();
        if let Ok(identity) = DigitalIdentity::new(identity_id.clone(), codes, aggregation) {
            identities.insert(identity_id, identity);
        }
    }
    let identity_of: HashMap<&str, &str> = sigset
        .enrollment_entries
        .iter()
        .map(|e| (e.template_id.as_str(), e.identity_id.as_str()))
        .collect();

    // one task per (probe, identity), label of its first comparison
    let mut tasks: Vec<(String, String, Label)> = Vec::new();
    let mut seen = HashMap::new();
    for c in &sigset.comparisons {
        let identity = identity_of[c.enrolled.as_str()];
        let key = (c.probe.clone(), identity.to_string());
        if seen.insert(key.clone(), ()).is_none() {
            tasks.push((key.0, key.1, c.label));
        }
    }
    let scored: Vec<Option<f64>> = tasks
        .par_iter()
        .map(|(probe, identity, _)| {
            let p = probes.get(probe)?;
            let id = identities.get(identity)?;
            identity_membership(p, id, matching).ok()
        })
        .collect();
    let mut skipped = 0;
    let mut records = Vec::with_capacity(tasks.len());
    for ((probe, identity, label), s) in tasks.into_iter().zip(scored) {
        match s {
            Some(v) => records.push((PairId::new(probe, identity), label, v)),
            None => skipped += 1,
        }
    }
    Ok(Collected {
        scores: ScoreSet::from_records(records)?,
        excluded_templates,
        skipped_comparisons: skipped,
    })
}
