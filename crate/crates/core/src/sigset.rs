//! Comparison plan: enrolled templates, probe templates and the
//! declared label of every comparison.
//!
//! Declared labels are authoritative. They are never recomputed from the
//! identity ids, so a wrongly enrolled template shows up as a mislabeled
//! comparison downstream instead of being silently corrected.
//!
//! File layout (UTF-8, LF, no quoting):
//!
//! ```text
//! [ENROLL]
//! template_id,identity_id,path
//! [PROBE]
//! template_id,identity_id,path
//! [COMPARE]
//! probe_template_id,enrolled_template_id,G|I
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SigSetError {
    #[error("malformed sigset at line {line}: {reason}")]
    MalformedSigSet { line: usize, reason: String },
    #[error("comparison at line {line} references unknown template '{template_id}'")]
    DanglingReference { line: usize, template_id: String },
    #[error("duplicate comparison {probe} vs {enrolled} at line {line}")]
    DuplicateComparison {
        line: usize,
        probe: String,
        enrolled: String,
    },
    #[error("sigset file not found: {0}")]
    FileNotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Genuine,
    Imposter,
}

impl Label {
    pub fn code(self) -> char {
        match self {
            Label::Genuine => 'G',
            Label::Imposter => 'I',
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Genuine => "genuine",
            Label::Imposter => "imposter",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateEntry {
    pub template_id: String,
    pub identity_id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub probe: String,
    pub enrolled: String,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SigSet {
    pub enrollment_entries: Vec<TemplateEntry>,
    pub probe_entries: Vec<TemplateEntry>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Enroll,
    Probe,
    Compare,
}

fn check_id(id: &str, line: usize, what: &str) -> Result<(), SigSetError> {
    if id.is_empty() {
        return Err(SigSetError::MalformedSigSet {
            line,
            reason: format!("empty {what}"),
        });
    }
    if id.trim() != id {
        return Err(SigSetError::MalformedSigSet {
            line,
            reason: format!("{what} '{id}' has surrounding whitespace"),
        });
    }
    Ok(())
}

impl SigSet {
    /// Parses and validates sigset text.
    pub fn parse(text: &str) -> Result<Self, SigSetError> {
        let mut set = SigSet::default();
        let mut section: Option<Section> = None;
        let mut enroll_ids: HashMap<String, usize> = HashMap::new();
        let mut probe_ids: HashMap<String, usize> = HashMap::new();
        let mut seen_pairs: BTreeSet<(String, String)> = BTreeSet::new();
        let mut seen_sections = Vec::new();

        for (index, raw) in text.split('\n').enumerate() {
            let line = index + 1;
            let content = raw.strip_suffix('\r').unwrap_or(raw);
            if content.trim().is_empty() {
                continue;
            }
            if content.starts_with('[') {
                let next = match content.trim() {
                    "[ENROLL]" => Section::Enroll,
                    "[PROBE]" => Section::Probe,
                    "[COMPARE]" => Section::Compare,
                    other => {
                        return Err(SigSetError::MalformedSigSet {
                            line,
                            reason: format!("unknown section marker {other}"),
                        })
                    }
                };
                if seen_sections.contains(&next) {
                    return Err(SigSetError::MalformedSigSet {
                        line,
                        reason: format!("repeated section {}", content.trim()),
                    });
                }
                seen_sections.push(next);
                section = Some(next);
                continue;
            }
            let fields: Vec<&str> = content.split(',').collect();
            if fields.len() != 3 {
                return Err(SigSetError::MalformedSigSet {
                    line,
                    reason: format!("expected 3 fields, found {}", fields.len()),
                });
            }
            match section {
                None => {
                    return Err(SigSetError::MalformedSigSet {
                        line,
                        reason: "row before any section marker".into(),
                    })
                }
                Some(kind @ (Section::Enroll | Section::Probe)) => {
                    check_id(fields[0], line, "template id")?;
                    check_id(fields[1], line, "identity id")?;
                    if fields[2].is_empty() {
                        return Err(SigSetError::MalformedSigSet {
                            line,
                            reason: "empty path".into(),
                        });
                    }
                    let (ids, list) = if kind == Section::Enroll {
                        (&mut enroll_ids, &mut set.enrollment_entries)
                    } else {
                        (&mut probe_ids, &mut set.probe_entries)
                    };
                    if ids.insert(fields[0].to_string(), list.len()).is_some() {
                        return Err(SigSetError::MalformedSigSet {
                            line,
                            reason: format!("duplicate template id '{}'", fields[0]),
                        });
                    }
                    list.push(TemplateEntry {
                        template_id: fields[0].to_string(),
                        identity_id: fields[1].to_string(),
                        path: PathBuf::from(fields[2]),
                    });
                }
                Some(Section::Compare) => {
                    let label = match fields[2] {
                        "G" => Label::Genuine,
                        "I" => Label::Imposter,
                        other => {
                            return Err(SigSetError::MalformedSigSet {
                                line,
                                reason: format!("label '{other}' is not G or I"),
                            })
                        }
                    };
                    if !probe_ids.contains_key(fields[0]) {
                        return Err(SigSetError::DanglingReference {
                            line,
                            template_id: fields[0].to_string(),
                        });
                    }
                    if !enroll_ids.contains_key(fields[1]) {
                        return Err(SigSetError::DanglingReference {
                            line,
                            template_id: fields[1].to_string(),
                        });
                    }
                    if !seen_pairs.insert((fields[0].to_string(), fields[1].to_string())) {
                        return Err(SigSetError::DuplicateComparison {
                            line,
                            probe: fields[0].to_string(),
                            enrolled: fields[1].to_string(),
                        });
                    }
                    set.comparisons.push(Comparison {
                        probe: fields[0].to_string(),
                        enrolled: fields[1].to_string(),
                        label,
                    });
                }
            }
        }
        Ok(set)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[ENROLL]\n");
        let row = |e: &TemplateEntry| {
            format!("{},{},{}\n", e.template_id, e.identity_id, e.path.display())
        };
        self.enrollment_entries.iter().for_each(|e| out.push_str(&row(e)));
        out.push_str("[PROBE]\n");
        self.probe_entries.iter().for_each(|e| out.push_str(&row(e)));
        out.push_str("[COMPARE]\n");
        for c in &self.comparisons {
            out.push_str(&format!("{},{},{}\n", c.probe, c.enrolled, c.label.code()));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SigSetError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn enrollment(&self, template_id: &str) -> Option<&TemplateEntry> {
        self.enrollment_entries.iter().find(|e| e.template_id == template_id)
    }

    pub fn probe(&self, template_id: &str) -> Option<&TemplateEntry> {
        self.probe_entries.iter().find(|e| e.template_id == template_id)
    }

    /// Enrollment template ids grouped by declared identity, in entry order.
    pub fn enrollment_identities(&self) -> BTreeMap<String, Vec<String>> {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in &self.enrollment_entries {
            groups
                .entry(e.identity_id.clone())
                .or_default()
                .push(e.template_id.clone());
        }
        groups
    }
}

/// Reads and validates a sigset file.
pub fn parse_sigset(path: impl AsRef<Path>) -> Result<SigSet, SigSetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => SigSetError::FileNotFound(path.display().to_string()),
        _ => SigSetError::Io(e),
    })?;
    SigSet::parse(&text)
}

/// Declared label of every comparison, keyed by `(probe, enrolled)`.
pub fn derive_labels(sigset: &SigSet) -> BTreeMap<(String, String), Label> {
    sigset
        .comparisons
        .iter()
        .map(|c| ((c.probe.clone(), c.enrolled.clone()), c.label))
        .collect()
}
