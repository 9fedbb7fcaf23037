//! CSV manifests with `path,speaker_id,label` (and optional `session`) columns
//! pointing at WAV files or feature records.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use fedser_core::data::{Dataset, Utterance, EMOTIONS};
use fedser_core::features::{segment, FeatureConfig, LogMelExtractor};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::formats::{read_features, read_wav};

#[derive(Debug, Deserialize)]
struct Row {
    path: String,
    speaker_id: String,
    label: String,
    #[serde(default)]
    session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    /// 1-based line in the manifest, header included.
    pub line: usize,
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub loaded: usize,
    pub issues: Vec<RowIssue>,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} rows loaded", self.loaded, self.rows)?;
        for i in &self.issues {
            write!(f, "\n  line {}: {}: {}", i.line, i.path, i.reason)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ManifestOptions {
    pub features: FeatureConfig,
    /// Class vocabulary; labels may be given by name or index.
    pub classes: Vec<String>,
    /// Load the good rows even when some rows fail.
    pub permissive: bool,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            classes: EMOTIONS.iter().map(|s| s.to_string()).collect(),
            permissive: false,
        }
    }
}

/// Loads a manifest. Relative paths resolve against the manifest's directory.
/// Utterances without an explicit session form a session of their speaker.
pub fn load_manifest(path: &Path, opts: &ManifestOptions) -> Result<(Dataset, LoadReport)> {
    opts.features.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?;
    let extractor = LogMelExtractor::new(&opts.features)?;
    let vocab: BTreeMap<&str, usize> = opts
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    for (n, rec) in rdr.deserialize::<Row>().enumerate() {
        let line = n + 2;
        report.rows += 1;
        let row = match rec {
            Ok(r) => r,
            Err(e) => {
                report.issues.push(RowIssue {
                    line,
                    path: String::new(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match load_row(&row, &base, &vocab, opts, &extractor) {
            Ok(u) => samples.push(Utterance {
                id: format!("{line:06}:{}", row.path),
                ..u
            }),
            Err(reason) => report.issues.push(RowIssue {
                line,
                path: row.path.clone(),
                reason,
            }),
        }
    }
    report.loaded = samples.len();
    if report.rows == 0 {
        return Err(Error::Manifest(format!("{}: no samples", path.display())));
    }
    if !report.issues.is_empty() && !opts.permissive {
        return Err(Error::Manifest(format!("{}: {report}", path.display())));
    }
    if samples.is_empty() {
        return Err(Error::Manifest(format!(
            "{}: no samples ({report})",
            path.display()
        )));
    }
    Ok((Dataset::new(samples, opts.classes.clone())?, report))
}

fn load_row(
    row: &Row,
    base: &Path,
    vocab: &BTreeMap<&str, usize>,
    opts: &ManifestOptions,
    extractor: &LogMelExtractor,
) -> std::result::Result<Utterance, String> {
    let label = match vocab.get(row.label.to_lowercase().as_str()) {
        Some(&l) => l,
        None => match row.label.parse::<usize>() {
            Ok(i) if i < opts.classes.len() => i,
            _ => return Err(format!("unknown label `{}`", row.label)),
        },
    };
    let file: PathBuf = base.join(&row.path);
    if !file.exists() {
        return Err("missing file".into());
    }
    let is_wav = file
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let frames = if is_wav {
        let clip = read_wav(&file).map_err(|e| e.to_string())?;
        if clip.sample_rate != opts.features.sample_rate {
            return Err(format!(
                "sample rate {} Hz, expected {} Hz",
                clip.sample_rate, opts.features.sample_rate
            ));
        }
        extractor.compute(&clip).map_err(|e| e.to_string())?
    } else {
        let t = read_features(&file).map_err(|e| e.to_string())?;
        if t.mel_bins != opts.features.mel_bins {
            return Err(format!(
                "{} mel bins, expected {}",
                t.mel_bins, opts.features.mel_bins
            ));
        }
        t
    };
    let segments = segment(&frames, &opts.features).map_err(|e| e.to_string())?;
    Ok(Utterance {
        id: row.path.clone(),
        speaker: row.speaker_id.clone(),
        session: row
            .session
            .clone()
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| row.speaker_id.clone()),
        label,
        segments,
    })
}
