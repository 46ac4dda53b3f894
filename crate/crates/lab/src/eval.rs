//! Scores a folder of synthesized clips against the matching references.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use prls_core::dsp::MelConfig;
use prls_core::metrics::{score_pair, Aggregate, EvalReport, PairScore};
use serde::Serialize;

use crate::config::MetricsConfig;
use crate::corpus::wav_files;
use crate::error::{Error, Result};
use crate::wav::read_wav;

/// Mel settings behind the cepstral distortion at a given sample rate.
pub fn mcd_mel_config(sample_rate: u32) -> MelConfig {
    MelConfig {
        sample_rate,
        fmax: sample_rate as f64 / 2.0,
        ..MelConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub id: String,
    pub mcd_db: f64,
    pub ffe: f64,
    pub mcd_frames: usize,
    pub f0_frames: usize,
}

impl From<&PairScore> for PairRow {
    fn from(p: &PairScore) -> Self {
        Self {
            id: p.id.clone(),
            mcd_db: p.mcd_db,
            ffe: p.ffe,
            mcd_frames: p.mcd_frames,
            f0_frames: p.f0_frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl From<Aggregate> for Summary {
    fn from(a: Aggregate) -> Self {
        Self { mean: a.mean, std: a.std }
    }
}

/// Serializable form of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub mcd_db: Summary,
    pub ffe: Summary,
    pub unmatched: Vec<String>,
    pub per_pair: Vec<PairRow>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            pairs: r.pairs.len(),
            mcd_db: r.mcd.into(),
            ffe: r.ffe.into(),
            unmatched: r.unmatched.clone(),
            per_pair: r.pairs.iter().map(PairRow::from).collect(),
        }
    }
}

fn by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(wav_files(dir)?
        .into_iter()
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect())
}

/// Pairs `<id>.wav` files across the two folders and scores each pair.
/// Ids found on only one side are listed in `unmatched`.
pub fn evaluate_dirs(reference: &Path, synthesized: &Path, metrics: &MetricsConfig) -> Result<EvalReport> {
    let refs = by_stem(reference)?;
    let syns = by_stem(synthesized)?;
    let unmatched: Vec<String> = refs
        .keys()
        .filter(|k| !syns.contains_key(*k))
        .chain(syns.keys().filter(|k| !refs.contains_key(*k)))
        .cloned()
        .collect();
    let mut pairs = Vec::new();
    for (id, ref_path) in &refs {
        let Some(syn_path) = syns.get(id) else { continue };
        let a = read_wav(ref_path)?;
        let b = read_wav(syn_path)?;
        if a.sample_rate != b.sample_rate {
            return Err(Error::Corpus(format!(
                "{id}: reference is {} Hz, synthesis is {} Hz",
                a.sample_rate, b.sample_rate
            )));
        }
        let sr = a.sample_rate;
        pairs.push(score_pair(id, &a.samples, &b.samples, &mcd_mel_config(sr), &metrics.f0_config(sr))?);
    }
    if pairs.is_empty() {
        return Err(Error::Corpus(format!(
            "no file names in common between {} and {}",
            reference.display(),
            synthesized.display()
        )));
    }
    Ok(EvalReport::from_pairs(pairs, unmatched))
}

/// Writes the summary as JSON and the per-pair rows as CSV.
pub fn write_report(report: &EvalReport, json_path: &Path, csv_path: &Path) -> Result<()> {
    let summary = EvalSummary::from(report);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))?;
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::Wav {
        path: csv_path.to_path_buf(),
        detail: e.to_string(),
    })?;
    for row in &summary.per_pair {
        w.serialize(row).map_err(|e| Error::Wav {
            path: csv_path.to_path_buf(),
            detail: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))
}
