//! Three-level emotion distributions and their phoneme-aligned replication.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::Segmentation;
use crate::error::{Error, Result};
use crate::ranker::{EmotionSet, RankerBundle};
use crate::signal::{extract_segment_features, FrameTrack};

/// Utterance, word and phone EDs. Entries lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalEd {
    pub emotions: EmotionSet,
    pub utterance: Vec<f64>,
    pub words: Vec<Vec<f64>>,
    pub phones: Vec<Vec<f64>>,
}

impl HierarchicalEd {
    /// All-`value` ED shaped like `seg`.
    pub fn constant(emotions: EmotionSet, seg: &Segmentation, value: f64) -> Self {
        let e = emotions.len();
        let (_, w, p) = seg.segment_count();
        Self {
            emotions,
            utterance: vec![value; e],
            words: vec![vec![value; e]; w],
            phones: vec![vec![value; e]; p],
        }
    }

    pub fn n_emotions(&self) -> usize {
        self.emotions.len()
    }

    /// Check row widths, value range, and (optionally) counts against `seg`.
    pub fn validate(&self, seg: Option<&Segmentation>) -> Result<()> {
        let e = self.emotions.len();
        let rows = std::iter::once(&self.utterance).chain(&self.words).chain(&self.phones);
        for row in rows {
            if row.len() != e {
                return Err(Error::Shape(format!("ED row of width {} for {e} emotions", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Range(*v));
            }
        }
        if let Some(seg) = seg {
            let (_, w, p) = seg.segment_count();
            if self.words.len() != w || self.phones.len() != p {
                return Err(Error::Shape(format!(
                    "ED has {} words / {} phones, segmentation has {w} / {p}",
                    self.words.len(),
                    self.phones.len()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ed: Self = serde_json::from_str(&text).map_err(Error::format)?;
        ed.validate(None)?;
        Ok(ed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ED serializes")
    }
}

/// Score every segment of `seg` with every ranking model.
pub fn extract(track: &FrameTrack, seg: &Segmentation, models: &RankerBundle) -> Result<HierarchicalEd> {
    let score = |start: f64, end: f64, id: String| -> Result<Vec<f64>> {
        let feats = extract_segment_features(track, start, end).map_err(|e| match e {
            Error::EmptySegment(_) => Error::EmptySegment(id),
            other => other,
        })?;
        models.intensities(&feats)
    };
    let (u0, u1) = seg.utterance_span();
    let utterance = score(u0, u1, "utterance".into())?;
    let words = seg
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| score(w.start_s, w.end_s, format!("word {i} ({:?})", w.text)))
        .collect::<Result<Vec<_>>>()?;
    let phones = seg
        .phones()
        .iter()
        .enumerate()
        .map(|(i, p)| score(p.start_s, p.end_s, format!("phone {i} ({:?})", p.symbol)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HierarchicalEd {
        emotions: models.emotions(),
        utterance,
        words,
        phones,
    })
}

/// Column blocks of a [`PhonemeAlignedEd`] row, left to right.
pub const BLOCK_ORDER: [&str; 3] = ["utterance", "word", "phone"];

/// One row per phone: `[utterance ED | owning word ED | phone ED]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeAlignedEd {
    pub block_order: [String; 3],
    pub n_emotions: usize,
    pub matrix: Vec<Vec<f64>>,
}

impl PhonemeAlignedEd {
    pub fn n_phones(&self) -> usize {
        self.matrix.len()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.matrix[p]
    }

    pub fn utterance_block(&self, p: usize) -> &[f64] {
        &self.matrix[p][..self.n_emotions]
    }

    pub fn word_block(&self, p: usize) -> &[f64] {
        &self.matrix[p][self.n_emotions..2 * self.n_emotions]
    }

    pub fn phone_block(&self, p: usize) -> &[f64] {
        &self.matrix[p][2 * self.n_emotions..]
    }

    /// Mean of the three blocks, per emotion: the combined intensity a phone
    /// is rendered with.
    pub fn combined(&self, p: usize) -> Vec<f64> {
        let e = self.n_emotions;
        let row = &self.matrix[p];
        (0..e).map(|k| (row[k] + row[e + k] + row[2 * e + k]) / 3.0).collect()
    }
}

/// Copy the utterance ED to every phone and each word ED to its phones.
pub fn replicate(ed: &HierarchicalEd, seg: &Segmentation) -> Result<PhonemeAlignedEd> {
    let (_, w, p) = seg.segment_count();
    if ed.words.len() != w || ed.phones.len() != p {
        return Err(Error::Shape(format!(
            "ED has {} words / {} phones, segmentation has {w} / {p}",
            ed.words.len(),
            ed.phones.len()
        )));
    }
    let e = ed.n_emotions();
    let matrix = seg
        .phones()
        .iter()
        .zip(&ed.phones)
        .map(|(phone, phone_ed)| {
            let mut row = Vec::with_capacity(3 * e);
            row.extend_from_slice(&ed.utterance);
            row.extend_from_slice(&ed.words[phone.word_index]);
            row.extend_from_slice(phone_ed);
            row
        })
        .collect();
    Ok(PhonemeAlignedEd {
        block_order: BLOCK_ORDER.map(String::from),
        n_emotions: e,
        matrix,
    })
}

/// Per-level mean absolute difference, laid out like the ED-analysis table.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelMae {
    pub phonemes: f64,
    pub words: f64,
    pub utterance: f64,
    /// Unweighted mean of the three level scores.
    pub average: f64,
}

impl LevelMae {
    pub fn new(phonemes: f64, words: f64, utterance: f64) -> Self {
        Self {
            phonemes,
            words,
            utterance,
            average: (phonemes + words + utterance) / 3.0,
        }
    }

    /// Column-wise mean of several reports.
    pub fn mean_of(reports: &[LevelMae]) -> Self {
        if reports.is_empty() {
            return Self::default();
        }
        let n = reports.len() as f64;
        Self::new(
            reports.iter().map(|r| r.phonemes).sum::<f64>() / n,
            reports.iter().map(|r| r.words).sum::<f64>() / n,
            reports.iter().map(|r| r.utterance).sum::<f64>() / n,
        )
    }
}

pub fn mean_abs_diff(a: &HierarchicalEd, b: &HierarchicalEd) -> Result<LevelMae> {
    if a.emotions != b.emotions {
        return Err(Error::Shape("emotion sets differ".into()));
    }
    if a.words.len() != b.words.len() || a.phones.len() != b.phones.len() {
        return Err(Error::Shape(format!(
            "{}/{} vs {}/{} words/phones",
            a.words.len(),
            a.phones.len(),
            b.words.len(),
            b.phones.len()
        )));
    }
    let level = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (rx, ry) in x.iter().zip(y) {
            if rx.len() != ry.len() {
                return Err(Error::Shape("row widths differ".into()));
            }
            sum += rx.iter().zip(ry).map(|(p, q)| (p - q).abs()).sum::<f64>();
            count += rx.len();
        }
        Ok(if count == 0 { 0.0 } else { sum / count as f64 })
    };
    let utt = level(std::slice::from_ref(&a.utterance), std::slice::from_ref(&b.utterance))?;
    Ok(LevelMae::new(level(&a.phones, &b.phones)?, level(&a.words, &b.words)?, utt))
}
