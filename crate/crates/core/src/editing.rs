//! Interactive ED editing: point edits at any level, optional re-prediction of
//! the levels below, intensity sweeps and replayable edit logs.
//!
//! Under `repredict`, entries the user has set by hand are kept; only entries
//! never edited manually are overwritten by the predictor.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::alignment::Segmentation;
use crate::error::{Error, Result};
use crate::hed::{replicate, HierarchicalEd, PhonemeAlignedEd};
use crate::predictor::{EdPredictor, PredictMode};
use crate::renderer::{contour_stats, ContourStats, ProsodyRenderer, Scope};

/// Nominal per-phone duration used when a session starts from text alone.
pub const NOMINAL_PHONE_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Utterance,
    Word,
    Phoneme,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Hold,
    Repredict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditCommand {
    pub level: Level,
    /// Ignored for the utterance level.
    #[serde(default)]
    pub index: usize,
    pub emotion: String,
    pub value: f64,
    #[serde(default)]
    pub policy: Policy,
}

impl EditCommand {
    pub fn new(level: Level, index: usize, emotion: &str, value: f64) -> Self {
        Self {
            level,
            index,
            emotion: emotion.into(),
            value,
            policy: Policy::Hold,
        }
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }
}

/// A logged edit. Serialized flat: the command fields plus `timestamp_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    #[serde(default)]
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub command: EditCommand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdSource {
    PredictedFromText,
    ExtractedFromAudio,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditSession {
    source: EdSource,
    segmentation: Segmentation,
    base: HierarchicalEd,
    current: HierarchicalEd,
    log: Vec<EditRecord>,
    /// `(level, index, emotion index)` of every entry set by hand.
    manual: BTreeSet<(Level, usize, usize)>,
    #[serde(skip)]
    aligned: Option<PhonemeAlignedEd>,
    #[serde(skip)]
    predictor: Option<Arc<EdPredictor>>,
}

impl PartialEq for EditSession {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
            && self.segmentation == other.segmentation
            && self.base == other.base
            && self.current == other.current
            && self.log == other.log
            && self.manual == other.manual
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl EditSession {
    /// Start from the predictor's output for `words`, with nominal timing.
    pub fn from_text(predictor: Arc<EdPredictor>, words: &[Vec<String>]) -> Result<Self> {
        let segmentation = Segmentation::nominal(words, NOMINAL_PHONE_S)?;
        let ed = predictor.predict_text(words)?;
        let mut s = Self::new(EdSource::PredictedFromText, segmentation, ed)?;
        s.predictor = Some(predictor);
        Ok(s)
    }

    /// Start from an ED extracted from aligned audio.
    pub fn from_extracted(ed: HierarchicalEd, segmentation: Segmentation, predictor: Option<Arc<EdPredictor>>) -> Result<Self> {
        let mut s = Self::new(EdSource::ExtractedFromAudio, segmentation, ed)?;
        s.predictor = predictor;
        Ok(s)
    }

    fn new(source: EdSource, segmentation: Segmentation, ed: HierarchicalEd) -> Result<Self> {
        ed.validate(Some(&segmentation))?;
        let aligned = replicate(&ed, &segmentation)?;
        Ok(Self {
            source,
            segmentation,
            base: ed.clone(),
            current: ed,
            log: Vec::new(),
            manual: BTreeSet::new(),
            aligned: Some(aligned),
            predictor: None,
        })
    }

    /// Rebuild derived state after deserialization and optionally attach a
    /// predictor. Checks that the log reproduces the stored state.
    pub fn restore(mut self, predictor: Option<Arc<EdPredictor>>) -> Result<Self> {
        self.base.validate(Some(&self.segmentation))?;
        self.current.validate(Some(&self.segmentation))?;
        self.predictor = predictor;
        self.aligned = Some(replicate(&self.current, &self.segmentation)?);
        if self.replay()? != self.current {
            return Err(Error::Replay {
                entry: self.log.len(),
                reason: "log does not reproduce the stored state".into(),
            });
        }
        Ok(self)
    }

    pub fn attach_predictor(&mut self, predictor: Option<Arc<EdPredictor>>) {
        self.predictor = predictor;
    }

    pub fn predictor(&self) -> Option<&Arc<EdPredictor>> {
        self.predictor.as_ref()
    }

    pub fn source(&self) -> EdSource {
        self.source
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.segmentation
    }

    pub fn words(&self) -> Vec<Vec<String>> {
        self.segmentation.phone_symbols()
    }

    pub fn base(&self) -> &HierarchicalEd {
        &self.base
    }

    pub fn current(&self) -> &HierarchicalEd {
        &self.current
    }

    pub fn aligned(&self) -> &PhonemeAlignedEd {
        self.aligned.as_ref().expect("aligned ED is rebuilt on construction")
    }

    pub fn log(&self) -> &[EditRecord] {
        &self.log
    }

    pub fn is_manual(&self, level: Level, index: usize, emotion: usize) -> bool {
        self.manual.contains(&(level, index, emotion))
    }

    fn validate(&self, cmd: &EditCommand) -> Result<usize> {
        let k = self
            .current
            .emotions
            .index_of(&cmd.emotion)
            .ok_or_else(|| Error::InvalidInput(format!("unknown emotion {:?}", cmd.emotion)))?;
        if !(0.0..=1.0).contains(&cmd.value) {
            return Err(Error::Range(cmd.value));
        }
        let (_, w, p) = self.segmentation.segment_count();
        match cmd.level {
            Level::Utterance => {}
            Level::Word if cmd.index >= w => {
                return Err(Error::Index {
                    level: "word",
                    index: cmd.index,
                    len: w,
                })
            }
            Level::Phoneme if cmd.index >= p => {
                return Err(Error::Index {
                    level: "phoneme",
                    index: cmd.index,
                    len: p,
                })
            }
            _ => {}
        }
        if cmd.policy == Policy::Repredict {
            match &self.predictor {
                None => return Err(Error::Policy("repredict needs an attached predictor".into())),
                Some(p) if p.mode() != PredictMode::MultiStep => {
                    return Err(Error::Policy("repredict needs a multi-step predictor".into()))
                }
                Some(p) if p.emotions() != &self.current.emotions => {
                    return Err(Error::Policy("attached predictor uses a different emotion set".into()))
                }
                _ => {}
            }
        }
        Ok(k)
    }

    /// Apply one edit; on error the session is unchanged.
    pub fn apply_edit(&mut self, cmd: EditCommand) -> Result<()> {
        self.apply_at(cmd, now_ms())
    }

    /// Apply a logged edit, keeping its timestamp.
    pub fn apply_record(&mut self, rec: &EditRecord) -> Result<()> {
        self.apply_at(rec.command.clone(), rec.timestamp_ms)
    }

    fn apply_at(&mut self, cmd: EditCommand, timestamp_ms: u64) -> Result<()> {
        let k = self.validate(&cmd)?;
        let mut next = self.current.clone();
        let index = if cmd.level == Level::Utterance { 0 } else { cmd.index };
        match cmd.level {
            Level::Utterance => next.utterance[k] = cmd.value,
            Level::Word => next.words[index][k] = cmd.value,
            Level::Phoneme => next.phones[index][k] = cmd.value,
        }
        let mut manual = self.manual.clone();
        manual.insert((cmd.level, index, k));
        if cmd.policy == Policy::Repredict {
            let pred = self.predictor.as_ref().expect("checked in validate");
            let enc = pred.encode(&self.words())?;
            let heads = &pred.heads;
            let owners = self.segmentation.phone_owners();
            if cmd.level == Level::Utterance {
                let words = heads.predict_words(&enc, &next.utterance)?;
                for (w, row) in words.into_iter().enumerate() {
                    for (e, v) in row.into_iter().enumerate() {
                        if !manual.contains(&(Level::Word, w, e)) {
                            next.words[w][e] = v;
                        }
                    }
                }
            }
            if cmd.level != Level::Phoneme {
                let phones = heads.predict_phones(&enc, &next.words, &next.utterance)?;
                for (p, row) in phones.into_iter().enumerate() {
                    if cmd.level == Level::Word && owners[p] != index {
                        continue;
                    }
                    for (e, v) in row.into_iter().enumerate() {
                        if !manual.contains(&(Level::Phoneme, p, e)) {
                            next.phones[p][e] = v;
                        }
                    }
                }
            }
        }
        let aligned = replicate(&next, &self.segmentation)?;
        self.current = next;
        self.manual = manual;
        self.aligned = Some(aligned);
        self.log.push(EditRecord {
            timestamp_ms,
            command: cmd,
        });
        Ok(())
    }

    /// Re-apply the log to the base ED.
    pub fn replay(&self) -> Result<HierarchicalEd> {
        let mut fresh = Self {
            source: self.source,
            segmentation: self.segmentation.clone(),
            base: self.base.clone(),
            current: self.base.clone(),
            log: Vec::new(),
            manual: BTreeSet::new(),
            aligned: None,
            predictor: self.predictor.clone(),
        };
        for (i, rec) in self.log.iter().enumerate() {
            fresh
                .apply_at(rec.command.clone(), rec.timestamp_ms)
                .map_err(|e| Error::Replay {
                    entry: i,
                    reason: e.to_string(),
                })?;
        }
        Ok(fresh.current)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    pub fn from_json(text: &str, predictor: Option<Arc<EdPredictor>>) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(Error::format)?;
        s.restore(predictor)
    }
}

/// One record per line.
pub fn write_log(records: &[EditRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Parse JSON-lines; blank lines are skipped, a missing timestamp reads as 0.
pub fn parse_log(text: &str) -> Result<Vec<EditRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Replay {
                entry: i,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Edits applied together at every sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTemplate {
    pub emotion: String,
    /// `(level, index)` pairs set to the swept value.
    pub targets: Vec<(Level, usize)>,
    #[serde(default)]
    pub policy: Policy,
}

impl SweepTemplate {
    pub fn single(level: Level, index: usize, emotion: &str) -> Self {
        Self {
            emotion: emotion.into(),
            targets: vec![(level, index)],
            policy: Policy::Hold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub stats: ContourStats,
}

/// Render the session once per value with the template applied to a copy.
/// The session itself is not modified.
pub fn intensity_sweep(
    session: &EditSession,
    template: &SweepTemplate,
    values: &[f64],
    renderer: &dyn ProsodyRenderer,
    speaker: usize,
    scope: Scope,
) -> Result<Vec<SweepPoint>> {
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("sweep values must be sorted".into()));
    }
    let words = session.words();
    values
        .iter()
        .map(|&value| {
            let mut s = session.clone();
            for &(level, index) in &template.targets {
                s.apply_edit(EditCommand {
                    level,
                    index,
                    emotion: template.emotion.clone(),
                    value,
                    policy: template.policy,
                })?;
            }
            let contour = renderer.render_text(&words, s.aligned(), speaker)?;
            Ok(SweepPoint {
                value,
                stats: contour_stats(&contour, &s.segmentation, scope)?,
            })
        })
        .collect()
}
