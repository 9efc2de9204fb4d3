//! Utterance / word / phone segmentation.
//!
//! Two readers are provided: Praat long-form TextGrids with `words` and
//! `phones` interval tiers (the forced aligner's usual output), and the native
//! alignment JSON, which is also what [`Segmentation`] serializes to.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed overhang of a phone past its word's edges, and the slack used when
/// assigning phones to words by midpoint.
pub const NESTING_TOLERANCE_S: f64 = 0.010;
const ORDER_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Phone {
    pub symbol: String,
    pub start_s: f64,
    pub end_s: f64,
    pub word_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub phone_range: Range<usize>,
}

/// A validated three-level segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlignmentDoc", into = "AlignmentDoc")]
pub struct Segmentation {
    utterance_span: (f64, f64),
    words: Vec<Word>,
    phones: Vec<Phone>,
}

/// Word description used to build a [`Segmentation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSpec {
    pub text: String,
    pub start: f64,
    pub end: f64,
    pub phones: Vec<PhoneSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneSpec {
    pub symbol: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

/// Native alignment JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDoc {
    pub utterance: Span,
    pub words: Vec<WordSpec>,
}

impl TryFrom<AlignmentDoc> for Segmentation {
    type Error = Error;

    fn try_from(doc: AlignmentDoc) -> Result<Self> {
        Segmentation::from_words((doc.utterance.start, doc.utterance.end), doc.words)
    }
}

impl From<Segmentation> for AlignmentDoc {
    fn from(seg: Segmentation) -> Self {
        seg.to_doc()
    }
}

impl Segmentation {
    pub fn from_words(utterance_span: (f64, f64), words: Vec<WordSpec>) -> Result<Self> {
        let mut out_words = Vec::with_capacity(words.len());
        let mut phones = Vec::new();
        for (wi, w) in words.into_iter().enumerate() {
            let first = phones.len();
            for p in w.phones {
                phones.push(Phone {
                    symbol: p.symbol,
                    start_s: p.start,
                    end_s: p.end,
                    word_index: wi,
                });
            }
            out_words.push(Word {
                text: w.text,
                start_s: w.start,
                end_s: w.end,
                phone_range: first..phones.len(),
            });
        }
        Self::new(utterance_span, out_words, phones)
    }

    /// Validate and assemble.
    pub fn new(utterance_span: (f64, f64), words: Vec<Word>, phones: Vec<Phone>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidSegmentation(msg));
        if words.is_empty() {
            return bad("utterance must contain at least one word".into());
        }
        let (u0, u1) = utterance_span;
        if !(u0.is_finite() && u1.is_finite() && u0 < u1) {
            return bad(format!("bad utterance span [{u0}, {u1}]"));
        }
        let mut expected_start = 0;
        for (wi, w) in words.iter().enumerate() {
            if !(w.start_s.is_finite() && w.end_s.is_finite() && w.start_s < w.end_s) {
                return bad(format!("word {wi} has bad bounds"));
            }
            if wi > 0 && w.start_s < words[wi - 1].end_s - ORDER_EPS {
                return bad(format!("word {wi} overlaps or precedes word {}", wi - 1));
            }
            if w.phone_range.is_empty() {
                return bad(format!("word {wi} ({:?}) has no phones", w.text));
            }
            if w.phone_range.start != expected_start {
                return bad(format!("word {wi} phone range is not contiguous"));
            }
            expected_start = w.phone_range.end;
            for pi in w.phone_range.clone() {
                let Some(p) = phones.get(pi) else {
                    return bad(format!("word {wi} references missing phone {pi}"));
                };
                if p.word_index != wi {
                    return bad(format!("phone {pi} claims word {} but sits in word {wi}", p.word_index));
                }
                if p.start_s < w.start_s - NESTING_TOLERANCE_S - ORDER_EPS
                    || p.end_s > w.end_s + NESTING_TOLERANCE_S + ORDER_EPS
                {
                    return bad(format!("phone {pi} ({:?}) sticks out of word {wi}", p.symbol));
                }
            }
        }
        if expected_start != phones.len() {
            return bad("some phones belong to no word".into());
        }
        for (pi, p) in phones.iter().enumerate() {
            if !(p.start_s.is_finite() && p.end_s.is_finite() && p.start_s < p.end_s) {
                return bad(format!("phone {pi} has bad bounds"));
            }
            if pi > 0 && p.start_s < phones[pi - 1].end_s - ORDER_EPS {
                return bad(format!("phone {pi} overlaps or precedes phone {}", pi - 1));
            }
        }
        if u0 > words[0].start_s + ORDER_EPS || u1 < words[words.len() - 1].end_s - ORDER_EPS {
            return bad("utterance span does not cover all words".into());
        }
        Ok(Self {
            utterance_span,
            words,
            phones,
        })
    }

    /// Uniformly timed segmentation for text-only input: every phone lasts
    /// `phone_s` seconds and words follow each other without pauses.
    pub fn nominal(words: &[Vec<String>], phone_s: f64) -> Result<Self> {
        let mut t = 0.0;
        let specs = words
            .iter()
            .enumerate()
            .map(|(wi, phones)| {
                let start = t;
                let phones = phones
                    .iter()
                    .map(|s| {
                        let p = PhoneSpec {
                            symbol: s.clone(),
                            start: t,
                            end: t + phone_s,
                        };
                        t += phone_s;
                        p
                    })
                    .collect();
                WordSpec {
                    text: format!("w{wi}"),
                    start,
                    end: t.max(start + phone_s),
                    phones,
                }
            })
            .collect();
        Self::from_words((0.0, t.max(phone_s)), specs)
    }

    pub fn utterance_span(&self) -> (f64, f64) {
        self.utterance_span
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn phones(&self) -> &[Phone] {
        &self.phones
    }

    /// `(1, n_words, n_phones)`
    pub fn segment_count(&self) -> (usize, usize, usize) {
        (1, self.words.len(), self.phones.len())
    }

    /// Phone symbols grouped by word.
    pub fn phone_symbols(&self) -> Vec<Vec<String>> {
        self.words
            .iter()
            .map(|w| self.phones[w.phone_range.clone()].iter().map(|p| p.symbol.clone()).collect())
            .collect()
    }

    /// Owning word of every phone.
    pub fn phone_owners(&self) -> Vec<usize> {
        self.phones.iter().map(|p| p.word_index).collect()
    }

    /// Same segmentation moved by `offset_s` seconds.
    pub fn shifted(&self, offset_s: f64) -> Result<Self> {
        let mut doc = self.to_doc();
        doc.utterance.start += offset_s;
        doc.utterance.end += offset_s;
        for w in &mut doc.words {
            w.start += offset_s;
            w.end += offset_s;
            for p in &mut w.phones {
                p.start += offset_s;
                p.end += offset_s;
            }
        }
        doc.try_into()
    }

    pub fn to_doc(&self) -> AlignmentDoc {
        AlignmentDoc {
            utterance: Span {
                start: self.utterance_span.0,
                end: self.utterance_span.1,
            },
            words: self
                .words
                .iter()
                .map(|w| WordSpec {
                    text: w.text.clone(),
                    start: w.start_s,
                    end: w.end_s,
                    phones: self.phones[w.phone_range.clone()]
                        .iter()
                        .map(|p| PhoneSpec {
                            symbol: p.symbol.clone(),
                            start: p.start_s,
                            end: p.end_s,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub fn parse_alignment_json(path: impl AsRef<Path>) -> Result<Segmentation> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    alignment_from_json_str(&text)
}

pub fn alignment_from_json_str(text: &str) -> Result<Segmentation> {
    let doc: AlignmentDoc = serde_json::from_str(text).map_err(Error::format)?;
    doc.try_into()
}

pub fn emit_alignment_json(seg: &Segmentation) -> String {
    serde_json::to_string_pretty(&seg.to_doc()).expect("alignment serializes")
}

/// Labels treated as non-linguistic and dropped from both tiers.
pub fn is_silence(label: &str) -> bool {
    let l = label.trim();
    l.is_empty() || l.eq_ignore_ascii_case("sil") || l.eq_ignore_ascii_case("sp")
}

#[derive(Debug, Default)]
struct Interval {
    xmin: Option<f64>,
    xmax: Option<f64>,
    text: Option<String>,
}

#[derive(Debug, Default)]
struct Tier {
    name: String,
    intervals: Vec<(f64, f64, String)>,
}

pub fn parse_textgrid(path: impl AsRef<Path>) -> Result<Segmentation> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    textgrid_from_str(&text)
}

/// Parse a long-form TextGrid.
pub fn textgrid_from_str(text: &str) -> Result<Segmentation> {
    let tiers = read_tiers(text)?;
    let tier = |name: &str| {
        tiers
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(format!("TextGrid has no {name:?} tier")))
    };
    let words_tier = tier("words")?;
    let phones_tier = tier("phones")?;

    let words: Vec<&(f64, f64, String)> =
        words_tier.intervals.iter().filter(|iv| !is_silence(&iv.2)).collect();
    let phones: Vec<&(f64, f64, String)> =
        phones_tier.intervals.iter().filter(|iv| !is_silence(&iv.2)).collect();
    if words.is_empty() {
        return Err(Error::InvalidSegmentation("no non-silent words".into()));
    }

    let mut buckets: Vec<Vec<PhoneSpec>> = vec![Vec::new(); words.len()];
    for &&(start, end, ref symbol) in &phones {
        let mid = 0.5 * (start + end);
        let strict = words.iter().position(|w| w.0 <= mid && mid < w.1);
        let owner = strict.or_else(|| {
            words
                .iter()
                .enumerate()
                .filter(|(_, w)| w.0 - NESTING_TOLERANCE_S <= mid && mid < w.1 + NESTING_TOLERANCE_S)
                .min_by(|a, b| {
                    let da = (0.5 * (a.1 .0 + a.1 .1) - mid).abs();
                    let db = (0.5 * (b.1 .0 + b.1 .1) - mid).abs();
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
        });
        let Some(owner) = owner else {
            return Err(Error::OrphanPhone {
                symbol: symbol.trim().to_string(),
                mid_s: mid,
            });
        };
        buckets[owner].push(PhoneSpec {
            symbol: symbol.trim().to_string(),
            start,
            end,
        });
    }
    let specs: Vec<WordSpec> = words
        .iter()
        .zip(buckets)
        .map(|(w, phones)| WordSpec {
            text: w.2.trim().to_string(),
            start: w.0,
            end: w.1,
            phones,
        })
        .collect();
    let span = (specs[0].start, specs[specs.len() - 1].end);
    Segmentation::from_words(span, specs)
}

fn read_tiers(text: &str) -> Result<Vec<Tier>> {
    let mut tiers: Vec<Tier> = Vec::new();
    let mut current: Option<Tier> = None;
    let mut interval: Option<Interval> = None;

    fn flush_interval(tier: &mut Option<Tier>, iv: &mut Option<Interval>) -> Result<()> {
        if let (Some(t), Some(i)) = (tier.as_mut(), iv.take()) {
            match (i.xmin, i.xmax, i.text) {
                (Some(a), Some(b), Some(s)) => t.intervals.push((a, b, s)),
                _ => return Err(Error::format(format!("incomplete interval in tier {:?}", t.name))),
            }
        }
        Ok(())
    }

    for raw in text.lines() {
        let line = raw.trim();
        if line.starts_with("item [") && line.ends_with(':') && !line.starts_with("item []") {
            flush_interval(&mut current, &mut interval)?;
            if let Some(t) = current.take() {
                tiers.push(t);
            }
            current = Some(Tier::default());
            continue;
        }
        if line.starts_with("intervals [") {
            flush_interval(&mut current, &mut interval)?;
            interval = Some(Interval::default());
            continue;
        }
        if line.starts_with("points [") {
            // point tiers carry no intervals
            flush_interval(&mut current, &mut interval)?;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        match (key, interval.as_mut(), current.as_mut()) {
            ("xmin", Some(iv), _) => iv.xmin = Some(parse_number(value)?),
            ("xmax", Some(iv), _) => iv.xmax = Some(parse_number(value)?),
            ("text", Some(iv), _) => iv.text = Some(parse_string(value)?),
            ("name", None, Some(t)) => t.name = parse_string(value)?,
            _ => {}
        }
    }
    flush_interval(&mut current, &mut interval)?;
    if let Some(t) = current.take() {
        tiers.push(t);
    }
    Ok(tiers)
}

fn parse_number(v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::format(format!("bad number {v:?}")))
}

fn parse_string(v: &str) -> Result<String> {
    let v = v.trim();
    if v.len() < 2 || !v.starts_with('"') || !v.ends_with('"') {
        return Err(Error::format(format!("bad string literal {v}")));
    }
    Ok(v[1..v.len() - 1].replace("\"\"", "\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(words: &[(f64, f64, &str)], phones: &[(f64, f64, &str)], with_phones: bool) -> String {
        let mut s = String::from(
            "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\nxmin = 0\nxmax = 1\ntiers? <exists>\nsize = 2\nitem []:\n",
        );
        let mut tier = |idx: usize, name: &str, ivs: &[(f64, f64, &str)]| {
            s.push_str(&format!(
                "    item [{idx}]:\n        class = \"IntervalTier\"\n        name = \"{name}\"\n        xmin = 0\n        xmax = 1\n        intervals: size = {}\n",
                ivs.len()
            ));
            for (k, (a, b, t)) in ivs.iter().enumerate() {
                s.push_str(&format!(
                    "        intervals [{}]:\n            xmin = {a}\n            xmax = {b}\n            text = \"{t}\"\n",
                    k + 1
                ));
            }
        };
        tier(1, "words", words);
        if with_phones {
            tier(2, "phones", phones);
        }
        s
    }

    #[test]
    fn single_word_textgrid() {
        let g = grid(&[(0.0, 0.4, "hi")], &[(0.0, 0.2, "HH"), (0.2, 0.4, "AY")], true);
        let seg = textgrid_from_str(&g).unwrap();
        assert_eq!(seg.words().len(), 1);
        assert_eq!(seg.phones().len(), 2);
        assert_eq!(seg.words()[0].phone_range, 0..2);
        assert_eq!(seg.segment_count(), (1, 1, 2));
    }

    #[test]
    fn missing_phone_tier() {
        let g = grid(&[(0.0, 0.4, "hi")], &[], false);
        assert!(matches!(textgrid_from_str(&g), Err(Error::Format(_))));
    }

    #[test]
    fn overhang_within_tolerance() {
        let g = grid(
            &[(0.1, 0.4, "hi"), (0.4, 0.7, "there")],
            &[(0.095, 0.25, "HH"), (0.25, 0.405, "AY"), (0.405, 0.7, "DH")],
            true,
        );
        let seg = textgrid_from_str(&g).unwrap();
        assert_eq!(seg.words()[0].phone_range, 0..2);
        assert_eq!(seg.words()[1].phone_range, 2..3);
    }

    #[test]
    fn silences_dropped() {
        let g = grid(
            &[(0.0, 0.1, ""), (0.1, 0.4, "hi"), (0.4, 0.5, "sil")],
            &[(0.0, 0.1, "sil"), (0.1, 0.25, "HH"), (0.25, 0.4, "AY"), (0.4, 0.5, "sp")],
            true,
        );
        let seg = textgrid_from_str(&g).unwrap();
        assert_eq!(seg.segment_count(), (1, 1, 2));
        assert_eq!(seg.utterance_span(), (0.1, 0.4));
    }

    #[test]
    fn orphan_phone() {
        let g = grid(&[(0.0, 0.2, "hi")], &[(0.0, 0.2, "HH"), (0.5, 0.6, "AY")], true);
        assert!(matches!(textgrid_from_str(&g), Err(Error::OrphanPhone { .. })));
    }

    #[test]
    fn json_round_trip() {
        let doc = r#"{"utterance": {"start": 0.0, "end": 0.9},
            "words": [
              {"text": "hi", "start": 0.05, "end": 0.4,
               "phones": [{"symbol": "HH", "start": 0.05, "end": 0.2}, {"symbol": "AY", "start": 0.2, "end": 0.4}]},
              {"text": "you", "start": 0.45, "end": 0.85,
               "phones": [{"symbol": "Y", "start": 0.45, "end": 0.6}, {"symbol": "UW", "start": 0.6, "end": 0.85}]}
            ]}"#;
        let seg = alignment_from_json_str(doc).unwrap();
        let again = alignment_from_json_str(&emit_alignment_json(&seg)).unwrap();
        assert_eq!(seg, again);
        assert_eq!(seg.phone_owners(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn json_rejections() {
        let out_of_order = r#"{"utterance": {"start": 0.0, "end": 1.0}, "words": [
            {"text": "b", "start": 0.5, "end": 0.9, "phones": [{"symbol": "B", "start": 0.5, "end": 0.9}]},
            {"text": "a", "start": 0.0, "end": 0.4, "phones": [{"symbol": "A", "start": 0.0, "end": 0.4}]}]}"#;
        assert!(matches!(
            alignment_from_json_str(out_of_order),
            Err(Error::InvalidSegmentation(_))
        ));
        let empty = r#"{"utterance": {"start": 0.0, "end": 1.0}, "words": []}"#;
        assert!(matches!(alignment_from_json_str(empty), Err(Error::InvalidSegmentation(_))));
    }

    #[test]
    fn counts_for_three_words() {
        let words: Vec<Vec<String>> = (0..3).map(|_| vec!["A".into(), "B".into()]).collect();
        let seg = Segmentation::nominal(&words, 0.1).unwrap();
        assert_eq!(seg.segment_count(), (1, 3, 6));
        let total: usize = seg.words().iter().map(|w| w.phone_range.len()).sum();
        assert_eq!(total, seg.phones().len());
    }
}
