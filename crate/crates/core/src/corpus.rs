//! Seeded synthetic corpora with known ED → prosody rules.
//!
//! Every item carries a sampled three-level ED and a contour computed from it
//! by [`RuleRenderer`]: for each phone, each emotion's rule is scaled by that
//! phone's combined intensity (mean of its utterance, word and phone values)
//! and added to a base contour. Audio, when requested, is a three-harmonic
//! tone following the contour.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{PhoneSpec, Segmentation, WordSpec};
use crate::error::{Error, Result};
use crate::hed::{replicate, HierarchicalEd, PhonemeAlignedEd};
use crate::predictor::EdExample;
use crate::ranker::{EmotionSet, LabeledFeatures, NEUTRAL};
use crate::renderer::{PhoneProsody, ProsodyContour, ProsodyRenderer, RenderExample};
use crate::signal::{
    analyze, extract_segment_features, quantize_sample, read_wav, write_wav, AudioClip, FrameTrack, DEFAULT_FRAME_S,
    DEFAULT_HOP_S, DEFAULT_SAMPLE_RATE,
};

/// Additive effect of full intensity of one emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionRule {
    pub emotion: String,
    pub d_pitch: f64,
    pub d_energy: f64,
    pub d_log_duration: f64,
}

impl EmotionRule {
    pub fn new(emotion: &str, d_pitch: f64, d_energy: f64, d_log_duration: f64) -> Self {
        Self {
            emotion: emotion.into(),
            d_pitch,
            d_energy,
            d_log_duration,
        }
    }
}

pub fn default_rules() -> Vec<EmotionRule> {
    vec![
        EmotionRule::new("Angry", 0.05, 0.60, 0.0),
        EmotionRule::new("Happy", 0.30, 0.25, -0.25),
        EmotionRule::new("Sad", -0.25, -0.45, 0.40),
        EmotionRule::new("Surprise", 0.40, 0.10, 0.25),
    ]
}

/// Neutral prosody of one phone symbol, relative to the corpus base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneBase {
    pub symbol: String,
    pub pitch_offset: f64,
    pub energy_offset: f64,
    pub duration_s: f64,
}

pub fn default_inventory() -> Vec<PhoneBase> {
    let vowels = ["AA", "AE", "AH", "EH", "IH", "IY", "OW", "UW"];
    let consonants = ["B", "D", "G", "K", "L", "M", "N", "P", "R", "S", "T", "Z"];
    let mut out: Vec<PhoneBase> = vowels
        .iter()
        .enumerate()
        .map(|(i, s)| PhoneBase {
            symbol: s.to_string(),
            pitch_offset: 0.02 * (i % 3) as f64,
            energy_offset: 0.2,
            duration_s: 0.11 + 0.005 * i as f64,
        })
        .collect();
    out.extend(consonants.iter().enumerate().map(|(i, s)| PhoneBase {
        symbol: s.to_string(),
        pitch_offset: -0.03,
        energy_offset: -0.3 + 0.02 * (i % 4) as f64,
        duration_s: 0.06 + 0.004 * i as f64,
    }));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_items: usize,
    pub emotions: EmotionSet,
    pub rules: Vec<EmotionRule>,
    pub inventory: Vec<PhoneBase>,
    /// Inclusive range of phones per lexicon word.
    pub word_phones: (usize, usize),
    /// Inclusive range of words per item.
    pub words_per_item: (usize, usize),
    pub lexicon_size: usize,
    pub n_speakers: usize,
    pub base_pitch_log_hz: f64,
    pub base_energy_log: f64,
    /// Half-width of the uniform jitter around each word's expected ED.
    pub word_spread: f64,
    /// Half-width of the uniform jitter of phone EDs around their word's.
    pub phone_spread: f64,
    /// Share of items whose utterance ED is drawn independently per emotion
    /// instead of around a single dominant emotion. Their label is the
    /// strongest emotion, or `Neutral` if none reaches 0.5.
    pub mixed_fraction: f64,
    pub synth_audio: bool,
    pub sample_rate: u32,
    /// Silence before and after the utterance.
    pub pad_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_items: 100,
            emotions: EmotionSet::default(),
            rules: default_rules(),
            inventory: default_inventory(),
            word_phones: (1, 4),
            words_per_item: (3, 6),
            lexicon_size: 40,
            n_speakers: 4,
            base_pitch_log_hz: 150f64.ln(),
            base_energy_log: 0.1f64.ln(),
            word_spread: 0.15,
            phone_spread: 0.25,
            mixed_fraction: 0.5,
            synth_audio: false,
            sample_rate: DEFAULT_SAMPLE_RATE,
            pad_s: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_items == 0 {
            return bad("n_items must be >= 1");
        }
        if self.inventory.is_empty() {
            return bad("phoneme inventory is empty");
        }
        if self.inventory.iter().any(|p| !(p.duration_s > 0.0 && p.duration_s.is_finite())) {
            return bad("phone durations must be positive");
        }
        if self
            .inventory
            .iter()
            .any(|p| !p.pitch_offset.is_finite() || !p.energy_offset.is_finite())
        {
            return bad("phone offsets must be finite");
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.rules {
            if self.emotions.index_of(&r.emotion).is_none() {
                return Err(Error::Config(format!("rule for unknown emotion {:?}", r.emotion)));
            }
            if !seen.insert(&r.emotion) {
                return Err(Error::Config(format!("duplicate rule for {:?}", r.emotion)));
            }
            if ![r.d_pitch, r.d_energy, r.d_log_duration].iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("rule for {:?} is not finite", r.emotion)));
            }
        }
        let (a, b) = self.word_phones;
        let (c, d) = self.words_per_item;
        if a == 0 || a > b || c == 0 || c > d {
            return bad("length ranges must satisfy 1 <= min <= max");
        }
        if self.lexicon_size == 0 || self.n_speakers == 0 || self.sample_rate == 0 {
            return bad("lexicon size, speaker count and sample rate must be positive");
        }
        if !(self.base_pitch_log_hz.is_finite() && self.base_energy_log.is_finite()) {
            return bad("base contour must be finite");
        }
        if !(0.0..=0.5).contains(&self.word_spread) || !(0.0..=0.5).contains(&self.phone_spread) {
            return bad("ED spreads must lie in [0, 0.5]");
        }
        if !(0.0..=1.0).contains(&self.mixed_fraction) {
            return bad("mixed_fraction must lie in [0, 1]");
        }
        if !(self.pad_s >= 0.0 && self.pad_s.is_finite()) {
            return bad("pad_s must be >= 0");
        }
        Ok(())
    }

    /// Per-emotion `(d_pitch, d_energy, d_log_duration)`, zero where no rule.
    pub fn rule_table(&self) -> Vec<[f64; 3]> {
        self.emotions
            .labels()
            .iter()
            .map(|e| {
                self.rules
                    .iter()
                    .find(|r| &r.emotion == e)
                    .map_or([0.0; 3], |r| [r.d_pitch, r.d_energy, r.d_log_duration])
            })
            .collect()
    }

    /// `(pitch, energy)` offsets of a speaker.
    pub fn speaker_offset(&self, speaker: usize) -> Result<(f64, f64)> {
        if speaker >= self.n_speakers {
            return Err(Error::UnknownSpeaker(speaker));
        }
        let centred = speaker as f64 - (self.n_speakers as f64 - 1.0) / 2.0;
        let energy = if speaker.is_multiple_of(2) { 0.05 } else { -0.05 };
        Ok((0.08 * centred, energy))
    }

    pub fn phone_symbols(&self) -> Vec<String> {
        self.inventory.iter().map(|p| p.symbol.clone()).collect()
    }
}

/// Exact ED → contour rule of a [`SynthSpec`]. Unknown symbols get the base
/// contour with a 0.1 s duration.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleRenderer {
    spec: SynthSpec,
    bases: BTreeMap<String, PhoneBase>,
    rules: Vec<[f64; 3]>,
}

impl RuleRenderer {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let bases = spec.inventory.iter().map(|p| (p.symbol.clone(), p.clone())).collect();
        let rules = spec.rule_table();
        Ok(Self { spec, bases, rules })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }
}

impl ProsodyRenderer for RuleRenderer {
    fn render_text(&self, words: &[Vec<String>], aligned: &PhonemeAlignedEd, speaker: usize) -> Result<ProsodyContour> {
        let symbols: Vec<&String> = words.iter().flatten().collect();
        if symbols.len() != aligned.n_phones() {
            return Err(Error::Shape(format!(
                "{} aligned ED rows for {} phones",
                aligned.n_phones(),
                symbols.len()
            )));
        }
        if aligned.n_emotions != self.rules.len() {
            return Err(Error::Shape(format!(
                "aligned ED has {} emotions, rules cover {}",
                aligned.n_emotions,
                self.rules.len()
            )));
        }
        let (spk_pitch, spk_energy) = self.spec.speaker_offset(speaker)?;
        let mut phones = Vec::with_capacity(symbols.len());
        for (p, sym) in symbols.iter().enumerate() {
            let (dp, de, dd) = self
                .bases
                .get(sym.as_str())
                .map_or((0.0, 0.0, 0.1), |b| (b.pitch_offset, b.energy_offset, b.duration_s));
            let mut pitch = self.spec.base_pitch_log_hz + spk_pitch + dp;
            let mut energy = self.spec.base_energy_log + spk_energy + de;
            let mut log_dur = dd.ln();
            for (c, r) in aligned.combined(p).iter().zip(&self.rules) {
                pitch += r[0] * c;
                energy += r[1] * c;
                log_dur += r[2] * c;
            }
            phones.push(PhoneProsody {
                phone: sym.to_string(),
                pitch_log_hz: pitch,
                energy_log: energy,
                duration_s: log_dur.exp(),
            });
        }
        ProsodyContour::new(phones, DEFAULT_HOP_S)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    /// Categorical label (`Neutral` or one of the emotions).
    pub label: String,
    pub speaker: usize,
    pub segmentation: Segmentation,
    pub ed: HierarchicalEd,
    pub contour: ProsodyContour,
    pub audio: Option<AudioClip>,
}

impl CorpusItem {
    pub fn text(&self) -> Vec<Vec<String>> {
        self.segmentation.phone_symbols()
    }

    /// Acoustic frames: analysed audio if present, else the expanded contour
    /// shifted to the segmentation's start.
    pub fn frame_track(&self) -> Result<FrameTrack> {
        match &self.audio {
            Some(clip) => analyze(clip, DEFAULT_FRAME_S, DEFAULT_HOP_S),
            None => {
                let mut track = self.contour.to_frame_track();
                let lead = (self.segmentation.utterance_span().0 / track.hop_s).round() as usize;
                track.f0.splice(0..0, std::iter::repeat_n(0.0, lead));
                track.energy.splice(0..0, std::iter::repeat_n(0.0, lead));
                Ok(track)
            }
        }
    }

    pub fn ed_example(&self) -> EdExample {
        EdExample {
            words: self.text(),
            ed: self.ed.clone(),
        }
    }

    pub fn render_example(&self) -> RenderExample {
        RenderExample {
            segmentation: self.segmentation.clone(),
            ed: self.ed.clone(),
            target: self.contour.clone(),
            speaker: self.speaker,
        }
    }
}

#[derive(Debug, Clone)]
struct LexWord {
    phones: Vec<String>,
    /// 0 = neutral, k = emotion k-1.
    affiliation: usize,
    profile: Vec<f64>,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn build_lexicon(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<LexWord> {
    let e = spec.emotions.len();
    (0..spec.lexicon_size)
        .map(|i| {
            let n = rng.random_range(spec.word_phones.0..=spec.word_phones.1);
            let phones = (0..n)
                .map(|_| spec.inventory[rng.random_range(0..spec.inventory.len())].symbol.clone())
                .collect();
            let affiliation = i % (e + 1);
            let profile = (0..e)
                .map(|k| {
                    let centre = if affiliation == k + 1 { 0.85 } else { 0.1 };
                    clamp01(centre + rng.random_range(-0.05..=0.05))
                })
                .collect();
            LexWord {
                phones,
                affiliation,
                profile,
            }
        })
        .collect()
}

/// Deterministic corpus for `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<CorpusItem>> {
    let renderer = RuleRenderer::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = build_lexicon(spec, &mut rng);
    let e = spec.emotions.len();
    let jitter = |rng: &mut ChaCha8Rng, half: f64| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let mut items = Vec::with_capacity(spec.n_items);
    for idx in 0..spec.n_items {
        let (class, utterance) = if rng.random_bool(spec.mixed_fraction) {
            let u: Vec<f64> = (0..e).map(|_| rng.random_range(0.0..=1.0)).collect();
            let (top, max) = u
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            (if max >= 0.5 { top + 1 } else { 0 }, u)
        } else {
            let class = rng.random_range(0..=e);
            let u = (0..e)
                .map(|k| {
                    if class == k + 1 {
                        rng.random_range(0.6..=1.0)
                    } else {
                        rng.random_range(0.0..=0.25)
                    }
                })
                .collect();
            (class, u)
        };
        let label = if class == 0 {
            NEUTRAL.to_string()
        } else {
            spec.emotions.labels()[class - 1].clone()
        };
        let affiliated: Vec<usize> = (0..lexicon.len()).filter(|&i| lexicon[i].affiliation == class).collect();
        let n_words = rng.random_range(spec.words_per_item.0..=spec.words_per_item.1);
        let chosen: Vec<usize> = (0..n_words)
            .map(|_| {
                if !affiliated.is_empty() && rng.random_bool(0.5) {
                    affiliated[rng.random_range(0..affiliated.len())]
                } else {
                    rng.random_range(0..lexicon.len())
                }
            })
            .collect();
        let mut words = Vec::with_capacity(n_words);
        let mut phones = Vec::new();
        for &li in &chosen {
            let w: Vec<f64> = (0..e)
                .map(|k| clamp01(0.6 * utterance[k] + 0.4 * lexicon[li].profile[k] + jitter(&mut rng, spec.word_spread)))
                .collect();
            for _ in &lexicon[li].phones {
                phones.push((0..e).map(|k| clamp01(w[k] + jitter(&mut rng, spec.phone_spread))).collect::<Vec<f64>>());
            }
            words.push(w);
        }
        let speaker = rng.random_range(0..spec.n_speakers);
        let ed = HierarchicalEd {
            emotions: spec.emotions.clone(),
            utterance,
            words,
            phones,
        };
        let text: Vec<Vec<String>> = chosen.iter().map(|&li| lexicon[li].phones.clone()).collect();
        let nominal = Segmentation::nominal(&text, 0.1)?;
        let contour = renderer.render_text(&text, &replicate(&ed, &nominal)?, speaker)?;
        let segmentation = timed_segmentation(&chosen, &text, &contour, spec.pad_s)?;
        let audio = spec.synth_audio.then(|| synth_tone(&contour, spec.sample_rate, spec.pad_s));
        items.push(CorpusItem {
            id: format!("{idx:04}"),
            label,
            speaker,
            segmentation,
            ed,
            contour,
            audio,
        });
    }
    Ok(items)
}

fn timed_segmentation(lex_ids: &[usize], text: &[Vec<String>], contour: &ProsodyContour, pad_s: f64) -> Result<Segmentation> {
    let mut t = pad_s;
    let mut p = 0;
    let mut specs = Vec::with_capacity(text.len());
    for (li, phones) in lex_ids.iter().zip(text) {
        let start = t;
        let phones = phones
            .iter()
            .map(|sym| {
                let s = t;
                t += contour.phones()[p].duration_s;
                p += 1;
                PhoneSpec {
                    symbol: sym.clone(),
                    start: s,
                    end: t,
                }
            })
            .collect();
        specs.push(WordSpec {
            text: format!("w{li:02}"),
            start,
            end: t,
            phones,
        });
    }
    Segmentation::from_words((pad_s, t), specs)
}

/// Three-harmonic tone with continuous phase, one segment per phone, whose
/// RMS follows `exp(energy_log)`. Samples sit on the 16-bit grid.
pub fn synth_tone(contour: &ProsodyContour, sample_rate: u32, pad_s: f64) -> AudioClip {
    let sr = sample_rate as f64;
    let pad = (pad_s * sr).round() as usize;
    let harmonics = [1.0, 0.5, 0.25];
    let rms_unit = (harmonics.iter().map(|a: &f64| a * a).sum::<f64>() / 2.0).sqrt();
    let mut samples = vec![0.0; pad];
    let mut phase = 0.0;
    let mut t = 0.0;
    let mut emitted = 0usize;
    for p in contour.phones() {
        t += p.duration_s;
        let end = (t * sr).round() as usize;
        let f0 = p.pitch_log_hz.exp();
        let amp = p.energy_log.exp() / rms_unit;
        while emitted < end {
            phase += 2.0 * PI * f0 / sr;
            let s: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(h, a)| a * ((h + 1) as f64 * phase).sin())
                .sum();
            samples.push(quantize_sample(amp * s) as f64 / 32768.0);
            emitted += 1;
        }
        phase %= 2.0 * PI;
    }
    samples.extend(std::iter::repeat_n(0.0, pad));
    AudioClip::new(samples, sample_rate)
}

/// Utterance-level ranker training data: one labelled feature vector per item.
pub fn utterance_features(items: &[CorpusItem]) -> Result<Vec<LabeledFeatures>> {
    items
        .iter()
        .map(|it| {
            let track = it.frame_track()?;
            let (a, b) = it.segmentation.utterance_span();
            Ok(LabeledFeatures {
                label: it.label.clone(),
                features: extract_segment_features(&track, a, b)?,
            })
        })
        .collect()
}

/// A generated or loaded corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: Option<SynthSpec>,
    pub items: Vec<CorpusItem>,
}

impl Corpus {
    pub fn generate(spec: SynthSpec) -> Result<Self> {
        let items = generate(&spec)?;
        Ok(Self { spec: Some(spec), items })
    }
}

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: Option<u64>,
    n_items: usize,
    ids: Vec<String>,
    spec: Option<SynthSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ItemDoc {
    id: String,
    label: String,
    speaker: usize,
    text: Vec<Vec<String>>,
    segmentation: Segmentation,
    ed: HierarchicalEd,
    contour: ProsodyContour,
    has_audio: bool,
    #[serde(default)]
    sample_rate: Option<u32>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `corpus` under `dir` as `manifest.json` plus `items/NNNN.json` and
/// optional `items/NNNN.wav`.
pub fn save(dir: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let dir = dir.as_ref();
    let items_dir = dir.join("items");
    fs::create_dir_all(&items_dir).map_err(|e| Error::io(&items_dir, e))?;
    for it in &corpus.items {
        let doc = ItemDoc {
            id: it.id.clone(),
            label: it.label.clone(),
            speaker: it.speaker,
            text: it.text(),
            segmentation: it.segmentation.clone(),
            ed: it.ed.clone(),
            contour: it.contour.clone(),
            has_audio: it.audio.is_some(),
            sample_rate: it.audio.as_ref().map(|a| a.sample_rate),
        };
        let json = serde_json::to_string_pretty(&doc).map_err(Error::format)?;
        write_file(&items_dir.join(format!("{}.json", it.id)), &json)?;
        if let Some(clip) = &it.audio {
            write_wav(items_dir.join(format!("{}.wav", it.id)), clip)?;
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        seed: corpus.spec.as_ref().map(|s| s.seed),
        n_items: corpus.items.len(),
        ids: corpus.items.iter().map(|i| i.id.clone()).collect(),
        spec: corpus.spec.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(Error::format)?;
    write_file(&dir.join("manifest.json"), &json)
}

pub fn load(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(Error::format)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported corpus version {}", manifest.version)));
    }
    if manifest.ids.len() != manifest.n_items {
        return Err(Error::Format("manifest item count does not match its id list".into()));
    }
    let mut items = Vec::with_capacity(manifest.n_items);
    for id in &manifest.ids {
        let path = dir.join("items").join(format!("{id}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: ItemDoc = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if &doc.id != id {
            return Err(Error::Format(format!("{}: id {:?} does not match manifest", path.display(), doc.id)));
        }
        if doc.text != doc.segmentation.phone_symbols() {
            return Err(Error::Format(format!("{}: text disagrees with segmentation", path.display())));
        }
        doc.ed.validate(Some(&doc.segmentation))?;
        if doc.contour.len() != doc.segmentation.phones().len() {
            return Err(Error::Format(format!("{}: contour length mismatch", path.display())));
        }
        let audio = if doc.has_audio {
            Some(read_wav(dir.join("items").join(format!("{id}.wav")))?)
        } else {
            None
        };
        items.push(CorpusItem {
            id: doc.id,
            label: doc.label,
            speaker: doc.speaker,
            segmentation: doc.segmentation,
            ed: doc.ed,
            contour: doc.contour,
            audio,
        });
    }
    Ok(Corpus {
        spec: manifest.spec,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, n: usize) -> SynthSpec {
        SynthSpec {
            seed,
            n_items: n,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate(&small(3, 5)).unwrap(), generate(&small(3, 5)).unwrap());
        assert_ne!(generate(&small(3, 5)).unwrap(), generate(&small(4, 5)).unwrap());
    }

    #[test]
    fn shapes_and_ranges_consistent() {
        for it in generate(&small(1, 30)).unwrap() {
            it.ed.validate(Some(&it.segmentation)).unwrap();
            assert_eq!(it.contour.len(), it.segmentation.phones().len());
            for (p, c) in it.segmentation.phones().iter().zip(it.contour.phones()) {
                assert!((p.end_s - p.start_s - c.duration_s).abs() < 1e-9);
                assert_eq!(p.symbol, c.phone);
            }
        }
    }

    #[test]
    fn zero_rules_give_base_contour() {
        let spec = SynthSpec {
            rules: vec![],
            n_items: 1,
            ..Default::default()
        };
        let it = &generate(&spec).unwrap()[0];
        let (sp, se) = spec.speaker_offset(it.speaker).unwrap();
        for c in it.contour.phones() {
            let base = spec.inventory.iter().find(|b| b.symbol == c.phone).unwrap();
            assert!((c.pitch_log_hz - (spec.base_pitch_log_hz + sp + base.pitch_offset)).abs() < 1e-12);
            assert!((c.energy_log - (spec.base_energy_log + se + base.energy_offset)).abs() < 1e-12);
            assert!((c.duration_s - base.duration_s).abs() < 1e-12);
        }
    }

    #[test]
    fn sad_duration_ratio() {
        let spec = SynthSpec {
            rules: vec![EmotionRule::new("Sad", 0.0, 0.0, 0.3)],
            ..Default::default()
        };
        let r = RuleRenderer::new(spec).unwrap();
        let words = vec![vec!["AA".to_string(), "K".to_string()]];
        let seg = Segmentation::nominal(&words, 0.1).unwrap();
        let mut ed = HierarchicalEd::constant(EmotionSet::default(), &seg, 0.0);
        let off = r.render_text(&words, &replicate(&ed, &seg).unwrap(), 0).unwrap();
        let sad = 2;
        ed.utterance[sad] = 1.0;
        ed.words[0][sad] = 1.0;
        ed.phones.iter_mut().for_each(|p| p[sad] = 1.0);
        let on = r.render_text(&words, &replicate(&ed, &seg).unwrap(), 0).unwrap();
        for (a, b) in off.phones().iter().zip(on.phones()) {
            assert!((b.duration_s / a.duration_s - 0.3f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn rule_signs_hold_per_emotion() {
        let spec = SynthSpec::default();
        let r = RuleRenderer::new(spec.clone()).unwrap();
        let words = vec![vec!["AA".to_string()]];
        let seg = Segmentation::nominal(&words, 0.1).unwrap();
        for (k, rule) in spec.rule_table().iter().enumerate() {
            let lo = HierarchicalEd::constant(EmotionSet::default(), &seg, 0.2);
            let mut hi = lo.clone();
            hi.phones[0][k] = 0.7;
            let ca = r.render_text(&words, &replicate(&lo, &seg).unwrap(), 1).unwrap();
            let a = &ca.phones()[0];
            let cb = r.render_text(&words, &replicate(&hi, &seg).unwrap(), 1).unwrap();
            let b = &cb.phones()[0];
            let deltas = [
                b.pitch_log_hz - a.pitch_log_hz,
                b.energy_log - a.energy_log,
                b.duration_s.ln() - a.duration_s.ln(),
            ];
            for (d, r) in deltas.iter().zip(rule) {
                if *r == 0.0 {
                    assert!(d.abs() < 1e-12);
                } else {
                    assert_eq!(d.signum(), r.signum());
                }
            }
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        for spec in [
            SynthSpec { n_items: 0, ..Default::default() },
            SynthSpec { inventory: vec![], ..Default::default() },
            SynthSpec { word_phones: (3, 2), ..Default::default() },
            SynthSpec { rules: vec![EmotionRule::new("Bored", 0.1, 0.0, 0.0)], ..Default::default() },
            SynthSpec { rules: vec![EmotionRule::new("Sad", f64::NAN, 0.0, 0.0)], ..Default::default() },
        ] {
            assert!(matches!(generate(&spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn round_trip_with_audio() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_items: 3,
            synth_audio: true,
            ..Default::default()
        };
        let corpus = Corpus::generate(spec).unwrap();
        save(dir.path(), &corpus).unwrap();
        assert_eq!(load(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn empty_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus { spec: None, items: vec![] };
        save(dir.path(), &corpus).unwrap();
        assert_eq!(load(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn truncated_item_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &Corpus::generate(small(0, 2)).unwrap()).unwrap();
        let path = dir.path().join("items/0001.json");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn tone_pitch_tracks_contour() {
        let spec = SynthSpec {
            n_items: 1,
            synth_audio: true,
            ..Default::default()
        };
        let it = &generate(&spec).unwrap()[0];
        let track = it.frame_track().unwrap();
        for (p, c) in it.segmentation.phones().iter().zip(it.contour.phones()) {
            let mid = 0.5 * (p.start_s + p.end_s);
            let i = ((mid - 0.5 * track.frame_s) / track.hop_s).round() as usize;
            let f0 = track.f0[i];
            if p.end_s - p.start_s > 0.08 {
                assert!((f0.ln() - c.pitch_log_hz).abs() < 0.03, "{} vs {}", f0, c.pitch_log_hz.exp());
            }
        }
    }
}
