//! Phone-level prosody from linguistic embeddings, phone-aligned EDs and a
//! speaker embedding.
//!
//! `external` mode squeezes each replicated ED row through a small tanh net
//! before the prosody net and treats EDs as given. `va` mode feeds the raw
//! `3E` row and carries its own multi-step ED heads on the renderer's text
//! encoder, trained jointly with the prosody loss.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::Segmentation;
use crate::error::{Error, Result};
use crate::hed::{replicate, HierarchicalEd, PhonemeAlignedEd};
use crate::neural::{loss_mse, mse_grad, Activation, Gradients, Mlp, MomentumSgd, TrainConfig};
use crate::predictor::{EdHeads, EdPredictor, Forcing, PredictMode, TextEncoder, TextEncoding};
use crate::ranker::EmotionSet;
use crate::signal::{FrameTrack, DEFAULT_HOP_S};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneProsody {
    pub phone: String,
    pub pitch_log_hz: f64,
    pub energy_log: f64,
    pub duration_s: f64,
}

/// Per-phone prosody plus its piecewise-constant frame expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContourDoc", into = "ContourDoc")]
pub struct ProsodyContour {
    hop_s: f64,
    phones: Vec<PhoneProsody>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContourDoc {
    hop_s: f64,
    phones: Vec<PhoneProsody>,
    #[serde(default)]
    frames: Option<FramesDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FramesDoc {
    pitch_log_hz: Vec<f64>,
    energy_log: Vec<f64>,
}

impl TryFrom<ContourDoc> for ProsodyContour {
    type Error = Error;

    fn try_from(doc: ContourDoc) -> Result<Self> {
        Self::new(doc.phones, doc.hop_s)
    }
}

impl From<ProsodyContour> for ContourDoc {
    fn from(c: ProsodyContour) -> Self {
        let (pitch_log_hz, energy_log) = c.expand();
        ContourDoc {
            hop_s: c.hop_s,
            phones: c.phones,
            frames: Some(FramesDoc { pitch_log_hz, energy_log }),
        }
    }
}

impl ProsodyContour {
    pub fn new(phones: Vec<PhoneProsody>, hop_s: f64) -> Result<Self> {
        if !(hop_s > 0.0 && hop_s.is_finite()) {
            return Err(Error::InvalidInput(format!("hop must be positive, got {hop_s}")));
        }
        for (i, p) in phones.iter().enumerate() {
            if !(p.duration_s > 0.0 && p.duration_s.is_finite()) {
                return Err(Error::InvalidInput(format!("phone {i}: duration {} is not positive", p.duration_s)));
            }
            if !p.pitch_log_hz.is_finite() || !p.energy_log.is_finite() {
                return Err(Error::InvalidInput(format!("phone {i}: non-finite prosody")));
            }
        }
        Ok(Self { hop_s, phones })
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn phones(&self) -> &[PhoneProsody] {
        &self.phones
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.phones.iter().map(|p| p.duration_s).sum()
    }

    pub fn frames_per_phone(&self) -> Vec<usize> {
        self.phones
            .iter()
            .map(|p| ((p.duration_s / self.hop_s).round() as usize).max(1))
            .collect()
    }

    /// Frame-level `(pitch_log_hz, energy_log)` tracks.
    pub fn expand(&self) -> (Vec<f64>, Vec<f64>) {
        let mut pitch = Vec::new();
        let mut energy = Vec::new();
        for (p, n) in self.phones.iter().zip(self.frames_per_phone()) {
            pitch.extend(std::iter::repeat_n(p.pitch_log_hz, n));
            energy.extend(std::iter::repeat_n(p.energy_log, n));
        }
        (pitch, energy)
    }

    /// Expanded tracks in linear units (Hz, RMS); every frame is voiced.
    pub fn to_frame_track(&self) -> FrameTrack {
        let (pitch, energy) = self.expand();
        FrameTrack {
            f0: pitch.into_iter().map(f64::exp).collect(),
            energy: energy.into_iter().map(f64::exp).collect(),
            hop_s: self.hop_s,
            frame_s: self.hop_s,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(Error::format)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("contour serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum Scope {
    Utterance,
    Word(usize),
    Phone(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourStats {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub duration_s: f64,
}

fn scope_range(seg: &Segmentation, scope: Scope) -> Result<Range<usize>> {
    let n_phones = seg.phones().len();
    match scope {
        Scope::Utterance => Ok(0..n_phones),
        Scope::Word(i) => seg.words().get(i).map(|w| w.phone_range.clone()).ok_or(Error::Index {
            level: "word",
            index: i,
            len: seg.words().len(),
        }),
        Scope::Phone(i) if i < n_phones => Ok(i..i + 1),
        Scope::Phone(i) => Err(Error::Index {
            level: "phoneme",
            index: i,
            len: n_phones,
        }),
    }
}

/// Duration-weighted statistics over the phones in `scope`.
pub fn contour_stats(c: &ProsodyContour, seg: &Segmentation, scope: Scope) -> Result<ContourStats> {
    if c.len() != seg.phones().len() {
        return Err(Error::Shape(format!(
            "contour has {} phones, segmentation {}",
            c.len(),
            seg.phones().len()
        )));
    }
    let phones = &c.phones[scope_range(seg, scope)?];
    let total: f64 = phones.iter().map(|p| p.duration_s).sum();
    let wmean = |f: fn(&PhoneProsody) -> f64| phones.iter().map(|p| p.duration_s * f(p)).sum::<f64>() / total;
    let pitch_mean = wmean(|p| p.pitch_log_hz);
    let energy_mean = wmean(|p| p.energy_log);
    let wstd = |f: fn(&PhoneProsody) -> f64, m: f64| {
        (phones.iter().map(|p| p.duration_s * (f(p) - m).powi(2)).sum::<f64>() / total).sqrt()
    };
    Ok(ContourStats {
        pitch_mean,
        pitch_std: wstd(|p| p.pitch_log_hz, pitch_mean),
        energy_mean,
        energy_std: wstd(|p| p.energy_log, energy_mean),
        duration_s: total,
    })
}

/// Anything that turns text plus phone-aligned EDs into a contour.
pub trait ProsodyRenderer {
    fn render_text(&self, words: &[Vec<String>], aligned: &PhonemeAlignedEd, speaker: usize) -> Result<ProsodyContour>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    External,
    Va,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RendererConfig {
    pub mode: RenderMode,
    pub embed_dim: usize,
    pub ed_embed_dim: usize,
    pub speaker_dim: usize,
    pub n_speakers: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            mode: RenderMode::External,
            embed_dim: 16,
            ed_embed_dim: 8,
            speaker_dim: 4,
            n_speakers: 4,
            hidden: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RendererModel {
    pub mode: RenderMode,
    pub emotions: EmotionSet,
    pub encoder: TextEncoder,
    /// `3E → J` tanh net, external mode only.
    pub ed_embed: Option<Mlp>,
    pub prosody_net: Mlp,
    pub speaker_dim: usize,
    /// Row-major `n_speakers x speaker_dim`.
    pub speakers: Vec<f64>,
    /// Multi-step ED heads sharing `encoder`, va mode only.
    pub ed_heads: Option<EdHeads>,
}

impl RendererModel {
    pub fn new<I, S>(cfg: &RendererConfig, emotions: EmotionSet, vocab: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if cfg.n_speakers == 0 || cfg.speaker_dim == 0 || cfg.hidden == 0 {
            return Err(Error::Config("speaker count, speaker dim and hidden width must be positive".into()));
        }
        let e3 = 3 * emotions.len();
        let encoder = TextEncoder::new(vocab, cfg.embed_dim, cfg.seed)?;
        let (ed_embed, ed_feat, ed_heads) = match cfg.mode {
            RenderMode::External => {
                let net = Mlp::new(
                    &[e3, cfg.ed_embed_dim, cfg.ed_embed_dim],
                    &[Activation::Tanh, Activation::Tanh],
                    cfg.seed.wrapping_add(1),
                )?;
                (Some(net), cfg.ed_embed_dim, None)
            }
            RenderMode::Va => {
                let heads = EdHeads::new(
                    PredictMode::MultiStep,
                    emotions.clone(),
                    cfg.embed_dim,
                    cfg.hidden,
                    cfg.seed.wrapping_add(3),
                )?;
                (None, e3, Some(heads))
            }
        };
        let prosody_net = Mlp::new(
            &[cfg.embed_dim + ed_feat + cfg.speaker_dim, cfg.hidden, 3],
            &[Activation::Tanh, Activation::Identity],
            cfg.seed.wrapping_add(2),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
        let speakers = (0..cfg.n_speakers * cfg.speaker_dim)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        Ok(Self {
            mode: cfg.mode,
            emotions,
            encoder,
            ed_embed,
            prosody_net,
            speaker_dim: cfg.speaker_dim,
            speakers,
            ed_heads,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let e3 = 3 * self.emotions.len();
        let k = self.encoder.dim();
        let ed_feat = match (self.mode, &self.ed_embed) {
            (RenderMode::External, Some(net)) => {
                if net.input_dim() != e3 || net.activations().iter().any(|a| *a != Activation::Tanh) {
                    return Err(Error::Config(format!("ED embedding net must be tanh with input {e3}")));
                }
                net.output_dim()
            }
            (RenderMode::External, None) => return Err(Error::Config("external renderer needs an ED embedding net".into())),
            (RenderMode::Va, _) => e3,
        };
        if self.prosody_net.input_dim() != k + ed_feat + self.speaker_dim || self.prosody_net.output_dim() != 3 {
            return Err(Error::Config("prosody net dims do not match the renderer layout".into()));
        }
        if self.speaker_dim == 0 || self.speakers.is_empty() || !self.speakers.len().is_multiple_of(self.speaker_dim) {
            return Err(Error::Config("malformed speaker table".into()));
        }
        if let Some(heads) = &self.ed_heads {
            heads.validate(k)?;
        }
        Ok(())
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len() / self.speaker_dim
    }

    pub fn speaker_embedding(&self, id: usize) -> Result<&[f64]> {
        if id >= self.n_speakers() {
            return Err(Error::UnknownSpeaker(id));
        }
        Ok(&self.speakers[id * self.speaker_dim..(id + 1) * self.speaker_dim])
    }

    fn ed_features(&self, row: &[f64]) -> Result<Vec<f64>> {
        match &self.ed_embed {
            Some(net) if self.mode == RenderMode::External => net.forward(row),
            _ => Ok(row.to_vec()),
        }
    }

    fn check_inputs(&self, enc: &TextEncoding, aligned: &PhonemeAlignedEd) -> Result<()> {
        if enc.phone_embeddings.first().map_or(0, Vec::len) != self.encoder.dim() {
            return Err(Error::Shape("encoding dimension differs from the renderer's".into()));
        }
        if aligned.n_phones() != enc.n_phones() {
            return Err(Error::Shape(format!(
                "{} aligned ED rows for {} phones",
                aligned.n_phones(),
                enc.n_phones()
            )));
        }
        if aligned.n_emotions != self.emotions.len() {
            return Err(Error::Shape(format!(
                "aligned ED has {} emotions, renderer {}",
                aligned.n_emotions,
                self.emotions.len()
            )));
        }
        Ok(())
    }

    pub fn render(&self, enc: &TextEncoding, aligned: &PhonemeAlignedEd, speaker: usize) -> Result<ProsodyContour> {
        self.check_inputs(enc, aligned)?;
        let spk = self.speaker_embedding(speaker)?;
        let mut phones = Vec::with_capacity(enc.n_phones());
        for p in 0..enc.n_phones() {
            let mut x = enc.phone_embeddings[p].clone();
            x.extend(self.ed_features(aligned.row(p))?);
            x.extend_from_slice(spk);
            let out = self.prosody_net.forward(&x)?;
            phones.push(PhoneProsody {
                phone: enc.symbols[p].clone(),
                pitch_log_hz: out[0],
                energy_log: out[1],
                duration_s: out[2].exp(),
            });
        }
        ProsodyContour::new(phones, DEFAULT_HOP_S)
    }

    /// Set the prosody net's output bias to the mean target of `corpus`, a
    /// data-dependent starting point for training.
    pub fn init_output_bias(&mut self, corpus: &[RenderExample]) -> Result<()> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for ex in corpus {
            for t in ex.target.phones() {
                sum[0] += t.pitch_log_hz;
                sum[1] += t.energy_log;
                sum[2] += t.duration_s.ln();
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let last = self.prosody_net.layers_mut().last_mut().expect("prosody net has layers");
        for (b, s) in last.bias.iter_mut().zip(sum) {
            *b = s / n as f64;
        }
        Ok(())
    }

    /// Predict an ED from text with the embedded heads (va mode).
    pub fn predict_ed(&self, words: &[Vec<String>]) -> Result<HierarchicalEd> {
        let heads = self
            .ed_heads
            .as_ref()
            .ok_or_else(|| Error::Config("renderer has no embedded ED predictor".into()))?;
        heads.predict(&self.encoder.encode(words)?, &Forcing::default())
    }

    pub fn ed_predictor(&self) -> Option<EdPredictor> {
        self.ed_heads.as_ref().map(|heads| EdPredictor {
            encoder: self.encoder.clone(),
            heads: heads.clone(),
        })
    }

    /// Same model with the embedded ED heads dropped.
    pub fn without_ed_heads(mut self) -> Self {
        self.ed_heads = None;
        self
    }

    fn heads_list(&self) -> Vec<&Mlp> {
        self.ed_heads.as_ref().map(|h| h.nets().to_vec()).unwrap_or_default()
    }

    /// Names of the trainable parameter slots, in optimizer order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["encoder".to_string()];
        let mut push_net = |prefix: &str, net: &Mlp| {
            for l in 0..net.layers().len() {
                names.push(format!("{prefix}.w{l}"));
                names.push(format!("{prefix}.b{l}"));
            }
        };
        if let Some(net) = &self.ed_embed {
            push_net("ed_embed", net);
        }
        push_net("prosody", &self.prosody_net);
        names.push("speakers".to_string());
        for (prefix, net) in ["heads.utterance", "heads.word", "heads.phone"].iter().zip(self.heads_list()) {
            for l in 0..net.layers().len() {
                names.push(format!("{prefix}.w{l}"));
                names.push(format!("{prefix}.b{l}"));
            }
        }
        names
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.encoder.table().len()];
        if let Some(net) = &self.ed_embed {
            sizes.extend(net.param_sizes());
        }
        sizes.extend(self.prosody_net.param_sizes());
        sizes.push(self.speakers.len());
        for net in self.heads_list() {
            sizes.extend(net.param_sizes());
        }
        sizes
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.encoder.table_mut()];
        if let Some(net) = &mut self.ed_embed {
            out.extend(net.params_mut());
        }
        out.extend(self.prosody_net.params_mut());
        out.push(&mut self.speakers);
        if let Some(heads) = &mut self.ed_heads {
            out.extend(heads.utt_net.params_mut());
            out.extend(heads.word_net.params_mut());
            out.extend(heads.phone_net.params_mut());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut clone = self.clone();
        clone.params_mut().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(Error::format)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("renderer serializes")
    }
}

impl ProsodyRenderer for RendererModel {
    fn render_text(&self, words: &[Vec<String>], aligned: &PhonemeAlignedEd, speaker: usize) -> Result<ProsodyContour> {
        self.render(&self.encoder.encode(words)?, aligned, speaker)
    }
}

/// One training item: aligned text, reference ED, target contour, speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderExample {
    pub segmentation: Segmentation,
    pub ed: HierarchicalEd,
    pub target: ProsodyContour,
    pub speaker: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderLoss {
    pub prosody: f64,
    /// Mean of the three per-level ED MSEs; 0 without embedded heads.
    pub ed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderHistory {
    pub prosody: Vec<f64>,
    pub ed: Vec<f64>,
}

struct SlotMap {
    ed_embed: usize,
    prosody: usize,
    speakers: usize,
    heads: usize,
}

impl RendererModel {
    fn slot_map(&self) -> SlotMap {
        let ed_embed = 1;
        let prosody = ed_embed + self.ed_embed.as_ref().map_or(0, |n| 2 * n.layers().len());
        let speakers = prosody + 2 * self.prosody_net.layers().len();
        SlotMap {
            ed_embed,
            prosody,
            speakers,
            heads: speakers + 1,
        }
    }

    fn check_example(&self, i: usize, ex: &RenderExample) -> Result<PhonemeAlignedEd> {
        if ex.ed.emotions != self.emotions {
            return Err(Error::Config(format!("example {i}: emotion set differs from the renderer's")));
        }
        if ex.target.len() != ex.segmentation.phones().len() {
            return Err(Error::Shape(format!("example {i}: target contour does not match segmentation")));
        }
        self.speaker_embedding(ex.speaker)?;
        replicate(&ex.ed, &ex.segmentation)
    }

    /// Loss and parameter gradient for one example; slots follow
    /// [`param_names`](Self::param_names).
    pub fn example_gradients(&self, ex: &RenderExample, va_loss_weight: f64) -> Result<(Gradients, RenderLoss)> {
        let aligned = self.check_example(0, ex)?;
        let enc = self.encoder.encode(&ex.segmentation.phone_symbols())?;
        let slots = self.slot_map();
        let mut grads = Gradients::zeros_like(&self.param_sizes());
        let add = |grads: &mut Gradients, at: usize, g: &Gradients| {
            for (dst, src) in grads.0[at..].iter_mut().zip(&g.0) {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        };
        let k = self.encoder.dim();
        let n_phones = enc.n_phones();
        let pn = n_phones as f64;
        let spk = self.speaker_embedding(ex.speaker)?.to_vec();
        let mut d_phone = vec![vec![0.0; k]; n_phones];
        let mut d_word: Vec<Vec<f64>> = Vec::new();
        let mut d_utt: Vec<f64> = Vec::new();
        let mut loss = RenderLoss::default();

        for p in 0..n_phones {
            let row = aligned.row(p);
            let embed_trace = match &self.ed_embed {
                Some(net) => Some(net.forward_trace(row)?),
                None => None,
            };
            let feat: Vec<f64> = embed_trace.as_ref().map_or_else(|| row.to_vec(), |t| t.output().to_vec());
            let mut x = enc.phone_embeddings[p].clone();
            x.extend_from_slice(&feat);
            x.extend_from_slice(&spk);
            let trace = self.prosody_net.forward_trace(&x)?;
            let t = &ex.target.phones()[p];
            let target = [t.pitch_log_hz, t.energy_log, t.duration_s.ln()];
            loss.prosody += loss_mse(trace.output(), &target)? / pn;
            let mut d = mse_grad(trace.output(), &target)?;
            d.iter_mut().for_each(|v| *v /= pn);
            let (g, dx) = self.prosody_net.backward_from(&trace, &d)?;
            add(&mut grads, slots.prosody, &g);
            d_phone[p].iter_mut().zip(&dx[..k]).for_each(|(a, b)| *a += b);
            let f = feat.len();
            if let (Some(net), Some(tr)) = (&self.ed_embed, &embed_trace) {
                let (ge, _) = net.backward_from(tr, &dx[k..k + f])?;
                add(&mut grads, slots.ed_embed, &ge);
            }
            let row0 = ex.speaker * self.speaker_dim;
            grads.0[slots.speakers][row0..row0 + self.speaker_dim]
                .iter_mut()
                .zip(&dx[k + f..])
                .for_each(|(a, b)| *a += b);
        }

        if let Some(heads) = &self.ed_heads {
            let backprop = va_loss_weight != 0.0;
            let gt = &ex.ed;
            let mut level = |net_slot: usize, net: &Mlp, x: Vec<f64>, target: &[f64], scale: f64| -> Result<(f64, Vec<f64>)> {
                let trace = net.forward_trace(&x)?;
                let l = loss_mse(trace.output(), target)?;
                if !backprop {
                    return Ok((l, Vec::new()));
                }
                let mut d = mse_grad(trace.output(), target)?;
                d.iter_mut().for_each(|v| *v *= scale);
                let (g, dx) = net.backward_from(&trace, &d)?;
                add(&mut grads, net_slot, &g);
                Ok((l, dx[..k].to_vec()))
            };
            let per_net = 2 * heads.utt_net.layers().len();
            let w_slot = slots.heads + per_net;
            let p_slot = w_slot + 2 * heads.word_net.layers().len();

            let (lu, du) = level(slots.heads, &heads.utt_net, heads.utt_input(&enc), &gt.utterance, va_loss_weight / 3.0)?;
            d_utt = du;
            let nw = enc.n_words() as f64;
            let mut lw = 0.0;
            for w in 0..enc.n_words() {
                let x = heads.word_input(&enc, w, &gt.utterance);
                let (l, dx) = level(w_slot, &heads.word_net, x, &gt.words[w], va_loss_weight / (3.0 * nw))?;
                lw += l / nw;
                d_word.push(dx);
            }
            let mut lp = 0.0;
            for p in 0..n_phones {
                let owner = enc.phone_word[p];
                let x = heads.phone_input(&enc, p, &gt.words[owner], &gt.utterance);
                let (l, dx) = level(p_slot, &heads.phone_net, x, &gt.phones[p], va_loss_weight / (3.0 * pn))?;
                lp += l / pn;
                d_phone[p].iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            }
            loss.ed = (lu + lw + lp) / 3.0;
        }

        self.encoder.accumulate_grad(&enc, &d_phone, &d_word, &d_utt, &mut grads.0[0]);
        Ok((grads, loss))
    }

    /// Mean loss over `corpus` without updating anything.
    pub fn corpus_loss(&self, corpus: &[RenderExample]) -> Result<RenderLoss> {
        if corpus.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = RenderLoss::default();
        for ex in corpus {
            let (_, l) = self.example_losses(ex)?;
            total.prosody += l.prosody;
            total.ed += l.ed;
        }
        let n = corpus.len() as f64;
        Ok(RenderLoss {
            prosody: total.prosody / n,
            ed: total.ed / n,
        })
    }

    fn example_losses(&self, ex: &RenderExample) -> Result<(ProsodyContour, RenderLoss)> {
        let aligned = self.check_example(0, ex)?;
        let enc = self.encoder.encode(&ex.segmentation.phone_symbols())?;
        let out = self.render(&enc, &aligned, ex.speaker)?;
        let pn = out.len() as f64;
        let mut loss = RenderLoss::default();
        for (o, t) in out.phones().iter().zip(ex.target.phones()) {
            loss.prosody += loss_mse(
                &[o.pitch_log_hz, o.energy_log, o.duration_s.ln()],
                &[t.pitch_log_hz, t.energy_log, t.duration_s.ln()],
            )? / pn;
        }
        if let Some(heads) = &self.ed_heads {
            let pred = heads.predict(&enc, &Forcing::ground_truth(&ex.ed))?;
            let level = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Result<f64> {
                let mut s = 0.0;
                for (x, y) in a.iter().zip(b) {
                    s += loss_mse(x, y)?;
                }
                Ok(s / a.len() as f64)
            };
            loss.ed = (loss_mse(&pred.utterance, &ex.ed.utterance)?
                + level(&pred.words, &ex.ed.words)?
                + level(&pred.phones, &ex.ed.phones)?)
                / 3.0;
        }
        Ok((out, loss))
    }
}

/// Minibatch momentum SGD over the joint objective
/// `prosody MSE + va_loss_weight * ED MSE`. The ED term only exists when the
/// model carries ED heads. Returns per-epoch corpus losses.
pub fn train_renderer(
    model: &mut RendererModel,
    corpus: &[RenderExample],
    cfg: &TrainConfig,
    va_loss_weight: f64,
) -> Result<RenderHistory> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(va_loss_weight >= 0.0 && va_loss_weight.is_finite()) {
        return Err(Error::Config(format!("va_loss_weight must be >= 0, got {va_loss_weight}")));
    }
    for (i, ex) in corpus.iter().enumerate() {
        model.check_example(i, ex)?;
    }
    let sizes = model.param_sizes();
    let mut opt = MomentumSgd::new(cfg, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = RenderHistory::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&sizes);
            for &i in batch {
                let (g, _) = model.example_gradients(&corpus[i], va_loss_weight)?;
                acc.add_scaled(&g, 1.0);
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(model.params_mut(), &acc);
        }
        let l = model.corpus_loss(corpus)?;
        history.prosody.push(l.prosody);
        history.ed.push(l.ed);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{PhoneSpec, WordSpec};

    fn seg() -> Segmentation {
        let phone = |s: &str, a: f64, b: f64| PhoneSpec {
            symbol: s.into(),
            start: a,
            end: b,
        };
        Segmentation::from_words(
            (0.0, 0.6),
            vec![
                WordSpec {
                    text: "ab".into(),
                    start: 0.0,
                    end: 0.3,
                    phones: vec![phone("AA", 0.0, 0.1), phone("B", 0.1, 0.3)],
                },
                WordSpec {
                    text: "s".into(),
                    start: 0.3,
                    end: 0.6,
                    phones: vec![phone("S", 0.3, 0.6)],
                },
            ],
        )
        .unwrap()
    }

    fn contour(rows: &[(f64, f64, f64)]) -> ProsodyContour {
        ProsodyContour::new(
            rows.iter()
                .map(|&(p, e, d)| PhoneProsody {
                    phone: "x".into(),
                    pitch_log_hz: p,
                    energy_log: e,
                    duration_s: d,
                })
                .collect(),
            0.01,
        )
        .unwrap()
    }

    fn model(mode: RenderMode) -> RendererModel {
        let cfg = RendererConfig {
            mode,
            embed_dim: 5,
            hidden: 6,
            ..Default::default()
        };
        RendererModel::new(&cfg, EmotionSet::default(), ["AA", "B", "S"]).unwrap()
    }

    fn ed(seg: &Segmentation, v: f64) -> HierarchicalEd {
        HierarchicalEd::constant(EmotionSet::default(), seg, v)
    }

    fn example(v: f64) -> RenderExample {
        let s = seg();
        RenderExample {
            ed: ed(&s, v),
            target: contour(&[(4.9, -2.0, 0.1), (5.0, -2.2, 0.2), (4.8, -2.1, 0.3)]),
            segmentation: s,
            speaker: 1,
        }
    }

    #[test]
    fn weighted_stats_by_hand() {
        let s = Segmentation::nominal(&[vec!["a".into(), "b".into()]], 0.1).unwrap();
        let c = contour(&[(100f64.ln(), 0.0, 1.0), (200f64.ln(), 0.0, 3.0)]);
        let st = contour_stats(&c, &s, Scope::Utterance).unwrap();
        assert!((st.pitch_mean - (0.25 * 100f64.ln() + 0.75 * 200f64.ln())).abs() < 1e-12);
        assert_eq!(st.energy_std, 0.0);
        assert_eq!(st.duration_s, 4.0);
        let one = contour_stats(&c, &s, Scope::Phone(1)).unwrap();
        assert_eq!(one.pitch_mean, 200f64.ln());
        assert_eq!(one.pitch_std, 0.0);
    }

    #[test]
    fn uniform_contour_has_zero_spread() {
        let c = contour(&[(5.0, -1.0, 0.2); 3]);
        let st = contour_stats(&c, &seg(), Scope::Utterance).unwrap();
        assert!(st.pitch_std.abs() < 1e-12 && st.energy_std.abs() < 1e-12);
        assert!(contour_stats(&c, &seg(), Scope::Word(5)).is_err());
        let short = contour(&[(5.0, -1.0, 0.2); 2]);
        assert!(matches!(contour_stats(&short, &seg(), Scope::Utterance), Err(Error::Shape(_))));
    }

    #[test]
    fn expansion_rounds_and_keeps_one_frame() {
        let c = contour(&[(1.0, 2.0, 0.034), (3.0, 4.0, 0.001)]);
        assert_eq!(c.frames_per_phone(), vec![3, 1]);
        let (p, e) = c.expand();
        assert_eq!(p, vec![1.0, 1.0, 1.0, 3.0]);
        assert_eq!(e, vec![2.0, 2.0, 2.0, 4.0]);
        assert!(ProsodyContour::new(vec![PhoneProsody { phone: "x".into(), pitch_log_hz: 0.0, energy_log: 0.0, duration_s: 0.0 }], 0.01).is_err());
    }

    #[test]
    fn contour_json_round_trip() {
        let c = contour(&[(4.5, -3.0, 0.07), (4.6, -2.5, 0.12)]);
        let back: ProsodyContour = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["frames"]["pitch_log_hz"].as_array().unwrap().len(), 19);
        assert_eq!(v["phones"][0]["phone"], "x");
    }

    #[test]
    fn zero_network_renders_unit_durations() {
        let mut m = model(RenderMode::External);
        m.prosody_net = Mlp::zeros(&m.prosody_net.dims(), &m.prosody_net.activations()).unwrap();
        let s = seg();
        let c = m.render_text(&s.phone_symbols(), &replicate(&ed(&s, 0.3), &s).unwrap(), 0).unwrap();
        for p in c.phones() {
            assert_eq!((p.pitch_log_hz, p.energy_log, p.duration_s), (0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn same_inputs_same_rows_and_locality() {
        let m = model(RenderMode::External);
        let words = vec![vec!["AA".to_string(), "AA".to_string()], vec!["S".to_string()]];
        let s = Segmentation::nominal(&words, 0.1).unwrap();
        let base = ed(&s, 0.4);
        let c = m.render_text(&words, &replicate(&base, &s).unwrap(), 2).unwrap();
        assert_eq!(c.phones()[0], c.phones()[1]);
        let mut edited = base.clone();
        edited.words[1][0] = 0.9;
        let c2 = m.render_text(&words, &replicate(&edited, &s).unwrap(), 2).unwrap();
        assert_eq!(c.phones()[..2], c2.phones()[..2]);
        assert_ne!(c.phones()[2], c2.phones()[2]);
    }

    #[test]
    fn render_rejects_bad_inputs() {
        let m = model(RenderMode::Va);
        let s = seg();
        let aligned = replicate(&ed(&s, 0.5), &s).unwrap();
        assert!(matches!(m.render_text(&s.phone_symbols(), &aligned, 9), Err(Error::UnknownSpeaker(9))));
        let fewer = vec![vec!["AA".to_string()]];
        assert!(matches!(m.render_text(&fewer, &aligned, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn layouts_follow_mode() {
        let ext = model(RenderMode::External);
        assert_eq!(ext.prosody_net.input_dim(), 5 + 8 + 4);
        assert!(ext.ed_heads.is_none());
        let va = model(RenderMode::Va);
        assert_eq!(va.prosody_net.input_dim(), 5 + 12 + 4);
        assert!(va.ed_embed.is_none() && va.ed_heads.is_some());
        for m in [ext, va] {
            assert_eq!(m.param_names().len(), m.param_sizes().len());
            m.validate().unwrap();
            let back: RendererModel = serde_json::from_str(&m.to_json()).unwrap();
            assert_eq!(back, m);
        }
    }

    fn flat_loss(m: &RendererModel, ex: &RenderExample, w: f64) -> f64 {
        let (_, l) = m.example_losses(ex).unwrap();
        l.prosody + w * l.ed
    }

    #[test]
    fn example_gradients_match_finite_differences() {
        for mode in [RenderMode::External, RenderMode::Va] {
            let m = model(mode);
            let ex = example(0.35);
            let w = 0.7;
            let (g, _) = m.example_gradients(&ex, w).unwrap();
            let sizes = m.param_sizes();
            for (slot, &n) in sizes.iter().enumerate() {
                for i in (0..n).step_by(7) {
                    let mut plus = m.clone();
                    plus.params_mut()[slot][i] += 1e-5;
                    let mut minus = m.clone();
                    minus.params_mut()[slot][i] -= 1e-5;
                    let num = (flat_loss(&plus, &ex, w) - flat_loss(&minus, &ex, w)) / 2e-5;
                    let ana = g.0[slot][i];
                    let denom = num.abs().max(ana.abs()).max(1e-6);
                    assert!((num - ana).abs() / denom < 1e-4 || (num - ana).abs() < 1e-8, "{mode:?} slot {slot} [{i}]: {num} vs {ana}");
                }
            }
        }
    }

    #[test]
    fn zero_weight_leaves_heads_untouched() {
        let m = model(RenderMode::Va);
        let corpus = vec![example(0.2), example(0.8)];
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 1,
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut with_heads = m.clone();
        let h1 = train_renderer(&mut with_heads, &corpus, &cfg, 0.0).unwrap();
        let mut without = m.clone().without_ed_heads();
        let h2 = train_renderer(&mut without, &corpus, &cfg, 0.0).unwrap();
        assert_eq!(h1.prosody, h2.prosody);
        assert_eq!(with_heads.ed_heads, m.ed_heads);
        assert_eq!(with_heads.prosody_net, without.prosody_net);

        let (g, _) = m.example_gradients(&corpus[0], 1.0).unwrap();
        let names = m.param_names();
        let head_norm: f64 = names
            .iter()
            .zip(&g.0)
            .filter(|(n, _)| n.starts_with("heads."))
            .flat_map(|(_, v)| v.iter())
            .map(|v| v.abs())
            .sum();
        assert!(head_norm > 0.0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let corpus = vec![example(0.1), example(0.9)];
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 2,
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut a = model(RenderMode::External);
        let ha = train_renderer(&mut a, &corpus, &cfg, 1.0).unwrap();
        let mut b = model(RenderMode::External);
        let hb = train_renderer(&mut b, &corpus, &cfg, 1.0).unwrap();
        assert_eq!(ha, hb);
        assert!(ha.prosody.last().unwrap() < &0.01, "{:?}", ha.prosody.last());
        assert!(matches!(train_renderer(&mut a, &[], &cfg, 1.0), Err(Error::EmptyDataset)));
    }
}
