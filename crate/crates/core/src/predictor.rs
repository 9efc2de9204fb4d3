//! Text → hierarchical ED.
//!
//! Text arrives as phoneme symbols grouped by word. A learned embedding table
//! maps each phone to a `K`-vector; words and the utterance are represented by
//! mean pooling. Three sigmoid-headed MLPs predict one level each:
//!
//! * multi-step: utterance first, then each word from `[word ‖ utterance ED]`,
//!   then each phone from `[phone ‖ owning word ED ‖ utterance ED]`;
//! * single-step: every level from its own pooled embedding only.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hed::{mean_abs_diff, HierarchicalEd, LevelMae};
use crate::neural::{fit, Activation, Mlp, TrainConfig};
use crate::ranker::EmotionSet;

pub const DEFAULT_EMBED_DIM: usize = 16;
pub const DEFAULT_HIDDEN: usize = 32;
pub const UNK: &str = "<unk>";

/// Phone-symbol embedding table. Row 0 is reserved for unknown symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    vocab: Vec<String>,
    dim: usize,
    /// Row-major `(vocab.len() + 1) x dim`.
    table: Vec<f64>,
}

/// Embedded text plus the bookkeeping needed to backpropagate into the table.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding {
    pub symbols: Vec<String>,
    pub phone_rows: Vec<usize>,
    pub phone_word: Vec<usize>,
    pub word_ranges: Vec<std::ops::Range<usize>>,
    pub phone_embeddings: Vec<Vec<f64>>,
    pub word_pooled: Vec<Vec<f64>>,
    pub utt_pooled: Vec<f64>,
}

impl TextEncoding {
    pub fn n_words(&self) -> usize {
        self.word_ranges.len()
    }

    pub fn n_phones(&self) -> usize {
        self.phone_rows.len()
    }
}

impl TextEncoder {
    /// Table over the sorted distinct `symbols`, rows drawn from U(-1, 1).
    pub fn new<I, S>(symbols: I, dim: usize, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let vocab: Vec<String> = symbols
            .into_iter()
            .map(Into::into)
            .filter(|s| s != UNK)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..(vocab.len() + 1) * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self { vocab, dim, table })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn row_of(&self, symbol: &str) -> usize {
        self.vocab
            .binary_search_by(|v| v.as_str().cmp(symbol))
            .map(|i| i + 1)
            .unwrap_or(0)
    }

    pub fn embedding(&self, row: usize) -> &[f64] {
        &self.table[row * self.dim..(row + 1) * self.dim]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn encode(&self, words: &[Vec<String>]) -> Result<TextEncoding> {
        if words.is_empty() {
            return Err(Error::InvalidInput("text has no words".into()));
        }
        if let Some(i) = words.iter().position(|w| w.is_empty()) {
            return Err(Error::InvalidInput(format!("word {i} has no phones")));
        }
        let k = self.dim;
        let mut enc = TextEncoding {
            symbols: Vec::new(),
            phone_rows: Vec::new(),
            phone_word: Vec::new(),
            word_ranges: Vec::new(),
            phone_embeddings: Vec::new(),
            word_pooled: Vec::new(),
            utt_pooled: vec![0.0; k],
        };
        for (wi, word) in words.iter().enumerate() {
            let start = enc.phone_rows.len();
            let mut pooled = vec![0.0; k];
            for sym in word {
                let row = self.row_of(sym);
                let emb = self.embedding(row).to_vec();
                for (acc, v) in pooled.iter_mut().zip(&emb) {
                    *acc += v;
                }
                for (acc, v) in enc.utt_pooled.iter_mut().zip(&emb) {
                    *acc += v;
                }
                enc.symbols.push(sym.clone());
                enc.phone_rows.push(row);
                enc.phone_word.push(wi);
                enc.phone_embeddings.push(emb);
            }
            let n = word.len() as f64;
            pooled.iter_mut().for_each(|v| *v /= n);
            enc.word_pooled.push(pooled);
            enc.word_ranges.push(start..enc.phone_rows.len());
        }
        let p = enc.phone_rows.len() as f64;
        enc.utt_pooled.iter_mut().for_each(|v| *v /= p);
        Ok(enc)
    }

    /// Add the table gradient implied by gradients on an encoding's phone
    /// embeddings, pooled words and pooled utterance. Missing or empty rows
    /// count as zero.
    pub fn accumulate_grad(
        &self,
        enc: &TextEncoding,
        d_phone: &[Vec<f64>],
        d_word: &[Vec<f64>],
        d_utt: &[f64],
        grad: &mut [f64],
    ) {
        let k = self.dim;
        let p = enc.n_phones() as f64;
        for (pi, &row) in enc.phone_rows.iter().enumerate() {
            let w = enc.phone_word[pi];
            let nw = enc.word_ranges[w].len() as f64;
            let slot = &mut grad[row * k..(row + 1) * k];
            for d in 0..k {
                let mut g = 0.0;
                if let Some(dp) = d_phone.get(pi).filter(|v| !v.is_empty()) {
                    g += dp[d];
                }
                if let Some(dw) = d_word.get(w).filter(|v| !v.is_empty()) {
                    g += dw[d] / nw;
                }
                if !d_utt.is_empty() {
                    g += d_utt[d] / p;
                }
                slot[d] += g;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    MultiStep,
    SingleStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredLevel {
    Utterance,
    Word,
    Phone,
}

/// Upstream EDs to feed downstream heads instead of the model's own output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Forcing {
    pub utterance: Option<Vec<f64>>,
    pub words: Option<Vec<Vec<f64>>>,
}

impl Forcing {
    pub fn ground_truth(ed: &HierarchicalEd) -> Self {
        Self {
            utterance: Some(ed.utterance.clone()),
            words: Some(ed.words.clone()),
        }
    }
}

/// The three prediction heads, independent of any embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdHeads {
    pub mode: PredictMode,
    pub emotions: EmotionSet,
    pub utt_net: Mlp,
    pub word_net: Mlp,
    pub phone_net: Mlp,
}

impl EdHeads {
    pub fn new(mode: PredictMode, emotions: EmotionSet, embed_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let e = emotions.len();
        let (word_in, phone_in) = match mode {
            PredictMode::MultiStep => (embed_dim + e, embed_dim + 2 * e),
            PredictMode::SingleStep => (embed_dim, embed_dim),
        };
        let acts = [Activation::Tanh, Activation::Sigmoid];
        Ok(Self {
            mode,
            utt_net: Mlp::new(&[embed_dim, hidden, e], &acts, seed)?,
            word_net: Mlp::new(&[word_in, hidden, e], &acts, seed.wrapping_add(1))?,
            phone_net: Mlp::new(&[phone_in, hidden, e], &acts, seed.wrapping_add(2))?,
            emotions,
        })
    }

    pub fn validate(&self, embed_dim: usize) -> Result<()> {
        let e = self.emotions.len();
        let (word_in, phone_in) = match self.mode {
            PredictMode::MultiStep => (embed_dim + e, embed_dim + 2 * e),
            PredictMode::SingleStep => (embed_dim, embed_dim),
        };
        for (name, net, input) in [
            ("utterance", &self.utt_net, embed_dim),
            ("word", &self.word_net, word_in),
            ("phone", &self.phone_net, phone_in),
        ] {
            if net.input_dim() != input || net.output_dim() != e {
                return Err(Error::Config(format!(
                    "{name} head is {}→{}, expected {input}→{e} for {:?}",
                    net.input_dim(),
                    net.output_dim(),
                    self.mode
                )));
            }
        }
        Ok(())
    }

    pub fn nets(&self) -> [&Mlp; 3] {
        [&self.utt_net, &self.word_net, &self.phone_net]
    }

    pub fn net(&self, level: PredLevel) -> &Mlp {
        match level {
            PredLevel::Utterance => &self.utt_net,
            PredLevel::Word => &self.word_net,
            PredLevel::Phone => &self.phone_net,
        }
    }

    pub fn net_mut(&mut self, level: PredLevel) -> &mut Mlp {
        match level {
            PredLevel::Utterance => &mut self.utt_net,
            PredLevel::Word => &mut self.word_net,
            PredLevel::Phone => &mut self.phone_net,
        }
    }

    pub fn utt_input(&self, enc: &TextEncoding) -> Vec<f64> {
        enc.utt_pooled.clone()
    }

    pub fn word_input(&self, enc: &TextEncoding, w: usize, utt_ed: &[f64]) -> Vec<f64> {
        let mut x = enc.word_pooled[w].clone();
        if self.mode == PredictMode::MultiStep {
            x.extend_from_slice(utt_ed);
        }
        x
    }

    pub fn phone_input(&self, enc: &TextEncoding, p: usize, word_ed: &[f64], utt_ed: &[f64]) -> Vec<f64> {
        let mut x = enc.phone_embeddings[p].clone();
        if self.mode == PredictMode::MultiStep {
            x.extend_from_slice(word_ed);
            x.extend_from_slice(utt_ed);
        }
        x
    }

    pub fn predict_utterance(&self, enc: &TextEncoding) -> Result<Vec<f64>> {
        self.utt_net.forward(&self.utt_input(enc))
    }

    /// Word EDs given the utterance ED used as context.
    pub fn predict_words(&self, enc: &TextEncoding, utt_ctx: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.emotions.len(), utt_ctx.len())?;
        (0..enc.n_words())
            .map(|w| self.word_net.forward(&self.word_input(enc, w, utt_ctx)))
            .collect()
    }

    /// Phone EDs given word and utterance context.
    pub fn predict_phones(&self, enc: &TextEncoding, word_ctx: &[Vec<f64>], utt_ctx: &[f64]) -> Result<Vec<Vec<f64>>> {
        if word_ctx.len() != enc.n_words() {
            return Err(Error::Shape(format!(
                "{} word EDs for {} words",
                word_ctx.len(),
                enc.n_words()
            )));
        }
        (0..enc.n_phones())
            .map(|p| {
                let owner = enc.phone_word[p];
                self.phone_net.forward(&self.phone_input(enc, p, &word_ctx[owner], utt_ctx))
            })
            .collect()
    }

    pub fn predict(&self, enc: &TextEncoding, forcing: &Forcing) -> Result<HierarchicalEd> {
        let utterance = self.predict_utterance(enc)?;
        let utt_ctx = forcing.utterance.clone().unwrap_or_else(|| utterance.clone());
        let words = self.predict_words(enc, &utt_ctx)?;
        let word_ctx = forcing.words.clone().unwrap_or_else(|| words.clone());
        let phones = self.predict_phones(enc, &word_ctx, &utt_ctx)?;
        Ok(HierarchicalEd {
            emotions: self.emotions.clone(),
            utterance,
            words,
            phones,
        })
    }
}

/// Embedding table plus prediction heads; the predictor bundle on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdPredictor {
    pub encoder: TextEncoder,
    #[serde(flatten)]
    pub heads: EdHeads,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub mode: PredictMode,
    pub embed_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            mode: PredictMode::MultiStep,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl EdPredictor {
    pub fn new<I, S>(cfg: &PredictorConfig, emotions: EmotionSet, vocab: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let encoder = TextEncoder::new(vocab, cfg.embed_dim, cfg.seed)?;
        Self::with_encoder(cfg, emotions, encoder)
    }

    /// Reuse an existing (e.g. a trained renderer's) embedding table.
    pub fn with_encoder(cfg: &PredictorConfig, emotions: EmotionSet, encoder: TextEncoder) -> Result<Self> {
        let heads = EdHeads::new(cfg.mode, emotions, encoder.dim(), cfg.hidden, cfg.seed.wrapping_add(17))?;
        Ok(Self { encoder, heads })
    }

    pub fn mode(&self) -> PredictMode {
        self.heads.mode
    }

    pub fn emotions(&self) -> &EmotionSet {
        &self.heads.emotions
    }

    pub fn encode(&self, words: &[Vec<String>]) -> Result<TextEncoding> {
        self.encoder.encode(words)
    }

    pub fn predict(&self, enc: &TextEncoding) -> Result<HierarchicalEd> {
        self.heads.predict(enc, &Forcing::default())
    }

    pub fn predict_text(&self, words: &[Vec<String>]) -> Result<HierarchicalEd> {
        self.predict(&self.encode(words)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pred: Self = serde_json::from_str(&text).map_err(Error::format)?;
        pred.heads.validate(pred.encoder.dim())?;
        Ok(pred)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("predictor serializes")
    }
}

/// Text (phones per word) with its reference ED.
#[derive(Debug, Clone, PartialEq)]
pub struct EdExample {
    pub words: Vec<Vec<String>>,
    pub ed: HierarchicalEd,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorHistory {
    pub utterance: Vec<f64>,
    pub words: Vec<f64>,
    pub phones: Vec<f64>,
}

fn check_corpus(pred: &EdPredictor, corpus: &[EdExample]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, ex) in corpus.iter().enumerate() {
        if &ex.ed.emotions != pred.emotions() {
            return Err(Error::Config(format!("example {i}: emotion set differs from the predictor's")));
        }
        let n_phones: usize = ex.words.iter().map(Vec::len).sum();
        if ex.ed.words.len() != ex.words.len() || ex.ed.phones.len() != n_phones {
            return Err(Error::Shape(format!("example {i}: ED does not match its text")));
        }
    }
    Ok(())
}

/// Training pairs for one head, with ground-truth upstream context.
fn stage_dataset(pred: &EdPredictor, corpus: &[EdExample], level: PredLevel) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let heads = &pred.heads;
    let mut data = Vec::new();
    for ex in corpus {
        let enc = pred.encode(&ex.words)?;
        match level {
            PredLevel::Utterance => data.push((heads.utt_input(&enc), ex.ed.utterance.clone())),
            PredLevel::Word => {
                for w in 0..enc.n_words() {
                    data.push((heads.word_input(&enc, w, &ex.ed.utterance), ex.ed.words[w].clone()));
                }
            }
            PredLevel::Phone => {
                for p in 0..enc.n_phones() {
                    let owner = enc.phone_word[p];
                    data.push((
                        heads.phone_input(&enc, p, &ex.ed.words[owner], &ex.ed.utterance),
                        ex.ed.phones[p].clone(),
                    ));
                }
            }
        }
    }
    Ok(data)
}

/// Train a single head with the embedding table frozen. Other heads are not
/// touched.
pub fn train_stage(pred: &mut EdPredictor, corpus: &[EdExample], level: PredLevel, cfg: &TrainConfig) -> Result<Vec<f64>> {
    check_corpus(pred, corpus)?;
    let data = stage_dataset(pred, corpus, level)?;
    fit(pred.heads.net_mut(level), &data, cfg)
}

/// Train all heads. Multi-step runs utterance, word and phone stages in that
/// order, each teacher-forced with ground-truth upstream EDs. Single-step heads
/// share no parameters, so their joint objective is fitted head by head.
pub fn train_predictor(pred: &mut EdPredictor, corpus: &[EdExample], cfg: &TrainConfig) -> Result<PredictorHistory> {
    check_corpus(pred, corpus)?;
    Ok(PredictorHistory {
        utterance: train_stage(pred, corpus, PredLevel::Utterance, cfg)?,
        words: train_stage(pred, corpus, PredLevel::Word, cfg)?,
        phones: train_stage(pred, corpus, PredLevel::Phone, cfg)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherForcing {
    Predicted,
    GroundTruth,
}

/// Per-level mean absolute difference averaged over the corpus.
pub fn eval_predictor(pred: &EdPredictor, corpus: &[EdExample], teacher_forcing: TeacherForcing) -> Result<LevelMae> {
    if pred.mode() == PredictMode::SingleStep && teacher_forcing == TeacherForcing::GroundTruth {
        return Err(Error::Config("single-step prediction has no upstream context to force".into()));
    }
    check_corpus(pred, corpus)?;
    let reports = corpus
        .iter()
        .map(|ex| {
            let enc = pred.encode(&ex.words)?;
            let forcing = match teacher_forcing {
                TeacherForcing::Predicted => Forcing::default(),
                TeacherForcing::GroundTruth => Forcing::ground_truth(&ex.ed),
            };
            let out = pred.heads.predict(&enc, &forcing)?;
            mean_abs_diff(&out, &ex.ed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelMae::mean_of(&reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(words: &[&[&str]]) -> Vec<Vec<String>> {
        words.iter().map(|ws| ws.iter().map(|s| s.to_string()).collect()).collect()
    }

    fn encoder() -> TextEncoder {
        TextEncoder::new(["AA", "B", "K", "IY", "S", "T"], 6, 3).unwrap()
    }

    #[test]
    fn single_phone_pooling() {
        let enc = encoder().encode(&w(&[&["AA"]])).unwrap();
        assert_eq!(enc.utt_pooled, enc.phone_embeddings[0]);
        assert_eq!(enc.word_pooled[0], enc.phone_embeddings[0]);
    }

    #[test]
    fn identical_phones_pool_to_shared_row() {
        let e = encoder();
        let enc = e.encode(&w(&[&["K", "K"]])).unwrap();
        assert_eq!(enc.utt_pooled, e.embedding(e.row_of("K")));
    }

    #[test]
    fn word_permutation_keeps_utterance_pool() {
        let e = encoder();
        let a = e.encode(&w(&[&["AA", "B"], &["S"]])).unwrap();
        let b = e.encode(&w(&[&["S"], &["AA", "B"]])).unwrap();
        assert_eq!(a.word_pooled[0], b.word_pooled[1]);
        for (x, y) in a.utt_pooled.iter().zip(&b.utt_pooled) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_symbol_uses_reserved_row() {
        let e = encoder();
        assert_eq!(e.row_of("ZH"), 0);
        let enc = e.encode(&w(&[&["ZH", "QQ"]])).unwrap();
        assert_eq!(enc.phone_embeddings[0], enc.phone_embeddings[1]);
        assert!(e.encode(&[]).is_err());
        assert!(e.encode(&[vec![]]).is_err());
    }

    #[test]
    fn head_dims_follow_mode() {
        let emo = EmotionSet::default();
        let multi = EdHeads::new(PredictMode::MultiStep, emo.clone(), 16, 8, 0).unwrap();
        assert_eq!(multi.word_net.input_dim(), 20);
        assert_eq!(multi.phone_net.input_dim(), 24);
        let single = EdHeads::new(PredictMode::SingleStep, emo, 16, 8, 0).unwrap();
        assert!(single.nets().iter().all(|n| n.input_dim() == 16 && n.output_dim() == 4));
    }

    #[test]
    fn multi_step_word_output_depends_on_utterance_bias() {
        let mut pred = EdPredictor::new(&PredictorConfig::default(), EmotionSet::default(), encoder().vocab().to_vec()).unwrap();
        let enc = pred.encode(&w(&[&["AA", "B"], &["S", "T"]])).unwrap();
        // give the utterance head a non-zero output bias first
        pred.heads.utt_net.layers_mut()[1].bias.iter_mut().for_each(|b| *b = 1.5);
        let before = pred.predict(&enc).unwrap();
        pred.heads.utt_net.layers_mut()[1].bias.iter_mut().for_each(|b| *b = 0.0);
        let after = pred.predict(&enc).unwrap();
        assert_ne!(before.words, after.words);
    }

    #[test]
    fn single_step_ignores_forced_upstream() {
        let cfg = PredictorConfig {
            mode: PredictMode::SingleStep,
            ..Default::default()
        };
        let pred = EdPredictor::new(&cfg, EmotionSet::default(), encoder().vocab().to_vec()).unwrap();
        let enc = pred.encode(&w(&[&["AA", "B"], &["S"]])).unwrap();
        let free = pred.predict(&enc).unwrap();
        let forced = pred
            .heads
            .predict(
                &enc,
                &Forcing {
                    utterance: Some(vec![1.0, 0.0, 1.0, 0.0]),
                    words: Some(vec![vec![0.3; 4]; 2]),
                },
            )
            .unwrap();
        assert_eq!(free, forced);
    }

    #[test]
    fn identical_words_identical_eds() {
        let pred = EdPredictor::new(&PredictorConfig::default(), EmotionSet::default(), encoder().vocab().to_vec()).unwrap();
        let ed = pred.predict_text(&w(&[&["K", "IY"], &["T"], &["K", "IY"]])).unwrap();
        assert_eq!(ed.words[0], ed.words[2]);
        assert!(ed.phones.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let e = encoder();
        let words = w(&[&["AA", "B", "AA"], &["S"]]);
        // scalar objective: sum(c_phone · phone) + sum(c_word · word) + c_utt · utt
        let obj = |enc: &TextEncoding| -> f64 {
            let mut s = 0.0;
            for (i, p) in enc.phone_embeddings.iter().enumerate() {
                s += p.iter().enumerate().map(|(d, v)| v * (i + d) as f64 * 0.1).sum::<f64>();
            }
            for (i, p) in enc.word_pooled.iter().enumerate() {
                s += p.iter().enumerate().map(|(d, v)| v * (1.0 + i as f64 - d as f64 * 0.2)).sum::<f64>();
            }
            s + enc.utt_pooled.iter().enumerate().map(|(d, v)| v * d as f64).sum::<f64>()
        };
        let enc = e.encode(&words).unwrap();
        let d_phone: Vec<Vec<f64>> = (0..enc.n_phones()).map(|i| (0..6).map(|d| (i + d) as f64 * 0.1).collect()).collect();
        let d_word: Vec<Vec<f64>> = (0..2).map(|i| (0..6).map(|d| 1.0 + i as f64 - d as f64 * 0.2).collect()).collect();
        let d_utt: Vec<f64> = (0..6).map(|d| d as f64).collect();
        let mut grad = vec![0.0; e.table().len()];
        e.accumulate_grad(&enc, &d_phone, &d_word, &d_utt, &mut grad);
        for i in 0..grad.len() {
            let mut plus = e.clone();
            plus.table_mut()[i] += 1e-6;
            let mut minus = e.clone();
            minus.table_mut()[i] -= 1e-6;
            let num = (obj(&plus.encode(&words).unwrap()) - obj(&minus.encode(&words).unwrap())) / 2e-6;
            assert!((num - grad[i]).abs() < 1e-6, "slot {i}: {num} vs {}", grad[i]);
        }
    }
}
