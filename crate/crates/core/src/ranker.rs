//! Per-emotion linear ranking functions.
//!
//! Each emotion gets a scorer `f(x) = w·x + b` trained as a one-vs-rest
//! max-margin classifier (hinge loss plus `reg_lambda * |w|^2`) by stochastic
//! subgradient descent. Scores are mapped to `[0, 1]` with the min/max raw score
//! seen on the training data and clamped at inference.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::signal::SegmentFeatures;

pub const DEFAULT_EMOTIONS: [&str; 4] = ["Angry", "Happy", "Sad", "Surprise"];
pub const NEUTRAL: &str = "Neutral";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EmotionSet {
    labels: Vec<String>,
}

impl Default for EmotionSet {
    fn default() -> Self {
        Self {
            labels: DEFAULT_EMOTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TryFrom<Vec<String>> for EmotionSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<EmotionSet> for Vec<String> {
    fn from(set: EmotionSet) -> Self {
        set.labels
    }
}

impl EmotionSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("emotion set is empty".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Config(format!("duplicate emotion {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingModel {
    pub emotion: String,
    pub w: Vec<f64>,
    pub b: f64,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub dim_labels: Vec<String>,
}

impl RankingModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w·x + b`
    pub fn raw_score(&self, x: &SegmentFeatures) -> Result<f64> {
        self.raw_score_slice(&x.values)
    }

    pub fn raw_score_slice(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.w.len(), x.len())?;
        Ok(self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b)
    }

    /// Raw score rescaled by the training bounds and clamped to `[0, 1]`.
    pub fn intensity(&self, x: &SegmentFeatures) -> Result<f64> {
        let raw = self.raw_score(x)?;
        Ok(((raw - self.norm_lo) / (self.norm_hi - self.norm_lo)).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTrainConfig {
    pub reg_lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RankTrainConfig {
    fn default() -> Self {
        Self {
            reg_lambda: 1e-3,
            epochs: 60,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl RankTrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.reg_lambda > 0.0 && self.reg_lambda.is_finite()) {
            return Err(Error::Config("reg_lambda must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Train one emotion's scorer from positive and negative examples.
///
/// Samples are put in a canonical order first, so the result depends only on
/// the multiset of inputs and the seed. Features are standardized internally
/// and the scaling is folded back into `w` and `b`.
pub fn train(
    emotion: &str,
    positives: &[SegmentFeatures],
    negatives: &[SegmentFeatures],
    cfg: &RankTrainConfig,
) -> Result<RankingModel> {
    cfg.validate()?;
    let invalid = |reason: &str| Error::InvalidTrainingSet {
        emotion: emotion.to_string(),
        reason: reason.to_string(),
    };
    if positives.is_empty() {
        return Err(invalid("no positive samples"));
    }
    if negatives.is_empty() {
        return Err(invalid("no negative samples"));
    }
    let dim = positives[0].dim();
    if positives.iter().chain(negatives).any(|x| x.dim() != dim) {
        return Err(invalid("inconsistent feature dimension"));
    }

    let mut samples: Vec<(f64, &[f64])> = positives
        .iter()
        .map(|x| (1.0, x.values.as_slice()))
        .chain(negatives.iter().map(|x| (-1.0, x.values.as_slice())))
        .collect();
    samples.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });

    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for (_, x) in &samples {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; dim];
    for (_, x) in &samples {
        for d in 0..dim {
            scale[d] += (x[d] - mean[d]).powi(2);
        }
    }
    for s in &mut scale {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let standardized: Vec<(f64, Vec<f64>)> = samples
        .iter()
        .map(|(y, x)| (*y, (0..dim).map(|d| (x[d] - mean[d]) / scale[d]).collect()))
        .collect();

    // balance the hinge term between the two classes
    let n_pos = positives.len() as f64;
    let n_neg = negatives.len() as f64;
    let class_weight = |y: f64| if y > 0.0 { n / (2.0 * n_pos) } else { n / (2.0 * n_neg) };

    let lambda = cfg.reg_lambda;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..standardized.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = cfg.learning_rate / (1.0 + cfg.learning_rate * lambda * t as f64);
            let (y, x) = &standardized[i];
            let margin = y * (dot(&w, x) + b);
            let shrink = 1.0 - 2.0 * eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                let step = eta * y * class_weight(*y);
                for (wv, xv) in w.iter_mut().zip(x) {
                    *wv += step * xv;
                }
                b += step;
            }
        }
    }

    let w_raw: Vec<f64> = (0..dim).map(|d| w[d] / scale[d]).collect();
    let b_raw = b - (0..dim).map(|d| w[d] * mean[d] / scale[d]).sum::<f64>();
    let mut model = RankingModel {
        emotion: emotion.to_string(),
        w: w_raw,
        b: b_raw,
        norm_lo: 0.0,
        norm_hi: 0.0,
        dim_labels: positives[0].dim_labels.clone(),
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, x) in &samples {
        let s = model.raw_score_slice(x)?;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if !(hi - lo > 1e-12) {
        // all training scores coincide; centre a unit-width window on them
        let c = 0.5 * (lo + hi);
        lo = c - 0.5;
        hi = c + 0.5;
    }
    model.norm_lo = lo;
    model.norm_hi = hi;
    Ok(model)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A feature vector with its categorical emotion label (`Neutral` allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatures {
    pub label: String,
    pub features: SegmentFeatures,
}

/// One model per emotion; JSON form is a plain array of models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankerBundle {
    models: Vec<RankingModel>,
}

impl RankerBundle {
    pub fn new(models: Vec<RankingModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("empty ranker bundle".into()));
        }
        let dim = models[0].dim();
        if let Some(m) = models.iter().find(|m| m.dim() != dim) {
            return Err(Error::Dim {
                expected: dim,
                got: m.dim(),
            });
        }
        if let Some(m) = models.iter().find(|m| !(m.norm_lo < m.norm_hi)) {
            return Err(Error::Config(format!("{}: norm_lo must be < norm_hi", m.emotion)));
        }
        EmotionSet::new(models.iter().map(|m| m.emotion.clone()).collect())?;
        Ok(Self { models })
    }

    pub fn models(&self) -> &[RankingModel] {
        &self.models
    }

    pub fn emotions(&self) -> EmotionSet {
        EmotionSet::new(self.models.iter().map(|m| m.emotion.clone()).collect())
            .expect("validated on construction")
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    /// Intensity of every emotion for one feature vector.
    pub fn intensities(&self, x: &SegmentFeatures) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.intensity(x)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: RankerBundle = serde_json::from_str(&text).map_err(Error::format)?;
        Self::new(bundle.models)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }
}

/// Train one-vs-rest scorers for every emotion in `emotions`.
pub fn train_all(
    dataset: &[LabeledFeatures],
    emotions: &EmotionSet,
    cfg: &RankTrainConfig,
) -> Result<RankerBundle> {
    let mut models = Vec::with_capacity(emotions.len());
    for emotion in emotions.labels() {
        let (pos, neg): (Vec<&LabeledFeatures>, Vec<&LabeledFeatures>) =
            dataset.iter().partition(|s| &s.label == emotion);
        let pos: Vec<SegmentFeatures> = pos.into_iter().map(|s| s.features.clone()).collect();
        let neg: Vec<SegmentFeatures> = neg.into_iter().map(|s| s.features.clone()).collect();
        models.push(train(emotion, &pos, &neg, cfg)?);
    }
    RankerBundle::new(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fv(v: &[f64]) -> SegmentFeatures {
        SegmentFeatures::unlabeled(v.to_vec()).unwrap()
    }

    fn model(w: &[f64], b: f64) -> RankingModel {
        RankingModel {
            emotion: "Angry".into(),
            w: w.to_vec(),
            b,
            norm_lo: -1.0,
            norm_hi: 3.0,
            dim_labels: vec![],
        }
    }

    fn blobs(seed: u64, n: usize, centre: (f64, f64)) -> Vec<SegmentFeatures> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                fv(&[
                    centre.0 + rng.random_range(-1.0..1.0),
                    centre.1 + rng.random_range(-1.0..1.0),
                ])
            })
            .collect()
    }

    /// Fraction of (pos, neg) pairs with score(pos) > score(neg).
    fn pairwise_accuracy(m: &RankingModel, pos: &[SegmentFeatures], neg: &[SegmentFeatures]) -> f64 {
        let mut good = 0usize;
        for p in pos {
            let sp = m.raw_score(p).unwrap();
            for q in neg {
                if sp > m.raw_score(q).unwrap() {
                    good += 1;
                }
            }
        }
        good as f64 / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn raw_score_arithmetic() {
        assert_eq!(model(&[1.0, 0.0], 1.0).raw_score(&fv(&[2.0, 3.0])).unwrap(), 3.0);
        assert_eq!(model(&[0.0, 0.0], 0.0).raw_score(&fv(&[7.0, -2.0])).unwrap(), 0.0);
        assert_eq!(model(&[0.5, -0.5], 0.0).raw_score(&fv(&[4.0, 4.0])).unwrap(), 0.0);
        assert!(matches!(
            model(&[1.0], 0.0).raw_score(&fv(&[1.0, 2.0])),
            Err(Error::Dim { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn intensity_bounds_and_clamp() {
        let m = model(&[1.0], 0.0);
        assert_eq!(m.intensity(&fv(&[-1.0])).unwrap(), 0.0);
        assert_eq!(m.intensity(&fv(&[3.0])).unwrap(), 1.0);
        assert_eq!(m.intensity(&fv(&[1.0])).unwrap(), 0.5);
        assert_eq!(m.intensity(&fv(&[50.0])).unwrap(), 1.0);
        assert_eq!(m.intensity(&fv(&[-50.0])).unwrap(), 0.0);
    }

    #[test]
    fn separable_1d() {
        let pos = vec![fv(&[1.0]); 5];
        let neg = vec![fv(&[-1.0]); 5];
        let m = train("Angry", &pos, &neg, &RankTrainConfig::default()).unwrap();
        for p in &pos {
            assert!(m.raw_score(p).unwrap() > 0.0);
        }
        for q in &neg {
            assert!(m.raw_score(q).unwrap() < 0.0);
        }
    }

    #[test]
    fn identical_classes_shrink_to_zero() {
        let x = fv(&[0.3, -1.2]);
        let m = train("Sad", &[x.clone()], &[x.clone()], &RankTrainConfig::default()).unwrap();
        let norm: f64 = m.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
        assert!(m.norm_lo < m.norm_hi);
        let i = m.intensity(&x).unwrap();
        assert!((0.0..=1.0).contains(&i));
    }

    #[test]
    fn separable_blobs_order() {
        let pos = blobs(1, 100, (2.0, 2.0));
        let neg = blobs(2, 100, (-2.0, -1.0));
        let m = train("Happy", &pos, &neg, &RankTrainConfig::default()).unwrap();
        assert!(pairwise_accuracy(&m, &pos, &neg) >= 0.95);
    }

    #[test]
    fn empty_class_rejected() {
        let err = train("Sad", &[], &[fv(&[1.0])], &RankTrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidTrainingSet { ref emotion, .. } if emotion == "Sad"));
    }

    fn toy_dataset() -> Vec<LabeledFeatures> {
        let centres = [
            ("Angry", (4.0, 0.0)),
            ("Happy", (0.0, 4.0)),
            ("Sad", (-4.0, 0.0)),
            ("Surprise", (0.0, -4.0)),
            ("Neutral", (0.0, 0.0)),
        ];
        centres
            .iter()
            .enumerate()
            .flat_map(|(k, (label, c))| {
                blobs(10 + k as u64, 40, *c).into_iter().map(move |features| LabeledFeatures {
                    label: label.to_string(),
                    features,
                })
            })
            .collect()
    }

    #[test]
    fn train_all_per_emotion() {
        let data = toy_dataset();
        let bundle = train_all(&data, &EmotionSet::default(), &RankTrainConfig::default()).unwrap();
        assert_eq!(bundle.models().len(), 4);
        for m in bundle.models() {
            let (pos, neg): (Vec<_>, Vec<_>) = data.iter().partition(|s| s.label == m.emotion);
            let pos: Vec<_> = pos.into_iter().map(|s| s.features.clone()).collect();
            let neg: Vec<_> = neg.into_iter().map(|s| s.features.clone()).collect();
            assert!(pairwise_accuracy(m, &pos, &neg) >= 0.95, "{}", m.emotion);
        }
    }

    #[test]
    fn train_all_missing_emotion() {
        let data: Vec<_> = toy_dataset().into_iter().filter(|s| s.label != "Sad").collect();
        let err = train_all(&data, &EmotionSet::default(), &RankTrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidTrainingSet { ref emotion, .. } if emotion == "Sad"));
    }

    #[test]
    fn input_order_does_not_matter() {
        let data = toy_dataset();
        let mut shuffled = data.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        let cfg = RankTrainConfig::default();
        let a = train_all(&data, &EmotionSet::default(), &cfg).unwrap();
        let b = train_all(&shuffled, &EmotionSet::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bundle_json_round_trip() {
        let bundle = train_all(&toy_dataset(), &EmotionSet::default(), &RankTrainConfig::default()).unwrap();
        let back: RankerBundle = serde_json::from_str(&bundle.to_json()).unwrap();
        assert_eq!(bundle, back);
        let value: serde_json::Value = serde_json::from_str(&bundle.to_json()).unwrap();
        assert!(value.is_array());
        for key in ["emotion", "w", "b", "norm_lo", "norm_hi", "dim_labels"] {
            assert!(value[0].get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn intensity_always_in_unit_interval(x in prop::collection::vec(-1e6f64..1e6, 2)) {
            let pos = blobs(3, 20, (1.0, 1.0));
            let neg = blobs(4, 20, (-1.0, -1.0));
            let m = train("Angry", &pos, &neg, &RankTrainConfig::default()).unwrap();
            let i = m.intensity(&fv(&x)).unwrap();
            prop_assert!((0.0..=1.0).contains(&i));
        }

        #[test]
        fn affine_scaling_keeps_order(
            seed in 0u64..1000,
            a0 in 0.1f64..10.0, a1 in 0.1f64..10.0,
            c0 in -50.0f64..50.0, c1 in -50.0f64..50.0,
        ) {
            let pos = blobs(seed, 30, (2.0, 2.0));
            let neg = blobs(seed + 1, 30, (-2.0, -2.0));
            let test = blobs(seed + 2, 25, (0.0, 0.0));
            let affine = |xs: &[SegmentFeatures]| -> Vec<SegmentFeatures> {
                xs.iter().map(|x| fv(&[a0 * x.values[0] + c0, a1 * x.values[1] + c1])).collect()
            };
            let cfg = RankTrainConfig { seed, ..Default::default() };
            let m1 = train("Angry", &pos, &neg, &cfg).unwrap();
            let m2 = train("Angry", &affine(&pos), &affine(&neg), &cfg).unwrap();
            let argsort = |m: &RankingModel, xs: &[SegmentFeatures]| {
                let mut idx: Vec<usize> = (0..xs.len()).collect();
                let s: Vec<f64> = xs.iter().map(|x| m.raw_score(x).unwrap()).collect();
                idx.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
                (idx, s)
            };
            let (o1, s1) = argsort(&m1, &test);
            let (o2, _) = argsort(&m2, &affine(&test));
            // ignore orderings between numerically tied scores
            for (k, (i, j)) in o1.iter().zip(&o2).enumerate() {
                if i != j {
                    prop_assert!((s1[*i] - s1[*j]).abs() < 1e-9, "rank {k} differs");
                }
            }
        }

        #[test]
        fn training_is_deterministic(seed in 0u64..100) {
            let pos = blobs(seed, 15, (1.0, 0.5));
            let neg = blobs(seed + 7, 15, (-1.0, 0.0));
            let cfg = RankTrainConfig { seed, ..Default::default() };
            let a = train("Angry", &pos, &neg, &cfg).unwrap();
            let b = train("Angry", &pos, &neg, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
