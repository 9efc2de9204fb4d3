use hedkit::corpus::{generate, SynthSpec};
use hedkit::editing::{intensity_sweep, EditSession, Level, SweepTemplate};
use hedkit::renderer::{train_renderer, RenderExample, RendererConfig, Scope};
use hedkit::{CorpusItem, EmotionSet, RenderMode, RendererModel, TrainConfig};

fn items(seed: u64, n: usize) -> Vec<CorpusItem> {
    generate(&SynthSpec {
        seed,
        n_items: n,
        ..Default::default()
    })
    .unwrap()
}

fn examples(items: &[CorpusItem]) -> Vec<RenderExample> {
    items.iter().map(|i| i.render_example()).collect()
}

fn trained(mode: RenderMode, train: &[RenderExample], epochs: usize) -> RendererModel {
    let cfg = RendererConfig {
        mode,
        ..Default::default()
    };
    let mut m = RendererModel::new(&cfg, EmotionSet::default(), SynthSpec::default().phone_symbols()).unwrap();
    m.init_output_bias(train).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.05,
        epochs,
        batch_size: 8,
        ..Default::default()
    };
    train_renderer(&mut m, train, &tc, 1.0).unwrap();
    m
}

/// Every 5-point sweep on held-out items moves the statistic the rule's way.
fn check_trends(m: &RendererModel, held: &[CorpusItem]) {
    let values = [0.0, 0.25, 0.5, 0.75, 1.0];
    for it in held {
        let s = EditSession::from_extracted(it.ed.clone(), it.segmentation.clone(), None).unwrap();
        let w = it.segmentation.words().len() / 2;
        let phones = it.segmentation.words()[w].phone_range.clone();
        for (emo, sign, stat) in [
            ("Sad", 1.0, "duration"),
            ("Sad", -1.0, "pitch"),
            ("Happy", 1.0, "pitch"),
            ("Angry", 1.0, "energy"),
        ] {
            let both = SweepTemplate {
                emotion: emo.into(),
                targets: std::iter::once((Level::Word, w))
                    .chain(phones.clone().map(|p| (Level::Phoneme, p)))
                    .collect(),
                policy: Default::default(),
            };
            for (tpl, scope) in [
                (SweepTemplate::single(Level::Utterance, 0, emo), Scope::Utterance),
                (SweepTemplate::single(Level::Word, w, emo), Scope::Word(w)),
                (SweepTemplate::single(Level::Phoneme, phones.start, emo), Scope::Phone(phones.start)),
                (both, Scope::Word(w)),
            ] {
                let pts = intensity_sweep(&s, &tpl, &values, m, it.speaker, scope).unwrap();
                let series: Vec<f64> = pts
                    .iter()
                    .map(|p| match stat {
                        "duration" => p.stats.duration_s,
                        "pitch" => p.stats.pitch_mean,
                        _ => p.stats.energy_mean,
                    })
                    .collect();
                assert!(
                    series.windows(2).all(|x| sign * (x[1] - x[0]) > 0.0),
                    "item {} {emo} {stat} {scope:?}: {series:?}",
                    it.id
                );
            }
        }
    }
}

#[test]
fn external_renderer_follows_rules() {
    let train = examples(&items(21, 150));
    let m = trained(RenderMode::External, &train, 400);
    check_trends(&m, &items(22, 20));
}

#[test]
fn va_renderer_follows_rules_and_learns_eds() {
    let train = examples(&items(21, 150));
    let m = trained(RenderMode::Va, &train, 400);
    check_trends(&m, &items(22, 20));
    let untrained = RendererModel::new(
        &RendererConfig {
            mode: RenderMode::Va,
            ..Default::default()
        },
        EmotionSet::default(),
        SynthSpec::default().phone_symbols(),
    )
    .unwrap();
    assert!(m.corpus_loss(&train).unwrap().ed < untrained.corpus_loss(&train).unwrap().ed);
    let ed = m.predict_ed(&items(22, 1)[0].text()).unwrap();
    assert!(ed.phones.iter().flatten().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn memorizes_small_corpus() {
    let train = examples(&items(5, 10));
    for mode in [RenderMode::External, RenderMode::Va] {
        let m = trained(mode, &train, 300);
        let loss = m.corpus_loss(&train).unwrap().prosody;
        assert!(loss < 0.01, "{mode:?}: {loss}");
    }
}

#[test]
fn va_heads_get_gradient_on_corpus_batch() {
    let train = examples(&items(9, 4));
    let m = RendererModel::new(
        &RendererConfig {
            mode: RenderMode::Va,
            ..Default::default()
        },
        EmotionSet::default(),
        SynthSpec::default().phone_symbols(),
    )
    .unwrap();
    let names = m.param_names();
    let (g, _) = m.example_gradients(&train[0], 1.0).unwrap();
    for prefix in ["heads.utterance", "heads.word", "heads.phone"] {
        let mass: f64 = names
            .iter()
            .zip(&g.0)
            .filter(|(n, _)| n.starts_with(prefix))
            .flat_map(|(_, v)| v)
            .map(|v| v.abs())
            .sum();
        assert!(mass > 0.0, "{prefix}");
    }
}

#[test]
fn trained_model_round_trips() {
    let train = examples(&items(3, 6));
    let m = trained(RenderMode::External, &train, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("renderer.json");
    std::fs::write(&path, m.to_json()).unwrap();
    assert_eq!(RendererModel::load(&path).unwrap(), m);
}
