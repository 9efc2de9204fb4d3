use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::ValueEnum;
use hedkit::corpus::{self, Corpus, RuleRenderer};
use hedkit::editing::{intensity_sweep, parse_log, EditSession, SweepTemplate};
use hedkit::hed::{self, mean_abs_diff, replicate, LevelMae};
use hedkit::metrics::{score_contours, EvalReport};
use hedkit::predictor::{eval_predictor, train_predictor, PredictorConfig, TeacherForcing};
use hedkit::ranker::{train_all, LabeledFeatures};
use hedkit::renderer::{train_renderer, RendererConfig, Scope};
use hedkit::signal::{analyze, load_external_features, read_wav, DEFAULT_FRAME_S, DEFAULT_HOP_S};
use hedkit::{
    CorpusItem, EdPredictor, EmotionSet, HierarchicalEd, Level, Policy, PredictMode, ProsodyRenderer, RankTrainConfig,
    RankerBundle, RenderMode, RendererModel, Segmentation, SynthSpec, TrainConfig,
};
use serde::Serialize;

use crate::fsio::{
    check_output_dir, check_output_file, load_alignment, load_ed_set, parse_text, read_text, require_dir, require_file,
    save_ed_set, write_atomic, write_dir_atomic,
};
use crate::service::{self, Models};
use crate::{
    Cli, CliError, Command, EditArgs, EvalArgs, ExtractHedArgs, FormatArg, GenCorpusArgs, LevelArg, ModeArg, PolicyArg,
    PredictArgs, RenderArgs, RenderModeArg, ServeArgs, Settings, SweepArgs, TextSource, TrainArgs, TrainPredictorArgs,
    TrainRankerArgs, TrainRendererArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// Phrase used by `sweep` when no text is given.
pub const DEMO_TEXT: &str = "S AH N | L AE M P | G OW Z";

pub fn dispatch(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let ctx = Ctx {
        settings,
        seed_flag: cli.seed,
    };
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&ctx, a),
        Command::TrainRanker(a) => train_ranker(&ctx, a),
        Command::ExtractHed(a) => extract_hed(a),
        Command::TrainPredictor(a) => train_predictor_cmd(&ctx, a),
        Command::Predict(a) => predict(a),
        Command::TrainRenderer(a) => train_renderer_cmd(&ctx, a),
        Command::Render(a) => render(a),
        Command::Edit(a) => edit(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    }
}

struct Ctx {
    settings: Settings,
    seed_flag: Option<u64>,
}

impl Ctx {
    fn seed(&self, section: &str) -> Result<u64> {
        match self.seed_flag {
            Some(s) => Ok(s),
            None => Ok(self.settings.u64(section, "seed")?.unwrap_or(0)),
        }
    }

    fn train_config(&self, section: &str, a: &TrainArgs, defaults: TrainConfig) -> Result<TrainConfig> {
        let s = &self.settings;
        let cfg = TrainConfig {
            learning_rate: pick(a.lr, s.f64(section, "lr")?, defaults.learning_rate),
            epochs: pick(a.epochs, s.usize(section, "epochs")?, defaults.epochs),
            batch_size: pick(a.batch_size, s.usize(section, "batch_size")?, defaults.batch_size),
            momentum: pick(a.momentum, s.f64(section, "momentum")?, defaults.momentum),
            seed: self.seed(section)?,
            clip_norm: defaults.clip_norm,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn enum_setting<E: ValueEnum>(&self, section: &str, key: &str) -> Result<Option<E>> {
        match self.settings.str(section, key)? {
            None => Ok(None),
            Some(v) => E::from_str(&v.replace('_', "-"), true)
                .map(Some)
                .map_err(|_| CliError::Data(format!("config [{section}] {key}: unknown value {v:?}"))),
        }
    }
}

fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    require_dir(dir)?;
    Ok(corpus::load(dir)?)
}

/// Corpus items, with their EDs replaced by an extracted set when given.
fn corpus_items(dir: &Path, eds: Option<&Path>) -> Result<(Corpus, Vec<CorpusItem>)> {
    let corpus = load_corpus(dir)?;
    let mut items = corpus.items.clone();
    if let Some(eds) = eds {
        let mut set = load_ed_set(eds)?;
        for it in &mut items {
            let ed = set
                .remove(&it.id)
                .ok_or_else(|| CliError::Data(format!("{}: no ED for item {}", eds.display(), it.id)))?;
            ed.validate(Some(&it.segmentation))
                .map_err(|e| CliError::Data(format!("ED for item {}: {e}", it.id)))?;
            it.ed = ed;
        }
    }
    if items.is_empty() {
        return Err(CliError::Data(format!("{}: corpus is empty", dir.display())));
    }
    Ok((corpus, items))
}

fn vocabulary(items: &[CorpusItem]) -> BTreeSet<String> {
    items.iter().flat_map(|it| it.text().into_iter().flatten()).collect()
}

fn read_text_source(t: &TextSource) -> Result<Vec<Vec<String>>> {
    match (&t.text, &t.text_file) {
        (Some(s), _) => parse_text(s),
        (None, Some(p)) => {
            require_file(p)?;
            parse_text(read_text(p)?.trim())
        }
        (None, None) => Err(CliError::Usage("one of --text or --text-file is required".into())),
    }
}

/// Words and timing from an alignment, or nominal timing for plain text.
fn words_and_segmentation(text: Option<&str>, alignment: Option<&Path>) -> Result<(Vec<Vec<String>>, Segmentation)> {
    match (text, alignment) {
        (_, Some(a)) => {
            let seg = load_alignment(a)?;
            Ok((seg.phone_symbols(), seg))
        }
        (Some(t), None) => {
            let words = parse_text(t)?;
            let seg = Segmentation::nominal(&words, hedkit::editing::NOMINAL_PHONE_S)?;
            Ok((words, seg))
        }
        (None, None) => Err(CliError::Usage("one of --text or --alignment is required".into())),
    }
}

fn load_predictor(path: &Path) -> Result<EdPredictor> {
    require_file(path)?;
    Ok(EdPredictor::load(path)?)
}

fn load_renderer(path: &Path) -> Result<RendererModel> {
    require_file(path)?;
    Ok(RendererModel::load(path)?)
}

fn load_ed(path: &Path) -> Result<HierarchicalEd> {
    require_file(path)?;
    Ok(HierarchicalEd::load(path)?)
}

fn rule_spec(corpus: Option<&Path>) -> Result<SynthSpec> {
    match corpus {
        None => Ok(SynthSpec::default()),
        Some(dir) => load_corpus(dir)?
            .spec
            .ok_or_else(|| CliError::Data(format!("{}: corpus has no generator spec", dir.display()))),
    }
}

fn gen_corpus(ctx: &Ctx, a: GenCorpusArgs) -> Result<()> {
    const SEC: &str = "gen-corpus";
    check_output_dir(&a.out)?;
    let mut spec = match &a.spec {
        Some(p) => {
            require_file(p)?;
            serde_json::from_str::<SynthSpec>(&read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    spec.seed = ctx.seed(SEC)?;
    if let Some(n) = a.n.or(ctx.settings.usize(SEC, "n")?) {
        spec.n_items = n;
    }
    if a.audio || ctx.settings.bool(SEC, "audio")?.unwrap_or(false) {
        spec.synth_audio = true;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = Corpus::generate(spec)?;
    write_dir_atomic(&a.out, |dir| Ok(corpus::save(dir, &corpus)?))?;
    println!("wrote {} items to {}", corpus.items.len(), a.out.display());
    Ok(())
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    require_file(path)?;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if row.len() != 2 {
            return Err(CliError::Data(format!("{}: expected `id,label` rows", path.display())));
        }
        out.insert(row[0].trim().to_string(), row[1].trim().to_string());
    }
    Ok(out)
}

fn train_ranker(ctx: &Ctx, a: TrainRankerArgs) -> Result<()> {
    const SEC: &str = "train-ranker";
    check_output_file(&a.out)?;
    let s = &ctx.settings;
    let defaults = RankTrainConfig::default();
    let cfg = RankTrainConfig {
        reg_lambda: pick(a.lambda, s.f64(SEC, "lambda")?, defaults.reg_lambda),
        epochs: pick(a.epochs, s.usize(SEC, "epochs")?, defaults.epochs),
        learning_rate: pick(a.lr, s.f64(SEC, "lr")?, defaults.learning_rate),
        seed: ctx.seed(SEC)?,
    };
    let (dataset, corpus_emotions) = match (&a.corpus, &a.features, &a.labels) {
        (Some(dir), _, _) => {
            let corpus = load_corpus(dir)?;
            let emotions = corpus.spec.as_ref().map(|s| s.emotions.clone());
            (corpus::utterance_features(&corpus.items)?, emotions)
        }
        (None, Some(features), Some(labels)) => {
            require_file(features)?;
            let feats = load_external_features(features)?;
            let labels = read_labels(labels)?;
            let mut dataset = Vec::with_capacity(labels.len());
            for (id, label) in labels {
                let f = feats
                    .get(&id)
                    .ok_or_else(|| CliError::Data(format!("no features for labelled segment {id:?}")))?;
                dataset.push(LabeledFeatures {
                    label,
                    features: f.clone(),
                });
            }
            (dataset, None)
        }
        _ => return Err(CliError::Usage("give --corpus, or --features with --labels".into())),
    };
    let emotions = match &a.emotions {
        Some(list) => EmotionSet::new(list.clone()).map_err(|e| CliError::Usage(e.to_string()))?,
        None => corpus_emotions.unwrap_or_default(),
    };
    let bundle = train_all(&dataset, &emotions, &cfg)?;
    write_atomic(&a.out, bundle.to_json().as_bytes())?;
    println!("trained {} rankers on {} samples", bundle.models().len(), dataset.len());
    Ok(())
}

fn extract_hed(a: ExtractHedArgs) -> Result<()> {
    require_file(&a.rankers)?;
    let bundle = RankerBundle::load(&a.rankers)?;
    if let Some(dir) = &a.corpus {
        check_output_dir(&a.out)?;
        let corpus = load_corpus(dir)?;
        let mut eds = BTreeMap::new();
        for it in &corpus.items {
            let track = it.frame_track()?;
            let ed = hed::extract(&track, &it.segmentation, &bundle).map_err(|e| CliError::Data(format!("item {}: {e}", it.id)))?;
            eds.insert(it.id.clone(), ed);
        }
        write_dir_atomic(&a.out, |d| save_ed_set(d, &eds))?;
        println!("extracted {} EDs to {}", eds.len(), a.out.display());
        return Ok(());
    }
    let (Some(wav), Some(alignment)) = (&a.wav, &a.alignment) else {
        return Err(CliError::Usage("give --corpus, or --wav with --alignment".into()));
    };
    check_output_file(&a.out)?;
    require_file(wav)?;
    let seg = load_alignment(alignment)?;
    let track = analyze(&read_wav(wav)?, DEFAULT_FRAME_S, DEFAULT_HOP_S)?;
    let ed = hed::extract(&track, &seg, &bundle)?;
    write_atomic(&a.out, ed.to_json().as_bytes())
}

fn train_predictor_cmd(ctx: &Ctx, a: TrainPredictorArgs) -> Result<()> {
    const SEC: &str = "train-predictor";
    check_output_file(&a.out)?;
    if let Some(h) = &a.history {
        check_output_file(h)?;
    }
    let s = &ctx.settings;
    let mode = a.mode.or(ctx.enum_setting(SEC, "mode")?).unwrap_or(ModeArg::MultiStep);
    let defaults = PredictorConfig::default();
    let cfg = PredictorConfig {
        mode: match mode {
            ModeArg::MultiStep => PredictMode::MultiStep,
            ModeArg::SingleStep => PredictMode::SingleStep,
        },
        embed_dim: pick(a.embed_dim, s.usize(SEC, "embed_dim")?, defaults.embed_dim),
        hidden: pick(a.hidden, s.usize(SEC, "hidden")?, defaults.hidden),
        seed: ctx.seed(SEC)?,
    };
    let tc = ctx.train_config(
        SEC,
        &a.train,
        TrainConfig {
            learning_rate: 0.1,
            epochs: 150,
            batch_size: 8,
            ..TrainConfig::default()
        },
    )?;
    let (_, items) = corpus_items(&a.corpus, a.eds.as_deref())?;
    let emotions = items[0].ed.emotions.clone();
    let mut pred = match &a.encoder_from {
        Some(r) => EdPredictor::with_encoder(&cfg, emotions, load_renderer(r)?.encoder)?,
        None => EdPredictor::new(&cfg, emotions, vocabulary(&items))?,
    };
    let examples: Vec<_> = items.iter().map(CorpusItem::ed_example).collect();
    let history = train_predictor(&mut pred, &examples, &tc)?;
    write_atomic(&a.out, pred.to_json().as_bytes())?;
    if let Some(h) = &a.history {
        write_atomic(h, to_json(&history).as_bytes())?;
    }
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    println!(
        "final loss: utterance {:.6}, words {:.6}, phones {:.6}",
        last(&history.utterance),
        last(&history.words),
        last(&history.phones)
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_output_file(o)?;
    }
    let pred = load_predictor(&a.predictor)?;
    let words = read_text_source(&a.text)?;
    let ed = pred.predict_text(&words)?;
    emit(a.out.as_deref(), &ed.to_json())
}

fn train_renderer_cmd(ctx: &Ctx, a: TrainRendererArgs) -> Result<()> {
    const SEC: &str = "train-renderer";
    check_output_file(&a.out)?;
    if let Some(h) = &a.history {
        check_output_file(h)?;
    }
    let s = &ctx.settings;
    let mode = a.mode.or(ctx.enum_setting(SEC, "mode")?).unwrap_or(RenderModeArg::External);
    let defaults = RendererConfig::default();
    let cfg = RendererConfig {
        mode: match mode {
            RenderModeArg::External => RenderMode::External,
            RenderModeArg::Va => RenderMode::Va,
        },
        embed_dim: pick(a.embed_dim, s.usize(SEC, "embed_dim")?, defaults.embed_dim),
        hidden: pick(a.hidden, s.usize(SEC, "hidden")?, defaults.hidden),
        seed: ctx.seed(SEC)?,
        ..defaults
    };
    let weight = pick(a.va_loss_weight, s.f64(SEC, "va_loss_weight")?, 1.0);
    let tc = ctx.train_config(
        SEC,
        &a.train,
        TrainConfig {
            learning_rate: 0.05,
            epochs: 400,
            batch_size: 8,
            ..TrainConfig::default()
        },
    )?;
    let (corpus, items) = corpus_items(&a.corpus, a.eds.as_deref())?;
    let n_speakers = corpus.spec.as_ref().map_or(0, |s| s.n_speakers);
    let n_speakers = n_speakers.max(items.iter().map(|it| it.speaker + 1).max().unwrap_or(1));
    let cfg = RendererConfig { n_speakers, ..cfg };
    let mut model = RendererModel::new(&cfg, items[0].ed.emotions.clone(), vocabulary(&items))?;
    let examples: Vec<_> = items.iter().map(CorpusItem::render_example).collect();
    model.init_output_bias(&examples)?;
    let history = train_renderer(&mut model, &examples, &tc, weight)?;
    write_atomic(&a.out, model.to_json().as_bytes())?;
    if let Some(h) = &a.history {
        write_atomic(h, to_json(&history).as_bytes())?;
    }
    println!(
        "final loss: prosody {:.6}, ed {:.6}",
        history.prosody.last().copied().unwrap_or(f64::NAN),
        history.ed.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_output_file(o)?;
    }
    let model = load_renderer(&a.renderer)?;
    let (words, seg) = words_and_segmentation(a.text.as_deref(), a.alignment.as_deref())?;
    let ed = match (&a.ed, &a.predictor) {
        (Some(p), _) => load_ed(p)?,
        (None, Some(p)) => load_predictor(p)?.predict_text(&words)?,
        (None, None) if model.mode == RenderMode::Va => model.predict_ed(&words)?,
        (None, None) => return Err(CliError::Usage("an external-mode renderer needs --ed or --predictor".into())),
    };
    let aligned = replicate(&ed, &seg)?;
    let contour = model.render_text(&words, &aligned, a.speaker)?;
    emit(a.out.as_deref(), &contour.to_json())
}

fn edit(a: EditArgs) -> Result<()> {
    check_output_file(&a.out)?;
    if let Some(o) = &a.ed_out {
        check_output_file(o)?;
    }
    require_file(&a.log)?;
    let predictor = a.predictor.as_deref().map(load_predictor).transpose()?.map(Arc::new);
    let mut session = if let Some(p) = &a.session {
        require_file(p)?;
        EditSession::from_json(&read_text(p)?, predictor)?
    } else if let Some(ed) = &a.ed {
        let (_, seg) = words_and_segmentation(a.text.as_deref(), a.alignment.as_deref())?;
        EditSession::from_extracted(load_ed(ed)?, seg, predictor)?
    } else {
        let (Some(text), Some(pred)) = (&a.text, predictor) else {
            return Err(CliError::Usage("give --session, --ed with --text/--alignment, or --text with --predictor".into()));
        };
        EditSession::from_text(pred, &parse_text(text)?)?
    };
    let records = parse_log(&read_text(&a.log)?)?;
    for (i, rec) in records.iter().enumerate() {
        session
            .apply_record(rec)
            .map_err(|e| CliError::Data(format!("{}: edit {i}: {e}", a.log.display())))?;
    }
    write_atomic(&a.out, session.to_json().as_bytes())?;
    if let Some(o) = &a.ed_out {
        write_atomic(o, session.current().to_json().as_bytes())?;
    }
    println!("applied {} edits", records.len());
    Ok(())
}

fn level_of(l: LevelArg) -> Level {
    match l {
        LevelArg::Utterance => Level::Utterance,
        LevelArg::Word => Level::Word,
        LevelArg::Phoneme => Level::Phoneme,
    }
}

/// `word:1`, `phoneme:3`, `utterance`.
fn parse_target(s: &str) -> Result<(Level, usize)> {
    let (name, index) = match s.split_once(':') {
        Some((n, i)) => (n, i.trim().parse().map_err(|_| CliError::Usage(format!("bad index in target {s:?}")))?),
        None => (s, 0),
    };
    let level = LevelArg::from_str(name.trim(), true).map_err(|_| CliError::Usage(format!("bad level in target {s:?}")))?;
    Ok((level_of(level), index))
}

/// `utterance`, `word:I`, `phone:I` (or `phoneme:I`).
pub fn parse_scope(s: &str) -> Result<Scope> {
    let bad = || CliError::Usage(format!("bad scope {s:?}; use utterance, word:I or phone:I"));
    match s.split_once(':') {
        None if s.trim() == "utterance" => Ok(Scope::Utterance),
        Some((name, i)) => {
            let i: usize = i.trim().parse().map_err(|_| bad())?;
            match name.trim() {
                "word" => Ok(Scope::Word(i)),
                "phone" | "phoneme" => Ok(Scope::Phone(i)),
                _ => Err(bad()),
            }
        }
        None => Err(bad()),
    }
}

pub fn scope_for(level: Level, index: usize) -> Scope {
    match level {
        Level::Utterance => Scope::Utterance,
        Level::Word => Scope::Word(index),
        Level::Phoneme => Scope::Phone(index),
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_output_file(o)?;
    }
    if a.values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("sweep values must be finite".into()));
    }
    let mut targets = Vec::new();
    if let Some(l) = a.level {
        targets.push((level_of(l), a.index));
    }
    for t in &a.target {
        targets.push(parse_target(t)?);
    }
    let scope = match &a.scope {
        Some(s) => parse_scope(s)?,
        None => scope_for(targets[0].0, targets[0].1),
    };
    let (renderer, emotions, embedded): (Box<dyn ProsodyRenderer>, EmotionSet, Option<EdPredictor>) = match &a.renderer {
        Some(p) => {
            let model = load_renderer(p)?;
            let emotions = model.emotions.clone();
            let embedded = model.ed_predictor();
            (Box::new(model), emotions, embedded)
        }
        None => {
            let spec = rule_spec(a.corpus.as_deref())?;
            let emotions = spec.emotions.clone();
            (Box::new(RuleRenderer::new(spec)?), emotions, None)
        }
    };
    let text = match (&a.text, &a.alignment) {
        (None, None) => Some(DEMO_TEXT),
        (t, _) => t.as_deref(),
    };
    let (words, seg) = words_and_segmentation(text, a.alignment.as_deref())?;
    let predictor = match &a.predictor {
        Some(p) => Some(load_predictor(p)?),
        None => embedded,
    }
    .map(Arc::new);
    let ed = match (&a.ed, &predictor) {
        (Some(p), _) => load_ed(p)?,
        (None, Some(pred)) => pred.predict_text(&words)?,
        (None, None) => HierarchicalEd::constant(emotions, &seg, 0.0),
    };
    let session = EditSession::from_extracted(ed, seg, predictor)?;
    let template = SweepTemplate {
        emotion: a.emotion.clone(),
        targets,
        policy: match a.policy {
            PolicyArg::Hold => Policy::Hold,
            PolicyArg::Repredict => Policy::Repredict,
        },
    };
    let points = intensity_sweep(&session, &template, &a.values, renderer.as_ref(), a.speaker, scope)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["value", "pitch_mean", "pitch_std", "energy_mean", "energy_std", "duration"])
        .map_err(data)?;
    for p in &points {
        let s = &p.stats;
        w.serialize((p.value, s.pitch_mean, s.pitch_std, s.energy_mean, s.energy_std, s.duration_s))
            .map_err(data)?;
    }
    let bytes = w.into_inner().map_err(data)?;
    emit(a.out.as_deref(), std::str::from_utf8(&bytes).map_err(data)?)
}

#[derive(Debug, Serialize)]
struct MaeRow {
    upstream: TeacherForcing,
    #[serde(flatten)]
    mae: LevelMae,
}

#[derive(Debug, Serialize)]
struct MaeReport {
    mode: PredictMode,
    items: usize,
    rows: Vec<MaeRow>,
}

fn load_eds(path: &Path) -> Result<BTreeMap<String, HierarchicalEd>> {
    if path.is_dir() {
        load_ed_set(path)
    } else {
        Ok(BTreeMap::from([(String::new(), load_ed(path)?)]))
    }
}

fn mae_csv_header() -> [&'static str; 4] {
    ["phonemes", "words", "utterance", "average"]
}

fn eval(a: EvalArgs) -> Result<()> {
    if let Some(o) = &a.out {
        check_output_file(o)?;
    }
    let format = a.format.unwrap_or_else(|| match a.out.as_ref().and_then(|p| p.extension()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => FormatArg::Csv,
        _ => FormatArg::Json,
    });
    let text = if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let pred = load_eds(pred)?;
        let gt = load_eds(gt)?;
        if pred.keys().ne(gt.keys()) {
            return Err(CliError::Data("predicted and reference EDs cover different items".into()));
        }
        let reports = pred
            .iter()
            .map(|(id, p)| mean_abs_diff(p, &gt[id]).map_err(|e| CliError::Data(format!("item {id:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mae = LevelMae::mean_of(&reports);
        match format {
            FormatArg::Json => to_json(&mae),
            FormatArg::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(mae_csv_header()).map_err(data)?;
                w.serialize((mae.phonemes, mae.words, mae.utterance, mae.average)).map_err(data)?;
                String::from_utf8(w.into_inner().map_err(data)?).map_err(data)?
            }
        }
    } else if let Some(dir) = &a.corpus {
        let (_, items) = corpus_items(dir, a.eds.as_deref())?;
        let predictor = a.predictor.as_deref().map(load_predictor).transpose()?;
        match (&a.renderer, predictor) {
            (Some(r), predictor) => {
                let model = load_renderer(r)?;
                let scores = items
                    .iter()
                    .map(|it| {
                        let ed = match &predictor {
                            Some(p) => p.predict_text(&it.text())?,
                            None => it.ed.clone(),
                        };
                        let aligned = replicate(&ed, &it.segmentation)?;
                        let rendered = model.render_text(&it.text(), &aligned, it.speaker)?;
                        score_contours(&it.id, &it.contour, &rendered)
                    })
                    .collect::<hedkit::Result<Vec<_>>>()?;
                let report = EvalReport::new(scores);
                match format {
                    FormatArg::Json => report.to_json(),
                    FormatArg::Csv => report.to_csv()?,
                }
            }
            (None, Some(pred)) => {
                let examples: Vec<_> = items.iter().map(CorpusItem::ed_example).collect();
                let mut upstreams = vec![TeacherForcing::Predicted];
                if pred.mode() == PredictMode::MultiStep {
                    upstreams.push(TeacherForcing::GroundTruth);
                }
                let rows = upstreams
                    .into_iter()
                    .map(|tf| Ok(MaeRow {
                        upstream: tf,
                        mae: eval_predictor(&pred, &examples, tf)?,
                    }))
                    .collect::<Result<Vec<_>>>()?;
                let report = MaeReport {
                    mode: pred.mode(),
                    items: examples.len(),
                    rows,
                };
                match format {
                    FormatArg::Json => to_json(&report),
                    FormatArg::Csv => {
                        let mut w = csv::Writer::from_writer(Vec::new());
                        let mut header = vec!["upstream"];
                        header.extend(mae_csv_header());
                        w.write_record(header).map_err(data)?;
                        for r in &report.rows {
                            let name = match r.upstream {
                                TeacherForcing::Predicted => "predicted",
                                TeacherForcing::GroundTruth => "ground_truth",
                            };
                            w.serialize((name, r.mae.phonemes, r.mae.words, r.mae.utterance, r.mae.average))
                                .map_err(data)?;
                        }
                        String::from_utf8(w.into_inner().map_err(data)?).map_err(data)?
                    }
                }
            }
            (None, None) => return Err(CliError::Usage("--corpus needs --predictor and/or --renderer".into())),
        }
    } else {
        return Err(CliError::Usage("give --pred with --gt, or --corpus".into()));
    };
    emit(a.out.as_deref(), &text)
}

fn serve(a: ServeArgs) -> Result<()> {
    let predictor = a.predictor.as_deref().map(load_predictor).transpose()?;
    let (renderer, embedded): (Option<Arc<dyn ProsodyRenderer + Send + Sync>>, Option<EdPredictor>) =
        match (&a.renderer, a.rule_renderer) {
            (Some(p), _) => {
                let model = load_renderer(p)?;
                let embedded = model.ed_predictor();
                (Some(Arc::new(model)), embedded)
            }
            (None, true) => (Some(Arc::new(RuleRenderer::new(rule_spec(a.corpus.as_deref())?)?)), None),
            (None, false) => (None, None),
        };
    let models = Models {
        predictor: predictor.or(embedded).map(Arc::new),
        renderer,
    };
    let snapshot_dir: Option<PathBuf> = a.snapshot_dir.clone();
    if let Some(d) = &snapshot_dir {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }
    let state = service::AppState::new(models, std::time::Duration::from_secs(a.ttl_secs), snapshot_dir);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Data(format!("runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {}: {e}", a.bind)))?;
        eprintln!("listening on {}", listener.local_addr().map_err(data)?);
        service::serve(listener, state, service::shutdown_signal()).await.map_err(data)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_and_scopes() {
        assert_eq!(parse_target("word:2").unwrap(), (Level::Word, 2));
        assert_eq!(parse_target("utterance").unwrap(), (Level::Utterance, 0));
        assert!(parse_target("syllable:1").is_err());
        assert!(parse_target("word:x").is_err());
        assert_eq!(parse_scope("phone:3").unwrap(), Scope::Phone(3));
        assert_eq!(parse_scope("phoneme:3").unwrap(), Scope::Phone(3));
        assert_eq!(parse_scope("utterance").unwrap(), Scope::Utterance);
        assert!(parse_scope("word").is_err());
        assert_eq!(scope_for(Level::Word, 1), Scope::Word(1));
    }

    #[test]
    fn demo_text_uses_default_inventory() {
        let symbols = SynthSpec::default().phone_symbols();
        for p in parse_text(DEMO_TEXT).unwrap().iter().flatten() {
            assert!(symbols.contains(p), "{p}");
        }
    }
}
