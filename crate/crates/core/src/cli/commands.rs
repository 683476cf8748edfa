use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use super::render::render_svgs;
use super::report::{EvalReport, EvalRow};
use super::{
    BacktranslateArgs, GenCorpusArgs, GenerateArgs, GridArgs, RenderArgs, TrainP2tArgs, TrainT2pArgs, UsageError,
};
use crate::data::{
    generate_synthetic_corpus, load_corpus, load_pose, save_pose, tokenize, write_corpus, CorpusSample, DatasetAdapter,
    ManifestDataset, PoseFormat, SourceKind, SyntheticSpec,
};
use crate::error::SignError;
use crate::metrics::dtw_pose;
use crate::nn::{ModelConfig, Pose2TextModel, Text2PoseModel};
use crate::train::{
    grid_search, init_pose2text, init_text2pose, train_pose2text, train_text2pose, TrainConfig, DEFAULT_GRID,
};

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    v.as_ref().ok_or_else(|| UsageError(format!("missing required flag --{flag}")).into())
}

fn parse_format(v: Option<&str>) -> anyhow::Result<PoseFormat> {
    match v.unwrap_or("text") {
        "text" => Ok(PoseFormat::Text),
        "binary" => Ok(PoseFormat::Binary),
        other => Err(UsageError(format!("--format: `{other}` is neither text nor binary")).into()),
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| SignError::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| SignError::io(path, e))?))
}

fn log_path(out: &Path, log: &Option<PathBuf>) -> PathBuf {
    log.clone().unwrap_or_else(|| {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".log.jsonl");
        out.with_file_name(name)
    })
}

fn load_split(corpus: &Path, dev: &Option<PathBuf>) -> anyhow::Result<(Vec<CorpusSample>, Vec<CorpusSample>)> {
    let train = load_corpus(corpus)?;
    let dev = match dev {
        Some(d) => load_corpus(d)?,
        None => train.clone(),
    };
    Ok((train, dev))
}

pub fn gen_corpus(a: &GenCorpusArgs) -> anyhow::Result<()> {
    let out = required(&a.out, "out")?;
    let d = SyntheticSpec::default();
    let mut spec = SyntheticSpec {
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
        motif_len_min: a.motif_len_min.unwrap_or(d.motif_len_min),
        motif_len_max: a.motif_len_max.unwrap_or(d.motif_len_max),
        sentence_len_min: a.sentence_len_min.unwrap_or(d.sentence_len_min),
        sentence_len_max: a.sentence_len_max.unwrap_or(d.sentence_len_max),
        noise_std: a.noise_std.unwrap_or(d.noise_std),
        seed: a.seed.unwrap_or(0),
        ..d
    };
    if let Some(n) = a.confusable_pairs {
        spec = spec.with_confusable_pairs(n);
    }
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let format = parse_format(a.format.as_deref())?;
    let n_train = a.samples.unwrap_or(50);
    let n_dev = a.dev_samples.unwrap_or(10);
    if n_train == 0 {
        return Err(UsageError("--samples must be at least 1".into()).into());
    }
    let all = generate_synthetic_corpus(&spec, n_train + n_dev)?;
    let (train, dev) = all.split_at(n_train);
    write_corpus(out.join("train"), train, Some(&spec), format)?;
    if !dev.is_empty() {
        write_corpus(out.join("dev"), dev, Some(&spec), format)?;
    }
    log::info!("wrote {n_train} train and {n_dev} dev samples to {}", out.display());
    Ok(())
}

pub fn train_t2p(a: &TrainT2pArgs) -> anyhow::Result<()> {
    let corpus = required(&a.corpus, "corpus")?;
    let out = required(&a.out, "out")?;
    let source: SourceKind = a
        .source
        .as_deref()
        .unwrap_or("gloss")
        .parse()
        .map_err(|e: SignError| UsageError(e.to_string()))?;
    let cfg = a.train.apply(TrainConfig::text2pose(), a.seed.unwrap_or(0))?;
    let model_cfg = a.model.apply(ModelConfig::text2pose());
    model_cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let (train, dev) = load_split(corpus, &a.dev)?;
    let model = init_text2pose(model_cfg, source, &train, cfg.seed)?;
    let lp = log_path(out, &a.log);
    let mut log = create(&lp)?;
    let outcome = train_text2pose(model, &train, &dev, &cfg, &mut log)?;
    log.flush().map_err(|e| SignError::io(&lp, e))?;
    outcome.model.save(out)?;
    log::info!(
        "best dev metric {:.6} at epoch {}; checkpoint {}",
        outcome.best_metric,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

pub fn train_p2t(a: &TrainP2tArgs) -> anyhow::Result<()> {
    let corpus = required(&a.corpus, "corpus")?;
    let out = required(&a.out, "out")?;
    let cfg = a.train.apply(TrainConfig::pose2text(), a.seed.unwrap_or(0))?;
    let model_cfg = a.model.apply(ModelConfig::pose2text());
    model_cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let (train, dev) = load_split(corpus, &a.dev)?;
    let model = init_pose2text(model_cfg, &train, cfg.seed)?;
    let lp = log_path(out, &a.log);
    let mut log = create(&lp)?;
    let outcome = train_pose2text(model, &train, &dev, &cfg, &mut log)?;
    log.flush().map_err(|e| SignError::io(&lp, e))?;
    outcome.model.save(out)?;
    log::info!(
        "best dev loss {:.6} at epoch {}; checkpoint {}",
        outcome.best_metric,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

/// `(id, tokens)` per input line; ids default to `l0001`, `l0002`, …
fn read_inputs(path: &Path, source: SourceKind) -> anyhow::Result<Vec<(String, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| SignError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let (id, body) = match line.split_once('\t') {
            Some((id, body)) => (id.trim().to_owned(), body),
            None => (format!("l{lineno:04}"), line),
        };
        let tokens = match source {
            SourceKind::Gloss => body.split_whitespace().map(str::to_owned).collect(),
            SourceKind::Text => tokenize(body),
        };
        if tokens.is_empty() || id.is_empty() {
            return Err(SignError::invalid("input", format!("{}: line {lineno} is empty", path.display())).into());
        }
        if id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(SignError::invalid("id", format!("line {lineno}: `{id}` is not a usable file name")).into());
        }
        out.push((id, tokens));
    }
    if out.is_empty() {
        return Err(SignError::Empty(format!("no input lines in {}", path.display())).into());
    }
    Ok(out)
}

pub fn generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let ckpt = required(&a.model, "model")?;
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let format = parse_format(a.format.as_deref())?;
    let model = Text2PoseModel::load(ckpt)?;
    let max_frames = a.max_frames.unwrap_or(model.config().max_seq_len);
    if max_frames == 0 {
        return Err(UsageError("--max-frames must be at least 1".into()).into());
    }
    let inputs = read_inputs(input, model.source())?;
    fs::create_dir_all(out).map_err(|e| SignError::io(out, e))?;
    for (id, tokens) in &inputs {
        let (ids, unknown) = model.token_ids(tokens);
        if !unknown.is_empty() {
            log::warn!("{id}: unknown tokens replaced by <unk>: {}", unknown.join(" "));
        }
        let pose = model.generate(&ids, max_frames)?;
        save_pose(out.join(format!("{id}.pose")), &pose, format)?;
    }
    log::info!("wrote {} pose files to {}", inputs.len(), out.display());
    Ok(())
}

/// References by id, plus ground-truth pose paths when the references come
/// from a corpus manifest.
type References = (BTreeMap<String, Vec<String>>, Option<ManifestDataset>);

fn read_references(path: &Path) -> anyhow::Result<References> {
    if path.is_dir() {
        let ds = ManifestDataset::open(path)?;
        return Ok((ds.references().into_iter().collect(), Some(ds)));
    }
    let text = fs::read_to_string(path).map_err(|e| SignError::io(path, e))?;
    let four_fields = text.lines().find(|l| !l.is_empty()).is_some_and(|l| l.split('\t').count() == 4);
    if four_fields {
        let ds = ManifestDataset::open(path)?;
        return Ok((ds.references().into_iter().collect(), Some(ds)));
    }
    let mut refs = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, sentence) = line.split_once('\t').ok_or_else(|| {
            SignError::invalid("references", format!("{}: line {} is not `id<TAB>sentence`", path.display(), n + 1))
        })?;
        refs.insert(id.to_owned(), tokenize(sentence));
    }
    Ok((refs, None))
}

pub fn backtranslate(a: &BacktranslateArgs) -> anyhow::Result<()> {
    let poses = required(&a.poses, "poses")?;
    let ckpt = required(&a.model, "model")?;
    let refs_path = required(&a.references, "references")?;
    let model = Pose2TextModel::load(ckpt)?;
    let (refs, manifest) = read_references(refs_path)?;
    let mut files: Vec<PathBuf> = fs::read_dir(poses)
        .map_err(|e| SignError::io(poses, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pose"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(SignError::Empty(format!("no .pose files in {}", poses.display())).into());
    }
    let mut rows = Vec::with_capacity(files.len());
    let mut dtws = Vec::new();
    for f in &files {
        let id = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let reference = refs
            .get(&id)
            .ok_or_else(|| SignError::invalid("references", format!("no reference for pose file `{id}`")))?;
        let pose = load_pose(f)?;
        let max_words = a.max_words.unwrap_or(2 * reference.len() + 2);
        let predicted = model.translate(&pose, max_words)?;
        if let Some(truth) = manifest.as_ref().and_then(|m| m.load(&id).ok()) {
            dtws.push(dtw_pose(&pose, &truth.pose)?.normalized_cost());
        }
        rows.push(EvalRow {
            id,
            reference: reference.clone(),
            predicted,
        });
    }
    let mean_dtw = (dtws.len() == rows.len()).then(|| dtws.iter().sum::<f64>() / dtws.len() as f64);
    let c = model.config();
    let config = vec![
        ("command".to_owned(), "backtranslate".to_owned()),
        ("model".to_owned(), ckpt.display().to_string()),
        ("poses".to_owned(), poses.display().to_string()),
        ("references".to_owned(), refs_path.display().to_string()),
        ("seed".to_owned(), a.seed.unwrap_or(0).to_string()),
        (
            "model_dims".to_owned(),
            format!(
                "embed_dim={} heads={} encoder_layers={} decoder_layers={} ff_dim={}",
                c.embed_dim, c.n_heads, c.n_encoder_layers, c.n_decoder_layers, c.ff_dim
            ),
        ),
        ("max_words".to_owned(), a.max_words.map_or("2*reference+2".to_owned(), |m| m.to_string())),
    ];
    let report = EvalReport::new(config, rows, mean_dtw)?;
    emit(&a.out, &report.to_string())
}

fn emit(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes()).map_err(|e| SignError::io(p, e))?;
            w.flush().map_err(|e| SignError::io(p, e))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_cells(v: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    v.split(',')
        .map(|cell| {
            let (a, b) = cell.trim().split_once(':').context("cell must look like a:b")?;
            Ok((a.trim().parse::<f64>()?, b.trim().parse::<f64>()?))
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(|e| UsageError(format!("--cells `{v}`: {e}")).into())
}

pub fn grid(a: &GridArgs) -> anyhow::Result<()> {
    let corpus = required(&a.corpus, "corpus")?;
    let p2t = required(&a.p2t, "p2t")?;
    let cells = match &a.cells {
        Some(v) => parse_cells(v)?,
        None => DEFAULT_GRID.to_vec(),
    };
    let arms = a
        .arms
        .as_deref()
        .unwrap_or("g2p,t2p")
        .split(',')
        .map(|s| s.trim().parse::<SourceKind>().map_err(|e| UsageError(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = a.train.apply(TrainConfig::text2pose(), a.seed.unwrap_or(0))?;
    let model_cfg = a.model.apply(ModelConfig::text2pose());
    model_cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let (train, dev) = load_split(corpus, &a.dev)?;
    let translator = Pose2TextModel::load(p2t)?;
    if let Some(dir) = &a.log_dir {
        fs::create_dir_all(dir).map_err(|e| SignError::io(dir, e))?;
    }
    let report = grid_search(&train, &dev, &translator, &model_cfg, &cfg, &cells, &arms, a.log_dir.as_deref())?;
    let failed = report.rows.iter().filter(|r| r.result.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} of {} grid cells failed", report.rows.len());
    }
    emit(&a.out, &report.to_string())
}

pub fn render(a: &RenderArgs) -> anyhow::Result<()> {
    let pose = required(&a.pose, "pose")?;
    let out = required(&a.out, "out")?;
    let stride = a.stride.unwrap_or(1);
    if stride == 0 {
        return Err(UsageError("--stride must be at least 1".into()).into());
    }
    let seq = load_pose(pose)?;
    let files = render_svgs(&seq, out, stride)?;
    log::info!("wrote {} SVG frames to {}", files.len(), out.display());
    Ok(())
}
