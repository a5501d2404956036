use std::io::Write;
use std::path::{Path, PathBuf};

use gprompt::adapter::{
    grad_check as check_gradients, load_adapter, save_adapter, train_with_log, AdapterConfig, AdapterParams,
    GraphAdapter,
};
use gprompt::eval::{
    auc, rank_tokens_by_auc, run_protocol, standardize, zero_shot_predict, zero_shot_scores, MetricsReport,
    RawVocabSet, TokenRef, VocabSet,
};
use gprompt::features::{build_feature_matrix, filter_std, filter_vocab, NodeFeatures};
use gprompt::numerics::DenseMatrix;
use gprompt::synthetic::{generate, token_strings};
use gprompt::tag::{load_bundle, save_bundle, Bundle};
use serde::Serialize;
use serde_json::json;

use crate::labels::{binary, load_labels};
use crate::{
    CliError, Common, ExtractArgs, FewShotArgs, FilterSpec, GradCheckArgs, InterpretArgs, LabelArgs, RunConfig,
    SynthArgs, TrainArgs, ZeroShotArgs,
};

type CliResult<T> = Result<T, CliError>;

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if common.out.is_some() {
        cfg.out.clone_from(&common.out);
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

/// `GPROMPT_THREADS` overrides the configured worker count.
fn threads(configured: usize) -> usize {
    match std::env::var("GPROMPT_THREADS") {
        Ok(_) => gprompt::threads_from_env(),
        Err(_) => configured.max(1),
    }
}

fn pick(flag: &Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| CliError::Config(format!("missing input: pass --{what} or set inputs.{what}")))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: gprompt::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        gprompt::Error::Io(io) => CliError::io(path, io),
        other => CliError::Core(other),
    })
}

fn open_bundle(path: &Path) -> CliResult<Bundle> {
    with_path(path, load_bundle(path))
}

fn open_features(path: &Path) -> CliResult<NodeFeatures> {
    with_path(path, NodeFeatures::load(path))
}

fn emit(log: &mut dyn Write, value: serde_json::Value) -> CliResult<()> {
    writeln!(log, "{value}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

/// Adapter dimensions come from the file; ablation and self-loops from the config.
fn open_adapter(path: &Path, cfg: &AdapterConfig) -> CliResult<GraphAdapter> {
    let params: AdapterParams = with_path(path, load_adapter(path))?;
    let config = AdapterConfig {
        d_a: params.gate_dim(),
        mlp_depth: params.mlp.len(),
        mlp_hidden: if params.mlp.len() > 1 {
            params.mlp[0].output_dim()
        } else {
            cfg.mlp_hidden
        },
        ..cfg.clone()
    };
    Ok(GraphAdapter::new(config, params)?)
}

fn labels_for(args: &LabelArgs, cfg: &mut RunConfig, rows: usize) -> CliResult<Vec<usize>> {
    if args.labels.is_some() {
        cfg.inputs.labels.clone_from(&args.labels);
    }
    if args.positive_label.is_some() {
        cfg.inputs.positive_label = args.positive_label;
    }
    let path = pick(&None, &cfg.inputs.labels, "labels")?;
    let labels = load_labels(&path, cfg.inputs.positive_label)?;
    if labels.len() != rows {
        return Err(CliError::invalid(format!("{} labels for {rows} nodes", labels.len())));
    }
    Ok(labels)
}

pub(crate) fn gen_synth(args: SynthArgs, log: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        cfg.synth.seed = s;
    }
    let dir = out_dir(&cfg)?;
    let (bundle, truth) = generate(&cfg.synth)?;
    let bundle_path = dir.join("bundle.gpb");
    with_path(&bundle_path, save_bundle(&bundle, &bundle_path))?;
    with_path(&bundle_path, load_bundle(&bundle_path))?.validate()?;
    write_json(&dir.join("truth.json"), &truth.sidecar())?;

    let names = token_strings(&cfg.synth);
    let sets: Vec<RawVocabSet> = (0..cfg.synth.topics)
        .map(|c| RawVocabSet {
            label: format!("topic{c}"),
            positive: cfg
                .synth
                .topic_tokens(c)
                .map(|t| TokenRef::Name(names[t].clone()))
                .collect(),
            negative: Vec::new(),
        })
        .collect();
    write_json(&dir.join("vocab_sets.json"), &sets)?;
    emit(
        log,
        json!({
            "bundle": bundle_path,
            "nodes": bundle.num_nodes(),
            "edges": bundle.graph.num_edges() / 2,
            "masked_records": bundle.masked.len(),
        }),
    )
}

pub(crate) fn train_adapter(args: TrainArgs, log: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        cfg.train.seed = s;
    }
    if let Some(a) = args.ablation {
        cfg.adapter.ablation = a;
    }
    cfg.inputs.bundle = Some(pick(&args.bundle, &cfg.inputs.bundle, "bundle")?);
    let bundle = open_bundle(cfg.inputs.bundle.as_deref().unwrap())?;
    let dir = out_dir(&cfg)?;
    let mut tcfg = cfg.train.clone();
    tcfg.threads = threads(tcfg.threads);

    let mut lines = String::new();
    let mut io_err = None;
    let (adapter, history) = train_with_log(&bundle, &cfg.adapter, &tcfg, |e| {
        lines.push_str(&json!({"epoch": e.epoch, "mean_loss": e.mean_loss}).to_string());
        lines.push('\n');
        let line = json!({"epoch": e.epoch, "mean_loss": e.mean_loss, "seconds": e.seconds});
        if let Err(err) = writeln!(log, "{line}") {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(CliError::io(Path::new("<stdout>"), e));
    }

    let adapter_path = dir.join("adapter.gpa");
    with_path(&adapter_path, save_adapter(&adapter.params, &adapter_path))?;
    write_bytes(&dir.join("train_log.jsonl"), lines.as_bytes())?;
    write_json(
        &dir.join("train_summary.json"),
        &json!({
            "steps": history.steps,
            "epochs": history.epoch_losses.len(),
            "final_loss": history.epoch_losses.last(),
            "num_params": adapter.params.num_params(),
            "head_checksum": format!("{:016x}", bundle.head.checksum()),
            "config": cfg.echo(),
        }),
    )?;
    emit(
        log,
        json!({"adapter": adapter_path, "steps": history.steps, "seconds": history.seconds}),
    )
}

fn resolve_tokens(refs: &[TokenRef], bundle: Option<&Bundle>, vocab: usize) -> CliResult<Vec<u32>> {
    refs.iter()
        .map(|r| match (r, bundle) {
            (TokenRef::Id(id), _) if (*id as usize) < vocab => Ok(*id),
            (TokenRef::Id(id), _) => Err(CliError::invalid(format!("token id {id} out of range for T = {vocab}"))),
            (TokenRef::Name(s), Some(b)) => Ok(b.resolve_token(s)?),
            (TokenRef::Name(s), None) => Err(CliError::invalid(format!(
                "token {s:?} given by name; pass --bundle to resolve it"
            ))),
        })
        .collect()
}

pub(crate) fn extract_features(args: ExtractArgs, log: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(a) = args.ablation {
        cfg.adapter.ablation = a;
    }
    if let Some(p) = args.prompt_id {
        cfg.features.prompt_id = p;
    }
    if let Some(f) = &args.filter {
        cfg.features.filter.clone_from(f);
    }
    if let Some(p) = &args.pooling {
        cfg.features.pooling.clone_from(p);
    }
    if cfg.features.pooling != "arithmetic" {
        return Err(CliError::Config(format!(
            "pooling {:?} is not supported for feature extraction",
            cfg.features.pooling
        )));
    }
    let filter: FilterSpec = cfg.features.filter.parse()?;
    cfg.inputs.bundle = Some(pick(&args.bundle, &cfg.inputs.bundle, "bundle")?);
    cfg.inputs.adapter = Some(pick(&args.adapter, &cfg.inputs.adapter, "adapter")?);
    let bundle = open_bundle(cfg.inputs.bundle.as_deref().unwrap())?;
    let adapter = open_adapter(cfg.inputs.adapter.as_deref().unwrap(), &cfg.adapter)?;
    let dir = out_dir(&cfg)?;

    let y = build_feature_matrix(&adapter, &bundle, cfg.features.prompt_id, threads(1))?;
    let features = match &filter {
        FilterSpec::Std(m) => filter_std(&y, (*m).min(y.cols()))?,
        FilterSpec::Vocab(path) => {
            let refs: Vec<TokenRef> = read_json(path)?;
            filter_vocab(&y, &resolve_tokens(&refs, Some(&bundle), bundle.vocab_size())?)?
        }
    };
    let (bin, csv) = (dir.join("features.gpf"), dir.join("features.csv"));
    features
        .save(&bin, &csv, |t| bundle.token_label(t))
        .map_err(|e| with_path::<()>(&dir, Err(e)).unwrap_err())?;
    emit(
        log,
        json!({"features": bin, "csv": csv, "rows": features.values.rows(), "columns": features.tokens.len()}),
    )
}

/// Node-by-token matrix and the token id of every column.
fn score_matrix(args: &ZeroShotArgs, cfg: &RunConfig, bundle: Option<&Bundle>) -> CliResult<(DenseMatrix, Vec<u32>)> {
    if let Some(path) = &cfg.inputs.features {
        let f = open_features(path)?;
        return Ok((f.values, f.tokens));
    }
    let bundle = bundle.ok_or_else(|| CliError::Config("pass --features or --bundle".into()))?;
    let y = match &args.adapter.clone().or_else(|| cfg.inputs.adapter.clone()) {
        Some(path) => {
            let adapter = open_adapter(path, &cfg.adapter)?;
            build_feature_matrix(&adapter, bundle, cfg.features.prompt_id, threads(1))?
        }
        None => {
            // plain language-model distributions of the prompt states
            let index = bundle.prompt_index(cfg.features.prompt_id);
            let mut y = DenseMatrix::zeros(bundle.num_nodes(), bundle.vocab_size());
            for (i, r) in index.iter().enumerate() {
                let r = r.ok_or_else(|| {
                    gprompt::Error::NotFound(format!("prompt {} missing for node {i}", cfg.features.prompt_id))
                })?;
                y.row_mut(i)
                    .copy_from_slice(&bundle.head.predict(&bundle.prompts[r].hidden)?);
            }
            y
        }
    };
    Ok((y, (0..bundle.vocab_size() as u32).collect()))
}

fn to_columns(set: &VocabSet, tokens: &[u32]) -> CliResult<VocabSet> {
    let col = |t: &u32| {
        tokens
            .iter()
            .position(|x| x == t)
            .map(|c| c as u32)
            .ok_or_else(|| CliError::invalid(format!("token {t} of set {:?} is not a feature column", set.label)))
    };
    Ok(VocabSet {
        label: set.label.clone(),
        positive: set.positive.iter().map(col).collect::<CliResult<_>>()?,
        negative: set.negative.iter().map(col).collect::<CliResult<_>>()?,
    })
}

pub(crate) fn zero_shot(args: ZeroShotArgs, log: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(a) = args.ablation {
        cfg.adapter.ablation = a;
    }
    if args.features.is_some() {
        cfg.inputs.features.clone_from(&args.features);
    }
    if args.bundle.is_some() {
        cfg.inputs.bundle.clone_from(&args.bundle);
    }
    if args.adapter.is_some() {
        cfg.inputs.adapter.clone_from(&args.adapter);
    }
    if args.vocab.is_some() {
        cfg.zero_shot.vocab_sets.clone_from(&args.vocab);
    }
    let bundle = cfg.inputs.bundle.as_deref().map(open_bundle).transpose()?;
    let (y, tokens) = score_matrix(&args, &cfg, bundle.as_ref())?;
    let labels = labels_for(&args.labels, &mut cfg, y.rows())?;

    let vocab_path = pick(&None, &cfg.zero_shot.vocab_sets, "vocab")?;
    let raw: serde_json::Value = read_json(&vocab_path)?;
    let raw_sets: Vec<RawVocabSet> = match raw {
        serde_json::Value::Array(_) => serde_json::from_value(raw),
        other => serde_json::from_value(other).map(|s| vec![s]),
    }
    .map_err(|e| CliError::Config(format!("{}: {e}", vocab_path.display())))?;
    if raw_sets.is_empty() {
        return Err(CliError::invalid("no vocab sets given"));
    }
    let vocab = bundle.as_ref().map_or(u32::MAX as usize, Bundle::vocab_size);
    let sets = raw_sets
        .iter()
        .map(|s| {
            let set = VocabSet {
                label: s.label.clone(),
                positive: resolve_tokens(&s.positive, bundle.as_ref(), vocab)?,
                negative: resolve_tokens(&s.negative, bundle.as_ref(), vocab)?,
            };
            to_columns(&set, &tokens)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let report = if sets.len() == 1 {
        let truth = binary(&labels)?;
        let scores = zero_shot_scores(&y, &sets[0])?;
        MetricsReport::new("auc", vec![auc(&scores, &truth)?], cfg.echo())
    } else {
        if let Some(&l) = labels.iter().find(|&&l| l >= sets.len()) {
            return Err(CliError::invalid(format!(
                "label {l} has no vocab set ({} sets)",
                sets.len()
            )));
        }
        let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(CliError::invalid("labels contain a single class"));
        }
        let pred = zero_shot_predict(&y, &sets)?;
        let hits = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        MetricsReport::new("accuracy", vec![hits as f64 / labels.len() as f64], cfg.echo())
    };
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("zero_shot.json"), &report)?;
    emit(log, json!({"metric": report.metric, "mean": report.mean}))
}

pub(crate) fn few_shot(args: FewShotArgs, log: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        cfg.few_shot.seed = s;
    }
    cfg.inputs.features = Some(pick(&args.features, &cfg.inputs.features, "features")?);
    cfg.inputs.bundle = Some(pick(&args.bundle, &cfg.inputs.bundle, "bundle")?);
    let features = open_features(cfg.inputs.features.as_deref().unwrap())?;
    let bundle = open_bundle(cfg.inputs.bundle.as_deref().unwrap())?;
    if features.values.rows() != bundle.num_nodes() {
        return Err(CliError::invalid(format!(
            "{} feature rows for {} nodes",
            features.values.rows(),
            bundle.num_nodes()
        )));
    }
    let labels = labels_for(&args.labels, &mut cfg, bundle.num_nodes())?;
    let mut fcfg = cfg.few_shot.clone();
    fcfg.threads = threads(fcfg.threads);
    let graph = bundle.graph.add_self_loops();
    let mut report = run_protocol(&standardize(&features.values), &graph, &labels, &fcfg)?;
    report.config = cfg.echo();
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("few_shot.json"), &report)?;
    emit(
        log,
        json!({"metric": report.metric, "mean": report.mean, "std": report.std}),
    )
}

pub(crate) fn interpret(args: InterpretArgs, log: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(k) = args.k {
        cfg.interpret.top_k = k;
    }
    if args.bundle.is_some() {
        cfg.inputs.bundle.clone_from(&args.bundle);
    }
    cfg.inputs.features = Some(pick(&args.features, &cfg.inputs.features, "features")?);
    let features = open_features(cfg.inputs.features.as_deref().unwrap())?;
    let bundle = cfg.inputs.bundle.as_deref().map(open_bundle).transpose()?;
    let labels = labels_for(&args.labels, &mut cfg, features.values.rows())?;
    let truth = binary(&labels)?;

    let ranked = rank_tokens_by_auc(&features.values, &truth, cfg.interpret.top_k)?;
    let rows: Vec<serde_json::Value> = ranked
        .iter()
        .map(|&(col, a)| {
            let id = features.tokens[col as usize];
            let token = bundle.as_ref().map_or_else(|| id.to_string(), |b| b.token_label(id));
            json!({"token": token, "id": id, "auc": a})
        })
        .collect();
    let dir = out_dir(&cfg)?;
    write_json(
        &dir.join("interpret.json"),
        &json!({"rows": rows, "config": cfg.echo()}),
    )?;
    for r in &rows {
        writeln!(
            log,
            "{}\t{:.6}",
            r["token"].as_str().unwrap_or_default(),
            r["auc"].as_f64().unwrap_or(f64::NAN)
        )
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

pub(crate) fn grad_check(args: GradCheckArgs, log: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.common.seed {
        cfg.grad_check.seed = s;
    }
    if let Some(a) = args.ablation {
        cfg.adapter.ablation = a;
    }
    cfg.inputs.bundle = Some(pick(&args.bundle, &cfg.inputs.bundle, "bundle")?);
    let bundle = open_bundle(cfg.inputs.bundle.as_deref().unwrap())?;
    let report = check_gradients(&bundle, &cfg.adapter, &cfg.grad_check)?;
    let dir = out_dir(&cfg)?;
    write_json(
        &dir.join("grad_check.json"),
        &json!({"report": report, "config": cfg.echo()}),
    )?;
    emit(log, json!({"max_rel_err": report.max_rel_err, "pass": report.pass}))?;
    if !report.pass {
        return Err(CliError::CheckFailed(report.max_rel_err, report.tolerance));
    }
    Ok(())
}
