//! The `mir` command line: scoring, evaluation, losses, batch construction,
//! correlation and training over files in the `mir_core::io` formats.
//!
//! [`run`] is the whole program; `main` only forwards process arguments and
//! the exit code.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mir_core::gradcheck::{central_difference, max_relative_error, DEFAULT_STEP};
use mir_core::inference::{similarity, InferenceConfig, ScoreMethod, DEFAULT_PRIOR_TEMPERATURE};
use mir_core::io::{self, LabeledMatrix};
use mir_core::losses::{
    adaptive_mi_mm, ego_nce_with, hinge_kink_distance, info_nce, mi_mm, LossConfig, LossKind,
    LossResult, Margin, DEFAULT_POSITIVE_THRESHOLD, DEFAULT_TAU,
};
use mir_core::metrics::{evaluate_with, MetricsConfig};
use mir_core::sampling::{
    build_positive_sets, compute_correlation, sample_scene_negatives, ClipMeta, DEFAULT_WINDOW_SECS,
};
use mir_core::trainer::{train, Split, TrainConfig};
use mir_core::{validate_correlation, CorrelationMatrix, Error, Matrix};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mir",
    version,
    about = "Video-text retrieval losses, scoring and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every text against every video.
    Score(ScoreArgs),
    /// mAP and nDCG of a score matrix against a correlation matrix.
    Eval(EvalArgs),
    /// Evaluate a loss (and optionally check its gradient) on one batch.
    Loss(LossArgs),
    /// Positive sets and scene-negative pairing for a batch.
    Batch(BatchArgs),
    /// Action correlation between two metadata files.
    Correlation(CorrelationArgs),
    /// Fit projection heads on precomputed features.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    text_emb: PathBuf,
    #[arg(long)]
    video_emb: PathBuf,
    #[arg(long, default_value = "plain", value_parser = parse_method)]
    method: ScoreMethod,
    #[arg(long, default_value_t = DEFAULT_PRIOR_TEMPERATURE)]
    prior_temp: f64,
    /// Metadata for the text rows; its clip ids label the CSV rows.
    #[arg(long)]
    text_meta: Option<PathBuf>,
    /// Metadata for the video rows; its clip ids label the CSV columns.
    #[arg(long)]
    video_meta: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    correlation: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    map_cutoff: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long)]
    video_emb: PathBuf,
    #[arg(long)]
    text_emb: PathBuf,
    #[arg(long, value_parser = parse_loss)]
    loss: LossKind,
    /// Batch metadata: positive sets for EgoNCE, correlation for the margin
    /// losses when `--correlation` is absent.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    correlation: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Defaults to 0.2 for mimm and 0.4 for ada-mimm.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_POSITIVE_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    grad_check: bool,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    grad_step: f64,
}

#[derive(Debug, Args)]
struct BatchArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW_SECS)]
    window: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorrelationArgs {
    /// Text side (rows).
    #[arg(long)]
    meta_a: PathBuf,
    /// Video side (columns).
    #[arg(long)]
    meta_b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    features_video: PathBuf,
    #[arg(long)]
    features_text: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    /// Overrides `loss_kind` from the config file.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_head: Option<PathBuf>,
    #[arg(long)]
    out_curve: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<ScoreMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Training configuration file: every [`TrainConfig`] field plus the share of
/// rows held out for validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFileConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub validation_fraction: f64,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            validation_fraction: 0.2,
        }
    }
}

/// Rows held out for validation: spread evenly, `⌈f·n⌉` of them.
pub fn validation_rows(n: usize, fraction: f64) -> Vec<bool> {
    (0..n)
        .map(|i| ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor())
        .collect()
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            _ if e.is_numeric() => CliError::Numeric(e.to_string()),
            Error::InvalidConfig(_)
            | Error::NonPositiveTau(_)
            | Error::NonPositiveTemperature(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

/// Attaches the offending file to errors whose message lacks it.
fn in_file<T>(path: &Path, r: mir_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Data(m) if !m.contains(&*path.to_string_lossy()) => {
            CliError::Data(format!("{}: {m}", path.display()))
        }
        other => other,
    })
}

type CmdResult = Result<(), CliError>;

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let sink: &mut dyn Write = if informational { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return if informational { EXIT_OK } else { EXIT_USAGE };
        }
    };
    let result = match cli.command {
        Command::Score(a) => score(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Loss(a) => loss(a, out),
        Command::Batch(a) => batch(a, out),
        Command::Correlation(a) => correlation(a, out),
        Command::Train(a) => train_cmd(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "mir: {e}");
            e.code()
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn emit_text(text: &str, path: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

fn emit_json(doc: &Value, path: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let mut text = serde_json::to_string_pretty(doc).expect("JSON values serialize");
    text.push('\n');
    emit_text(&text, path, out)
}

fn config_comment(config: &Value) -> String {
    format!(" config: {config}")
}

fn clip_ids(path: Option<&PathBuf>, rows: usize, prefix: &str) -> Result<Vec<String>, CliError> {
    match path {
        None => Ok((0..rows).map(|i| format!("{prefix}{i}")).collect()),
        Some(p) => {
            let metas = io::parse_metadata(p)?;
            if metas.len() != rows {
                return Err(CliError::Data(format!(
                    "{}: {} records for {rows} embedding rows",
                    p.display(),
                    metas.len()
                )));
            }
            Ok(metas.into_iter().map(|m| m.clip_id).collect())
        }
    }
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = InferenceConfig {
        method: a.method,
        prior_temperature: a.prior_temp,
    };
    let text = in_file(&a.text_emb, io::read_embeddings(&a.text_emb))?;
    let video = in_file(&a.video_emb, io::read_embeddings(&a.video_emb))?;
    let scores = cfg.score(&similarity(&text, &video)?)?;
    let config = json!({
        "command": "score",
        "text_emb": path_str(&a.text_emb),
        "video_emb": path_str(&a.video_emb),
        "text_meta": a.text_meta.as_deref().map(path_str),
        "video_meta": a.video_meta.as_deref().map(path_str),
        "inference": cfg,
    });
    let labeled = LabeledMatrix {
        comments: vec![config_comment(&config)],
        corner: "text\\video".into(),
        row_ids: clip_ids(a.text_meta.as_ref(), text.rows(), "t")?,
        col_ids: clip_ids(a.video_meta.as_ref(), video.rows(), "v")?,
        matrix: scores.into_inner(),
    };
    emit_text(&labeled.to_csv_string(), a.out.as_deref(), out)
}

fn read_correlation(path: &Path) -> Result<(LabeledMatrix, CorrelationMatrix), CliError> {
    let labeled = in_file(path, LabeledMatrix::read(path))?;
    let corr = in_file(path, validate_correlation(labeled.matrix.clone()))?;
    Ok((labeled, corr))
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CmdResult {
    let scores = in_file(&a.scores, LabeledMatrix::read(&a.scores))?;
    let (corr_labels, corr) = read_correlation(&a.correlation)?;
    if scores.matrix.shape() != corr.shape() {
        return Err(CliError::Data(format!(
            "scores are {}x{} but correlation is {}x{}",
            scores.matrix.rows(),
            scores.matrix.cols(),
            corr.rows(),
            corr.cols()
        )));
    }
    if scores.row_ids != corr_labels.row_ids || scores.col_ids != corr_labels.col_ids {
        return Err(CliError::Data(format!(
            "row/column ids of {} do not match {}",
            a.scores.display(),
            a.correlation.display()
        )));
    }
    let cfg = MetricsConfig {
        map_cutoff: a.map_cutoff,
    };
    let report = in_file(&a.scores, evaluate_with(&scores.matrix, &corr, &cfg))?;
    let doc = json!({
        "config": {
            "command": "eval",
            "scores": path_str(&a.scores),
            "correlation": path_str(&a.correlation),
            "metrics": cfg,
            "scores_header": scores.comments,
            "correlation_header": corr_labels.comments,
        },
        "report": report,
    });
    emit_json(&doc, a.out.as_deref(), out)
}

fn loss(a: LossArgs, out: &mut dyn Write) -> CmdResult {
    let video = in_file(&a.video_emb, io::read_embeddings(&a.video_emb))?;
    let text = in_file(&a.text_emb, io::read_embeddings(&a.text_emb))?;
    let cfg = LossConfig {
        tau: a.tau,
        gamma: a.gamma.unwrap_or_else(|| a.loss.default_gamma()),
        positive_threshold: a.threshold,
    };
    cfg.validate()?;
    let n = video.rows();
    let meta = match &a.meta {
        Some(p) => {
            let m = io::parse_metadata(p)?;
            if m.len() != n {
                return Err(CliError::Data(format!(
                    "{}: {} records for a batch of {n}",
                    p.display(),
                    m.len()
                )));
            }
            Some(m)
        }
        None => None,
    };

    let kind = a.loss;
    let positives = match kind {
        LossKind::EgoNce => Some(build_positive_sets(meta.as_deref().ok_or_else(|| {
            CliError::Usage("--loss egonce needs --meta for positive sets".into())
        })?)),
        _ => None,
    };
    let corr = match kind {
        LossKind::MiMm | LossKind::AdaptiveMiMm => Some(match (&a.correlation, &meta) {
            (Some(p), _) => read_correlation(p)?.1,
            (None, Some(m)) => compute_correlation(m, m),
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "--loss {kind} needs --correlation or --meta"
                )))
            }
        }),
        _ => None,
    };
    let active = vec![true; n];
    let eval = |v: &Matrix, t: &Matrix| -> mir_core::Result<LossResult> {
        match kind {
            LossKind::InfoNce => info_nce(v, t, cfg.tau),
            LossKind::EgoNce => ego_nce_with(
                v,
                t,
                positives.as_ref().expect("built above"),
                &active,
                cfg.tau,
            ),
            LossKind::MiMm => mi_mm(
                v,
                t,
                corr.as_ref().expect("built above"),
                cfg.gamma,
                cfg.positive_threshold,
            ),
            LossKind::AdaptiveMiMm => adaptive_mi_mm(
                v,
                t,
                corr.as_ref().expect("built above"),
                cfg.gamma,
                cfg.positive_threshold,
            ),
        }
    };
    let result = eval(&video, &text)?;

    let grad_check = if a.grad_check {
        if a.grad_step.is_nan() || a.grad_step <= 0.0 {
            return Err(CliError::Usage(format!(
                "--grad-step must be positive, got {}",
                a.grad_step
            )));
        }
        let nv = central_difference(&video, a.grad_step, |x| Ok(eval(x, &text)?.value))?;
        let nt = central_difference(&text, a.grad_step, |x| Ok(eval(&video, x)?.value))?;
        let kink = match (kind, &corr) {
            (LossKind::MiMm, Some(c)) => Some(hinge_kink_distance(
                &video,
                &text,
                c,
                Margin::Fixed(cfg.gamma),
                cfg.positive_threshold,
            )?),
            (LossKind::AdaptiveMiMm, Some(c)) => Some(hinge_kink_distance(
                &video,
                &text,
                c,
                Margin::Adaptive(cfg.gamma),
                cfg.positive_threshold,
            )?),
            _ => None,
        };
        Some(json!({
            "step": a.grad_step,
            "max_relative_error_video": max_relative_error(&result.grad_video, &nv),
            "max_relative_error_text": max_relative_error(&result.grad_text, &nt),
            "max_relative_error": max_relative_error(&result.grad_video, &nv).max(max_relative_error(&result.grad_text, &nt)),
            "kink_distance": kink,
            "kink_adjacent": kink.map(|k| k <= a.grad_step),
        }))
    } else {
        None
    };

    let doc = json!({
        "config": {
            "command": "loss",
            "video_emb": path_str(&a.video_emb),
            "text_emb": path_str(&a.text_emb),
            "meta": a.meta.as_deref().map(path_str),
            "correlation": a.correlation.as_deref().map(path_str),
            "loss": kind,
            "tau": cfg.tau,
            "gamma": cfg.gamma,
            "threshold": cfg.positive_threshold,
            "grad_check": a.grad_check,
        },
        "batch_size": n,
        "loss": result.value,
        "grad_check": grad_check,
    });
    emit_json(&doc, None, out)
}

fn batch(a: BatchArgs, out: &mut dyn Write) -> CmdResult {
    let metas = io::parse_metadata(&a.meta)?;
    let pool = io::parse_metadata(&a.pool)?;
    let positives = build_positive_sets(&metas);
    let pairing = sample_scene_negatives(&metas, &pool, a.window, a.seed)?;
    let pairs: Vec<Value> = metas
        .iter()
        .zip(&pairing)
        .map(|(m, p)| {
            json!({
                "clip_id": m.clip_id,
                "pool_index": p,
                "negative_clip_id": p.map(|k| pool[k].clip_id.clone()),
            })
        })
        .collect();
    let doc = json!({
        "config": {
            "command": "batch",
            "meta": path_str(&a.meta),
            "pool": path_str(&a.pool),
            "window": a.window,
            "seed": a.seed,
        },
        "clip_ids": metas.iter().map(|m| m.clip_id.as_str()).collect::<Vec<_>>(),
        "positive_sets": positives.iter().collect::<Vec<_>>(),
        "pairing": pairs,
    });
    emit_json(&doc, a.out.as_deref(), out)
}

fn correlation(a: CorrelationArgs, out: &mut dyn Write) -> CmdResult {
    let texts = io::parse_metadata(&a.meta_a)?;
    let videos = io::parse_metadata(&a.meta_b)?;
    let corr = compute_correlation(&texts, &videos);
    let config = json!({
        "command": "correlation",
        "meta_a": path_str(&a.meta_a),
        "meta_b": path_str(&a.meta_b),
    });
    let labeled = LabeledMatrix {
        comments: vec![config_comment(&config)],
        corner: "text\\video".into(),
        row_ids: texts.into_iter().map(|m| m.clip_id).collect(),
        col_ids: videos.into_iter().map(|m| m.clip_id).collect(),
        matrix: corr.into_inner(),
    };
    emit_text(&labeled.to_csv_string(), a.out.as_deref(), out)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<TrainFileConfig>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => TrainFileConfig::default(),
    };
    if let Some(kind) = a.loss {
        cfg.train.loss_kind = kind;
    }
    cfg.train = cfg.train.resolved();
    if !(0.0..1.0).contains(&cfg.validation_fraction) || cfg.validation_fraction == 0.0 {
        return Err(CliError::Usage(format!(
            "validation_fraction must lie in (0, 1), got {}",
            cfg.validation_fraction
        )));
    }
    cfg.train.validate()?;

    let video = in_file(&a.features_video, io::read_matrix(&a.features_video))?;
    let text = in_file(&a.features_text, io::read_matrix(&a.features_text))?;
    let meta: Vec<ClipMeta> = io::parse_metadata(&a.meta)?;
    let all = in_file(&a.meta, Split::new(video, text, meta))?;
    let held = validation_rows(all.len(), cfg.validation_fraction);
    let (val_rows, train_rows): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|&i| held[i]);
    let (head, curve) = train(&all.select(&train_rows), &all.select(&val_rows), &cfg.train)?;

    if let Some(p) = &a.out_head {
        io::write_head(&head, p)?;
    }
    let mut doc = json!({
        "command": "train",
        "features_video": path_str(&a.features_video),
        "features_text": path_str(&a.features_text),
        "meta": path_str(&a.meta),
        "out_head": a.out_head.as_deref().map(path_str),
        "train_rows": train_rows.len(),
        "validation_rows": val_rows.len(),
    });
    let file_cfg = serde_json::to_value(&cfg).expect("config serializes");
    doc.as_object_mut()
        .expect("object")
        .extend(file_cfg.as_object().expect("object").clone());
    let mut text =
        String::from("# optimizer: plain gradient descent (no momentum, no adaptive moments)\n");
    text.push_str(&format!("#{}\n", config_comment(&doc)));
    text.push_str("epoch,loss,map_avg,ndcg_avg\n");
    for r in &curve.records {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.loss, r.map_avg, r.ndcg_avg
        ));
    }
    emit_text(&text, a.out_curve.as_deref(), out)
}
