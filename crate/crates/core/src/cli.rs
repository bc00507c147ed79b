//! Command-line front end: `gen`, `train`, `align` and `eval`.
//!
//! Exit codes: 0 success, 2 usage or argument error, 3 I/O or format
//! error, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, CaModel, DecoderKind, HeadKind, ModelConfig};
use crate::synth::{generate_corpus, read_corpus, write_corpus, CorpusConfig, Split};
use crate::train::{evaluate, fit, write_loss_curve, LossKind, TrainConfig, DEFAULT_MARGINS};

/// Everything needed to regenerate an artifact.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Parser, Debug)]
#[command(name = "scoresync", version, about = "Performance-to-score alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Align one pair with a trained model.
    Align(AlignArgs),
    /// Evaluate a model and the DTW baseline on a corpus split.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pieces: Option<usize>,
    #[arg(long, value_parser = parse_fraction)]
    structural_frac: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Custom,
    Ce,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecoderArg {
    Sasa,
    Conv,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_enum)]
    decoder: Option<DecoderArg>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pair: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the model-grid similarity matrix and predicted grid path.
    #[arg(long)]
    emit_matrix: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Error margins in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MARGINS.to_vec())]
    margins: Vec<f64>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Include per-pair paths in the report.
    #[arg(long)]
    dump_paths: bool,
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?.corpus,
        None => CorpusConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.pieces {
        cfg.pieces = n;
    }
    if let Some(f) = args.structural_frac {
        cfg.structural_frac = f;
    }
    let corpus = generate_corpus(&cfg)?;
    write_corpus(&args.out, &corpus)?;
    let n_struct = corpus.pairs.iter().filter(|p| p.structural).count();
    println!("wrote {} pairs ({n_struct} structural) to {}", corpus.pairs.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(l) = args.loss {
        (cfg.train.loss_kind, cfg.model.head_kind) = match l {
            LossArg::Custom => (LossKind::Custom, HeadKind::Regression),
            LossArg::Ce => (LossKind::Ce, HeadKind::Classification),
        };
    }
    if let Some(d) = args.decoder {
        cfg.model.decoder_kind = match d {
            DecoderArg::Sasa => DecoderKind::Sasa,
            DecoderArg::Conv => DecoderKind::Conv,
        };
    }
    let expected_head = match cfg.train.loss_kind {
        LossKind::Custom => HeadKind::Regression,
        LossKind::Ce => HeadKind::Classification,
    };
    if cfg.model.head_kind != expected_head {
        return Err(Error::Config(format!(
            "loss {:?} needs the {:?} head",
            cfg.train.loss_kind, expected_head
        )));
    }
    cfg.train.validate()?;
    let corpus = read_corpus(&args.data)?;
    cfg.corpus = corpus.config.clone();
    let mut model = CaModel::new(cfg.model.clone())?;
    let quiet = args.quiet;
    let result = fit(&corpus, &mut model, &cfg.train, |e| {
        if !quiet {
            match e.val_loss {
                Some(v) => eprintln!("epoch {:>4}  train {:.6}  val {:.6}", e.epoch, e.train_loss, v),
                None => eprintln!("epoch {:>4}  train {:.6}", e.epoch, e.train_loss),
            }
        }
    })?;
    save_checkpoint(&args.out, &model)?;
    write_loss_curve(&args.out.join("loss.csv"), &result.curve)?;
    write_json(&args.out.join("run_config.json"), &cfg)?;
    match result.best_epoch {
        Some(e) => println!("saved epoch {e} weights to {}", args.out.display()),
        None => println!("saved initial weights to {}", args.out.display()),
    }
    Ok(())
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let model = load_checkpoint(&args.ckpt)?;
    let corpus = read_corpus(&args.data)?;
    let pair = corpus
        .get(&args.pair)
        .ok_or_else(|| Error::Argument(format!("no pair with id {:?}", args.pair)))?;
    let (path, grid, pred, meta) = model.predict_with_grid(pair)?;
    write_json(
        &args.out,
        &json!({
            "id": pair.id,
            "y_indices": path.y_indices,
            "frame_seconds": pair.frame_seconds,
        }),
    )?;
    if let Some(m) = &args.emit_matrix {
        let rows: Vec<&[f64]> = (0..grid.rows()).map(|i| grid.row(i)).collect();
        write_json(
            m,
            &json!({
                "id": pair.id,
                "grid_len": grid.rows(),
                "valid_cols": meta.valid_cols,
                "matrix": rows,
                "y_hat": pred.y_hat,
            }),
        )?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&args.ckpt)?;
    let corpus = read_corpus(&args.data)?;
    let (name, pairs) = match args.split {
        SplitArg::Train => ("train", corpus.split(Split::Train)),
        SplitArg::Val => ("val", corpus.split(Split::Val)),
        SplitArg::Test => ("test", corpus.split(Split::Test)),
        SplitArg::All => ("all", corpus.pairs.iter().collect()),
    };
    let report = evaluate(&pairs, &model, &args.margins, args.dump_paths)?;
    let mut value = serde_json::to_value(&report)?;
    value["split"] = json!(name);
    value["corpus_config"] = serde_json::to_value(&corpus.config)?;
    write_json(&args.report, &value)?;
    for (k, m) in report.margins.iter().enumerate() {
        let st = report
            .structural
            .as_ref()
            .map(|s| format!("  structural {:.1} vs {:.1}", s.model[k], s.baseline[k]))
            .unwrap_or_default();
        println!(
            "{:>5.0} ms  model {:.1}  dtw {:.1}{st}",
            m * 1000.0,
            report.overall.model[k],
            report.overall.baseline[k]
        );
    }
    Ok(())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Align(a) => cmd_align(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
