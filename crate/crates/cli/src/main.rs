use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opreason::corpus::{load_drop_json, to_drop_json, write_dump, RawInstance};
use opreason::dataset::{build_vocab, label_all, write_labels, Instance};
use opreason::eval::{
    comparison_csv, correlation_matrix, evaluate, p_at_n_csv, ComparisonRow, DecodeOptions, PredictionRecord,
};
use opreason::rules::{load_ruleset, operation_distribution, OperationSet, RuleSet};
use opreason::synth;
use opreason::tensor::GradcheckOptions;
use opreason::training::{gradcheck_joint_loss, metrics_csv, train_with, Checkpoint, Profile, TrainConfig};
use opreason::{Error, Result};

#[derive(Parser)]
#[command(name = "opreason", version, about = "Operation-pivoted discrete reasoning over paragraphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev pair in DROP json form.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        /// Training instances.
        #[arg(long, default_value_t = synth::DEFAULT_TRAIN_SIZE)]
        count: usize,
        #[arg(long, default_value_t = synth::DEFAULT_HELD_OUT_SIZE)]
        held_out: usize,
    },
    /// Parse a DROP json file and dump one JSON line per question.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach operation labels and answer derivations to every question.
    Label {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        setup: Setup,
        /// Metrics CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint; prints the metrics JSON.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Directory for metrics.json and metrics_by_kind.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one prediction per question as JSON lines.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operation diagnostics for a checkpoint, or a paired training comparison
    /// when given a train and a dev file.
    Analyze {
        /// One file with --ckpt; train then dev without it.
        #[arg(long, required = true, num_args = 1)]
        data: Vec<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the full training loss.
    Gradcheck {
        #[arg(long, default_value_t = 16)]
        dh: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ablate_op: bool,
        /// Report CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Setup {
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    ablate_op: bool,
}

impl Setup {
    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::profile(self.profile);
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            cfg.apply_text(&text)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(lambda) = self.lambda {
            cfg.lambda_op = lambda;
        }
        if self.ablate_op {
            cfg.model.ablate_op = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn rules(&self) -> Result<RuleSet> {
        load_rules(self.rules.as_deref())
    }
}

fn load_rules(path: Option<&Path>) -> Result<RuleSet> {
    match path {
        Some(p) => load_ruleset(p),
        None => Ok(RuleSet::bundled()),
    }
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn load_raw(path: &Path) -> Result<Vec<RawInstance>> {
    let ds = load_drop_json(path)?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ds.instances)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_error(p, e)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn write_in(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io_error(&path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_with(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let result = match path {
        Some(p) => {
            let file = fs::File::create(p).map_err(|e| io_error(p, e))?;
            let mut w = io::BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush())
        }
        None => f(&mut io::stdout().lock()),
    };
    result.map_err(|e| io_error(path.unwrap_or(Path::new("<stdout>")), e))
}

/// Labels `raws` against a checkpoint's vocabulary and sequence budget.
fn label_for(ckpt: &Checkpoint, raws: &[RawInstance], rules: &RuleSet) -> Result<Vec<Instance>> {
    label_all(raws, &ckpt.vocab, rules, ckpt.model.config.max_seq_len)
}

fn train_on(raws: &[RawInstance], cfg: &TrainConfig, rules: &RuleSet) -> Result<(Checkpoint, String)> {
    let vocab = build_vocab(raws, cfg.min_count);
    let instances = label_all(raws, &vocab, rules, cfg.model.max_seq_len)?;
    let outcome = train_with(&instances, &vocab, cfg, |m| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  loss_a {:.5}  loss_op {:.5}  train_em {:.4}",
            m.epoch, m.loss, m.loss_a, m.loss_op, m.train_em
        );
    })?;
    if outcome.skipped_batches > 0 {
        eprintln!("warning: skipped {} batches with non-finite gradients", outcome.skipped_batches);
    }
    Ok((outcome.checkpoint, metrics_csv(&outcome.metrics)))
}

enum Failure {
    /// Arguments that parse but do not fit together; exit status 1.
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth {
            out,
            seed,
            count,
            held_out,
        } => {
            let (train, dev) = synth::corpus(seed, count, held_out);
            create_dir(&out)?;
            for (name, set) in [("train.json", &train), ("dev.json", &dev)] {
                let text = serde_json::to_string_pretty(&to_drop_json(set)).expect("json values serialize");
                write_in(&out, name, &text)?;
            }
        }
        Command::Ingest { data, out } => {
            let raws = load_raw(&data)?;
            write_with(out.as_deref(), |w| write_dump(&raws, w))?;
        }
        Command::Label { data, setup, out } => {
            let cfg = setup.train_config()?;
            let raws = load_raw(&data)?;
            let vocab = build_vocab(&raws, cfg.min_count);
            let instances = label_all(&raws, &vocab, &setup.rules()?, cfg.model.max_seq_len)?;
            write_with(out.as_deref(), |w| write_labels(&instances, w))?;
        }
        Command::Train { data, ckpt, setup, out } => {
            let cfg = setup.train_config()?;
            let raws = load_raw(&data)?;
            let (checkpoint, csv) = train_on(&raws, &cfg, &setup.rules()?)?;
            checkpoint.save(&ckpt)?;
            write_out(out.as_deref(), &csv)?;
        }
        Command::Eval { data, ckpt, rules, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let instances = label_for(&checkpoint, &load_raw(&data)?, &load_rules(rules.as_deref())?)?;
            let (report, _) = evaluate(&checkpoint.model, &instances, &DecodeOptions::default())?;
            let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
            println!("{json}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_in(&dir, "metrics.json", &json)?;
                write_in(&dir, "metrics_by_kind.csv", &report.kind_csv())?;
            }
        }
        Command::Predict { data, ckpt, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let instances = label_for(&checkpoint, &load_raw(&data)?, &RuleSet::bundled())?;
            let (_, preds) = evaluate(&checkpoint.model, &instances, &DecodeOptions::default())?;
            write_with(out.as_deref(), |w| {
                for p in &preds {
                    serde_json::to_writer(&mut *w, &PredictionRecord::from(p))?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })?;
        }
        Command::Analyze { data, ckpt, setup, out } => match (ckpt, data.as_slice()) {
            (Some(ckpt), [dev]) => analyze_checkpoint(&ckpt, dev, &setup, &out)?,
            (None, [train, dev]) => analyze_paired(train, dev, &setup, &out)?,
            _ => {
                return Err(Failure::Usage(
                    "analyze takes --ckpt with one --data, or two --data files (train, dev)".into(),
                ))
            }
        },
        Command::Gradcheck {
            dh,
            heads,
            seed,
            ablate_op,
            out,
        } => {
            let mut config = TrainConfig::default().model_config(0);
            config.d_h = dh;
            config.n_h = heads;
            config.ablate_op = ablate_op;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let report = gradcheck_joint_loss(config, &GradcheckOptions::default())?;
            write_out(out.as_deref(), &report.to_csv())?;
            if !report.all_pass() {
                let worst = report.worst().expect("failing report has checks");
                return Err(Error::Gradcheck(format!(
                    "{} exceeds tolerance with relative error {:e}",
                    worst.name, worst.max_rel_err
                ))
                .into());
            }
        }
    }
    Ok(())
}

fn analyze_checkpoint(ckpt: &Path, data: &Path, setup: &Setup, out: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let instances = label_for(&checkpoint, &load_raw(data)?, &setup.rules()?)?;
    let (_, preds) = evaluate(&checkpoint.model, &instances, &DecodeOptions::default())?;
    create_dir(out)?;
    let gold: Vec<&OperationSet> = instances.iter().map(|i| &i.operations).collect();
    if checkpoint.model.config.ablate_op {
        eprintln!("note: ablated model has no operation selector; skipping p_at_n.csv");
    } else {
        let ps: Vec<&[f64]> = preds.iter().map(|p| p.p_op.as_slice()).collect();
        write_in(out, "p_at_n.csv", &p_at_n_csv(&ps, &gold)?)?;
    }
    write_in(out, "correlation.csv", &correlation_matrix(&preds).to_csv())?;
    write_in(out, "operation_distribution.csv", &operation_distribution(gold).to_csv())?;
    Ok(())
}

/// Trains the configured model and its variant under one seed and compares
/// them on `dev`. The variant is the ablation with --ablate-op, otherwise the
/// same model at --lambda (default 0).
fn analyze_paired(train: &Path, dev: &Path, setup: &Setup, out: &Path) -> Result<()> {
    let rules = setup.rules()?;
    let base = Setup {
        rules: None,
        config: setup.config.clone(),
        profile: setup.profile,
        seed: setup.seed,
        lambda: None,
        ablate_op: false,
    }
    .train_config()?;
    let mut variant = base.clone();
    let variant_name = if setup.ablate_op {
        variant.model.ablate_op = true;
        "without_operations"
    } else {
        variant.lambda_op = setup.lambda.unwrap_or(0.0);
        "variant_lambda"
    };
    let train_raws = load_raw(train)?;
    let dev_raws = load_raw(dev)?;
    let mut rows = Vec::new();
    for (name, cfg) in [("reference", &base), (variant_name, &variant)] {
        eprintln!("training {name}");
        let (checkpoint, _) = train_on(&train_raws, cfg, &rules)?;
        let instances = label_for(&checkpoint, &dev_raws, &rules)?;
        let (report, preds) = evaluate(&checkpoint.model, &instances, &cfg.decode_options())?;
        rows.push(ComparisonRow::new(name, &checkpoint.model, report, &preds, &instances)?);
    }
    let csv = comparison_csv(&rows);
    create_dir(out)?;
    write_in(out, "comparison.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(Error::Io { source, .. })) if source.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
