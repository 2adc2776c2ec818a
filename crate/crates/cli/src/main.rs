use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pyranet_core::dataset::{self, decode_image, preprocess, split_dataset};
use pyranet_core::training::{self, check_gradients, csv_line, GradCheckOptions};
use pyranet_core::{
    evaluate, load_model, predict, save_model, shape_plan, Dataset, Network, PyraNetConfig,
    TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "pyranet",
    version,
    about = "Train and run the PyraNet hazard classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on a class-folder dataset
    Train(TrainArgs),
    /// Evaluate a model and write a JSON report
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Classify one image
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Write the synthetic texture benchmark
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Print the shape plan and parameter count of a model
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Compare analytic and finite-difference gradients
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, default_value_t = 1000)]
        sample_params: usize,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Seeds initialization and the train/held-out split
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Fraction of each class used for training; 1 trains on everything
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Stop once the epoch MSE reaches this; 0 disables early stopping
    #[arg(long, default_value_t = 0.08)]
    target_mse: f64,
    #[arg(long, default_value_t = 1.2)]
    eta_plus: f64,
    #[arg(long, default_value_t = 0.5)]
    eta_minus: f64,
    #[arg(long, default_value_t = TrainConfig::default().delta0)]
    delta0: f64,
    #[arg(long, default_value_t = 50.0)]
    delta_max: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Also write the per-epoch CSV, with a header of hyperparameters
    #[arg(long)]
    log: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<pyranet_core::Error> for Failure {
    fn from(e: pyranet_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(args) => train(args),
        Command::Eval {
            model,
            data,
            report,
        } => {
            let net = load_model(&model)?;
            let ds = load(&data)?;
            let r = evaluate(&net, &ds)?;
            fs::write(&report, r.to_json() + "\n").map_err(io_failure(&report))?;
            println!(
                "samples={} mse={} accuracy={}",
                r.samples, r.mse, r.accuracy
            );
            Ok(())
        }
        Command::Predict { model, image } => {
            let net = load_model(&model)?;
            let bytes = fs::read(&image).map_err(io_failure(&image))?;
            let tensor = preprocess(&decode_image(&bytes)?)?;
            let p = predict(&net, &tensor)?;
            let scores: Vec<String> = p.scores.iter().map(f64::to_string).collect();
            println!("{}\t{}", p.label, scores.join("\t"));
            Ok(())
        }
        Command::Synth {
            out,
            per_class,
            seed,
        } => {
            if per_class == 0 {
                return Err(Failure::Usage("--per-class must be at least 1".into()));
            }
            let n = dataset::write_dataset(&out, per_class, seed)?;
            println!("wrote {n} images to {}", out.display());
            Ok(())
        }
        Command::Inspect { model } => {
            let net = load_model(&model)?;
            for layer in shape_plan(net.config())? {
                println!("{:<6}{}", layer.name, layer.shape);
            }
            let names = ["C1", "C3", "C5", "F6"];
            for (name, bank) in names.iter().zip(net.params.banks()) {
                println!("{name} params {} ({})", bank.num_params(), bank.describe());
            }
            println!("parameters {}", net.num_params());
            Ok(())
        }
        Command::Gradcheck {
            seed,
            tolerance,
            sample_params,
        } => {
            let (net, sample) = training::gradcheck_fixture(PyraNetConfig::default(), seed)?;
            let options = GradCheckOptions {
                tolerance,
                sample_params,
                seed,
                ..GradCheckOptions::default()
            };
            let r = check_gradients(&net, &sample, &options)?;
            println!(
                "seed={seed} checked={} skipped_kinks={} max_rel_error={:e} max_abs_error={:e} \
                 worst_param={} analytic={:e} numeric={:e}",
                r.checked,
                r.skipped_kinks,
                r.max_rel_error,
                r.max_abs_error,
                r.worst_param,
                r.analytic,
                r.numeric
            );
            if r.passed() {
                println!("PASS (tolerance {tolerance:e})");
                Ok(())
            } else {
                Err(Failure::Data(format!(
                    "gradient check failed: {:e} > {tolerance:e}",
                    r.max_rel_error
                )))
            }
        }
    }
}

fn load(root: &Path) -> Result<Dataset, Failure> {
    let report = dataset::load_dataset(root, false)?;
    if !report.skipped.is_empty() {
        eprintln!("skipped {} undecodable files", report.skipped.len());
    }
    Ok(report.dataset)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    if !(args.train_frac > 0.0 && args.train_frac <= 1.0) {
        return Err(Failure::Usage(format!(
            "--train-frac must be in (0, 1], got {}",
            args.train_frac
        )));
    }
    if args.threads == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    let config = TrainConfig {
        epochs: args.epochs,
        eta_plus: args.eta_plus,
        eta_minus: args.eta_minus,
        delta0: args.delta0,
        delta_max: args.delta_max,
        seed: args.seed,
        target_mse: args.target_mse,
        threads: args.threads,
        ..TrainConfig::default()
    };
    config
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let all = load(&args.data)?;
    let (train_set, held_out) = if args.train_frac < 1.0 {
        split_dataset(&all, args.train_frac, args.seed)?
    } else {
        (all, Dataset::default())
    };

    let mut log = match &args.log {
        Some(path) => {
            let file = File::create(path).map_err(io_failure(path))?;
            let mut w = BufWriter::new(file);
            write_log_header(&mut w, &config, &args, train_set.len(), held_out.len())
                .map_err(io_failure(path))?;
            Some((path, w))
        }
        None => None,
    };

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "epoch,mse,accuracy");
    let mut log_error = None;
    let net = Network::init(PyraNetConfig::default(), args.seed)?;
    let (net, history) = training::fit_with(net, &train_set, &config, |m| {
        let line = csv_line(m);
        let _ = writeln!(out, "{line}");
        if let Some((_, w)) = log.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                log_error.get_or_insert(e);
            }
        }
    })?;
    if let Some((path, mut w)) = log {
        if let Some(e) = log_error {
            return Err(io_failure(path)(e));
        }
        w.flush().map_err(io_failure(path))?;
    }

    save_model(&net, &args.out)?;
    if let Some(last) = history.last() {
        eprintln!(
            "trained {} epochs on {} samples: mse={} accuracy={}",
            history.len(),
            train_set.len(),
            last.mse,
            last.accuracy
        );
    }
    if !held_out.is_empty() {
        let r = evaluate(&net, &held_out)?;
        eprintln!(
            "held-out {} samples: mse={} accuracy={}",
            r.samples, r.mse, r.accuracy
        );
    }
    Ok(())
}

/// Everything that shapes the trajectory; `--threads` is left out on purpose so
/// logs compare equal across worker counts.
fn write_log_header(
    w: &mut impl Write,
    c: &TrainConfig,
    args: &TrainArgs,
    n_train: usize,
    n_held_out: usize,
) -> io::Result<()> {
    writeln!(w, "# pyranet train")?;
    writeln!(
        w,
        "# epochs={} seed={} train_frac={}",
        c.epochs, c.seed, args.train_frac
    )?;
    writeln!(w, "# target_mse={}", c.target_mse)?;
    writeln!(
        w,
        "# eta_plus={} eta_minus={} delta0={} delta_max={} delta_min={}",
        c.eta_plus, c.eta_minus, c.delta0, c.delta_max, c.delta_min
    )?;
    writeln!(w, "# train_samples={n_train} held_out_samples={n_held_out}")?;
    writeln!(w, "epoch,mse,accuracy")
}
