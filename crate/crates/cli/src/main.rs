use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mca_eeg::container::{EegContainer, Target, EEGC_VERSION};
use mca_eeg::experiment::{
    ablate, extract_features, features_from_pairs, format_ablation_table, format_run_table, psd_table,
    run_features, ExperimentConfig, FeatureMode,
};
use mca_eeg::synth::{complementary_cubes, synth_container, ComplementaryConfig, SynthConfig};
use mca_eeg::Error;

#[derive(Parser, Debug)]
#[command(name = "mca-eeg", version, about = "EEG emotion recognition with mutual cross-attention fusion")]
struct Cli {
    /// Seed for every random choice (generation, ICA, initialisation, shuffling, split).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic EEGC container.
    Synth(SynthArgs),
    /// Preprocess, extract, fuse, train and evaluate one feature mode.
    Run(RunArgs),
    /// Run several feature modes over several seeds and tabulate accuracy.
    Ablate(AblateArgs),
    /// Export the Welch PSD of one trial as CSV.
    PsdExport(PsdArgs),
    /// Print container metadata.
    ConvertInfo(InfoArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    subjects: usize,
    #[arg(long, default_value_t = 32)]
    trials: usize,
    /// Power factor of the label-carrying bands.
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// TOML file with an experiment configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// EEGC container to read.
    #[arg(long)]
    input: Option<PathBuf>,
    /// valence or arousal
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Stop once an epoch's train accuracy reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
    #[arg(long)]
    no_notch: bool,
    #[arg(long)]
    no_bandpass: bool,
    /// Enable FastICA with kurtosis-based component rejection.
    #[arg(long)]
    ica: bool,
    #[arg(long)]
    zscore_before_fusion: bool,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// DE, PSD, SUM or MCA
    #[arg(long)]
    mode: Option<String>,
    /// Write the trained model here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "DE,PSD,SUM,MCA")]
    modes: Vec<String>,
    /// Use the planted-complementarity feature set instead of a container.
    #[arg(long)]
    complementary: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PsdArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    subject: u32,
    #[arg(long)]
    trial: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_notch: bool,
    #[arg(long)]
    no_bandpass: bool,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    input: PathBuf,
    /// Print one line per trial with its payload checksum.
    #[arg(long)]
    trials: bool,
}

enum Failure {
    Input(String),
    Config(String),
    Pipeline(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Config(_) => 3,
            Failure::Pipeline(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Config(m) | Failure::Pipeline(m) => m,
        }
    }
}

fn input_error(path: &Path, e: Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn pipeline_error(e: Error) -> Failure {
    match e {
        Error::Config(m) => Failure::Config(m),
        other => Failure::Pipeline(other.to_string()),
    }
}

fn write_output(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Pipeline(format!("cannot write {}: {e}", path.display())))
}

fn load_container(path: &Path) -> Result<EegContainer, Failure> {
    EegContainer::load(path).map_err(|e| input_error(path, e))
}

fn experiment_config(args: &ExperimentArgs, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &args.input {
        cfg.input = Some(p.clone());
    }
    if let Some(t) = &args.target {
        cfg.target = t.parse::<Target>().map_err(pipeline_error)?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        cfg.train.optimizer.lr = lr;
    }
    if let Some(f) = args.train_fraction {
        cfg.train.train_fraction = f;
    }
    if let Some(a) = args.stop_at {
        cfg.train.target_train_accuracy = Some(a);
    }
    if args.no_notch {
        cfg.preprocess.notch = false;
    }
    if args.no_bandpass {
        cfg.preprocess.bandpass = false;
    }
    if args.ica {
        cfg.preprocess.ica = true;
    }
    if args.zscore_before_fusion {
        cfg.zscore_before_fusion = true;
    }
    if let Some(r) = &args.report {
        cfg.output.report = Some(r.clone());
    }
    cfg.validate().map_err(pipeline_error)?;
    Ok(cfg)
}

fn require_input(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    cfg.input
        .clone()
        .ok_or_else(|| Failure::Config("no input container given (--input or `input` in the config)".into()))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialise");
    s.push('\n');
    s
}

fn cmd_synth(args: SynthArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = SynthConfig {
        seed: seed.unwrap_or(0),
        n_subjects: args.subjects,
        trials_per_subject: args.trials,
        ..SynthConfig::default()
    };
    if let Some(g) = args.gain {
        cfg.class_power_gain = g;
    }
    let container = synth_container(&cfg).map_err(pipeline_error)?;
    container
        .save(&args.out)
        .map_err(|e| Failure::Pipeline(format!("cannot write {}: {e}", args.out.display())))?;
    println!(
        "wrote {} trials ({} subjects × {}) to {}",
        container.trials.len(),
        cfg.n_subjects,
        cfg.trials_per_subject,
        args.out.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = experiment_config(&args.exp, seed)?;
    if let Some(m) = &args.mode {
        cfg.feature_mode = m.parse::<FeatureMode>().map_err(pipeline_error)?;
    }
    if let Some(c) = &args.checkpoint {
        cfg.output.checkpoint = Some(c.clone());
    }
    let input = require_input(&cfg)?;
    let container = load_container(&input)?;
    let features = extract_features(&container, &cfg).map_err(pipeline_error)?;
    let outcome = run_features(&features, &cfg).map_err(pipeline_error)?;
    let json = to_json(&outcome.report);
    if let Some(path) = &cfg.output.report {
        write_output(path, &json)?;
    }
    if let Some(path) = &cfg.output.checkpoint {
        outcome
            .classifier
            .save(path)
            .map_err(|e| Failure::Pipeline(format!("cannot write {}: {e}", path.display())))?;
    }
    if args.json {
        print!("{json}");
    } else {
        print!("{}", format_run_table(&outcome.report, Some(outcome.seconds_per_segment)));
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = experiment_config(&args.exp, seed)?;
    let modes = args
        .modes
        .iter()
        .map(|m| m.parse::<FeatureMode>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(pipeline_error)?;
    let features = if args.complementary {
        let pairs = complementary_cubes(&ComplementaryConfig {
            seed: seed.unwrap_or(0),
            ..ComplementaryConfig::default()
        })
        .map_err(pipeline_error)?;
        features_from_pairs(pairs)
    } else {
        let input = require_input(&cfg)?;
        extract_features(&load_container(&input)?, &cfg).map_err(pipeline_error)?
    };
    let report = ablate(&features, &cfg, &modes, &args.seeds).map_err(pipeline_error)?;
    let json = to_json(&report);
    if let Some(path) = &cfg.output.report {
        write_output(path, &json)?;
    }
    if args.json {
        print!("{json}");
    } else {
        print!("{}", format_ablation_table(&report));
    }
    Ok(())
}

fn cmd_psd_export(args: PsdArgs, seed: Option<u64>) -> Result<(), Failure> {
    let container = load_container(&args.input)?;
    let trial = container
        .find(args.subject, args.trial)
        .ok_or_else(|| Failure::Input(format!("no trial {}/{} in {}", args.subject, args.trial, args.input.display())))?;
    let mut toggles = ExperimentConfig::default().preprocess;
    toggles.notch = !args.no_notch;
    toggles.bandpass = !args.no_bandpass;
    let table = psd_table(trial, &toggles, seed.unwrap_or(0)).map_err(pipeline_error)?;
    write_output(&args.out, &table.to_csv())?;
    println!(
        "wrote {} rows × {} channels to {}",
        table.frequencies_hz.len(),
        table.channels.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_convert_info(args: InfoArgs) -> Result<(), Failure> {
    let c = load_container(&args.input)?;
    let mut subjects: Vec<u32> = c.trials.iter().map(|t| t.subject).collect();
    subjects.dedup();
    println!("format: EEGC v{EEGC_VERSION}");
    println!("trials: {}", c.trials.len());
    println!("subjects: {subjects:?}");
    if let Some(t) = c.trials.first() {
        println!(
            "first trial: {} channels, {} samples at {} Hz ({} s)",
            t.channels,
            t.n_samples,
            t.sample_rate_hz,
            t.n_samples as f64 / t.sample_rate_hz
        );
    }
    for target in [Target::Valence, Target::Arousal] {
        let high = c.trials.iter().filter(|t| t.label(target) == 1).count();
        println!("{target}: {high} high / {} low", c.trials.len() - high);
    }
    if args.trials {
        println!("subject\ttrial\tchannels\trate_hz\tsamples\tvalence\tarousal\tsha256");
        for t in &c.trials {
            println!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.subject,
                t.trial,
                t.channels,
                t.sample_rate_hz,
                t.n_samples,
                t.valence,
                t.arousal,
                t.payload_sha256()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let seed = cli.seed;
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Run(a) => cmd_run(a, seed),
        Command::Ablate(a) => cmd_ablate(a, seed),
        Command::PsdExport(a) => cmd_psd_export(a, seed),
        Command::ConvertInfo(a) => cmd_convert_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
