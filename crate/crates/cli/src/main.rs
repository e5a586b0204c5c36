use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use otfs_core::bench::{
    self, preset_names, run_ber_sweep, sensitivity_csv, sensitivity_sweep, write_ber_outputs,
    ExperimentConfig, ModelSet, SweepVar, TrainSpec,
};
use otfs_core::detectors::ModScheme;
use otfs_core::iqi::IqiParams;
use otfs_core::neural::load_weights;
use otfs_core::pipeline::{calibration_observation, dnn2_estimate, DnnRole};

#[derive(Parser)]
#[command(
    name = "otfs-bench",
    about = "OTFS transceiver simulator: DNN training and Monte Carlo BER experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one of the DNN roles and save the weights plus a loss trace.
    Train(TrainArgs),
    /// Run a BER sweep from a config file or a named preset.
    Ber(BerArgs),
    /// IQI sensitivity sweep at 12 dB comparing OTFS and OFDM.
    Sweep(SweepArgs),
    /// Estimate Rx imbalance parameters with a trained estimator model.
    EstimateIqi(EstimateArgs),
    /// Print the metadata and layer structure of a saved model.
    InspectModel(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// dnn1-bpsk | dnn1-4qam | dnn1-16qam | dnn2 | dnn3-bpsk | dnn3-4qam |
    /// dnn3-16qam | dnn4
    #[arg(long)]
    role: String,
    /// Output weight file; the loss trace goes to <out>.loss.csv
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Override the role's default training-set size
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Rx gain-imbalance estimate (required for dnn3)
    #[arg(long)]
    rx_dg: Option<f64>,
    /// Rx phase-imbalance estimate in degrees (required for dnn3)
    #[arg(long)]
    rx_dphi: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    snr_data: f64,
    #[arg(long, default_value_t = 10.0)]
    snr_pilot: f64,
}

#[derive(Args)]
struct BerArgs {
    /// Flat key=value config file describing one curve
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset expanding to one or more curves
    #[arg(long)]
    preset: Option<String>,
    /// Extra key=value overrides applied after the config/preset
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output CSV path (single curve) or directory (preset with several curves)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    dnn1: Option<PathBuf>,
    #[arg(long)]
    dnn2: Option<PathBuf>,
    #[arg(long)]
    dnn3: Option<PathBuf>,
    #[arg(long)]
    dnn4: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// tx_gain | tx_phase | rx_gain | rx_phase
    #[arg(long)]
    axis: String,
    #[arg(long, default_value_t = 100_000)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Trained estimator weight file
    #[arg(long)]
    model: PathBuf,
    /// True Rx gain imbalance applied to the calibration alphabet
    #[arg(long)]
    dg: f64,
    /// True Rx phase imbalance in degrees
    #[arg(long)]
    dphi: f64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn parse_role(s: &str) -> anyhow::Result<DnnRole> {
    Ok(match s {
        "dnn1-bpsk" => DnnRole::Dnn1(ModScheme::Bpsk),
        "dnn1-4qam" => DnnRole::Dnn1(ModScheme::Qam4),
        "dnn1-16qam" => DnnRole::Dnn1(ModScheme::Qam16),
        "dnn2" => DnnRole::Dnn2,
        "dnn3-bpsk" => DnnRole::Dnn3(ModScheme::Bpsk),
        "dnn3-4qam" => DnnRole::Dnn3(ModScheme::Qam4),
        "dnn3-16qam" => DnnRole::Dnn3(ModScheme::Qam16),
        "dnn4" => DnnRole::Dnn4,
        other => bail!("unknown role '{other}'"),
    })
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let role = parse_role(&args.role)?;
    let mut spec = TrainSpec::new(role, args.seed);
    spec.examples = args.examples;
    spec.epochs = args.epochs;
    spec.batch_size = args.batch;
    spec.learning_rate = args.lr;
    spec.snr_data_db = args.snr_data;
    spec.snr_pilot_db = args.snr_pilot;
    if let (Some(dg), Some(dphi)) = (args.rx_dg, args.rx_dphi) {
        spec.rx_estimate = Some((dg, dphi));
    }
    let outcome = bench::train_command(&spec, &args.out)
        .with_context(|| format!("training {}", args.role))?;
    println!(
        "trained {} ({} epochs), final loss {:e}, saved to {}",
        args.role,
        outcome.loss_trace.len(),
        outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    if outcome.resampled > 0 {
        println!("resampled {} singular parameter draws", outcome.resampled);
    }
    Ok(())
}

fn apply_common(cfg: &mut ExperimentConfig, args: &BerArgs) -> anyhow::Result<()> {
    cfg.frames_per_point = args.frames;
    cfg.seed = args.seed;
    for (key, path) in [
        ("dnn1_model", &args.dnn1),
        ("dnn2_model", &args.dnn2),
        ("dnn3_model", &args.dnn3),
        ("dnn4_model", &args.dnn4),
    ] {
        if let Some(p) = path {
            cfg.set(key, &p.display().to_string())?;
        }
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("override '{kv}' is not KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(())
}

fn run_curve(cfg: &ExperimentConfig, out: &PathBuf) -> anyhow::Result<()> {
    let models = ModelSet::load(&cfg.models)?;
    let points = run_ber_sweep(cfg, &models)?;
    write_ber_outputs(cfg, &points, out)?;
    println!("{} -> {}", cfg.preset, out.display());
    Ok(())
}

fn cmd_ber(args: &BerArgs) -> anyhow::Result<()> {
    if let Some(name) = &args.preset {
        let mut curves = bench::preset(name, args.frames, args.seed)
            .with_context(|| format!("known presets: {}", preset_names().join(", ")))?;
        std::fs::create_dir_all(&args.out)?;
        for cfg in curves.iter_mut() {
            apply_common(cfg, args)?;
            let out = args.out.join(format!("{}.csv", cfg.preset));
            run_curve(cfg, &out)?;
        }
        Ok(())
    } else if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = ExperimentConfig::from_key_values(&text)?;
        apply_common(&mut cfg, args)?;
        run_curve(&cfg, &args.out)
    } else {
        bail!("either --config or --preset is required");
    }
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let axis = SweepVar::parse(&args.axis)?;
    let result = sensitivity_sweep(axis, args.frames, args.seed)?;
    std::fs::write(&args.out, sensitivity_csv(&result))?;
    println!("{} sensitivity -> {}", axis.name(), args.out.display());
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> anyhow::Result<()> {
    let net = load_weights(&args.model)?;
    let observed = calibration_observation(&IqiParams::new(args.dg, args.dphi));
    let (dg, dphi) = dnn2_estimate(&net, &observed)?;
    println!("true:      delta_g = {:.4}, delta_phi = {:.2} deg", args.dg, args.dphi);
    println!("estimated: delta_g = {dg:.4}, delta_phi = {dphi:.2} deg");
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))?;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        println!("{}", line.trim_start_matches('#').trim());
    }
    let net = load_weights(&args.model)?;
    println!(
        "{} layers, {} -> {}, {} parameters",
        net.layers.len(),
        net.input_dim(),
        net.output_dim(),
        net.parameter_count()
    );
    for (i, layer) in net.layers.iter().enumerate() {
        println!(
            "  layer {i}: {} -> {} ({})",
            layer.spec.in_dim,
            layer.spec.out_dim,
            layer.spec.activation.name()
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Ber(a) => cmd_ber(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::EstimateIqi(a) => cmd_estimate(a),
        Command::InspectModel(a) => cmd_inspect(a),
    }
}
