//! `invnet3d`: data generation, training, evaluation, cost accounting and
//! invertibility checks from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure (one `ERROR:` line on stderr),
//! 2 usage error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::FileConfig;
use invnet3d::accounting::model_cost;
use invnet3d::arch::{build_model, build_plan, desk_profile, ArchProfile, InputGeometry, ModelVariant, VariantKind};
use invnet3d::invertible::{invertible_module_backward, InvertibleModule};
use invnet3d::nn::NormMode;
use invnet3d::seismic::{generate_dataset, AcquisitionConfig, Dataset, DatasetConfig, VelocityConfig};
use invnet3d::tensor::{randn, Rng, Tensor};
use invnet3d::train::{evaluate, load_checkpoint, train, EvalTransform, TrainConfig, TrainOutput};

#[derive(Parser, Debug)]
#[command(name = "invnet3d", version, about = "Invertible 3D encoder-decoder for seismic velocity inversion")]
struct Cli {
    /// TOML file supplying defaults for any flag (keys use underscores,
    /// e.g. `time_samples = 64`); flags on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a synthetic dataset into a directory.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally under noise or high-pass filtering.
    Eval(EvalArgs),
    /// Print parameter and FLOP counts as JSON.
    Cost(CostArgs),
    /// Check inversion and recompute gradients of a random invertible module.
    VerifyInvert(VerifyArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of samples [default: 64]
    #[arg(long)]
    samples: Option<usize>,
    /// Time frames kept after subsampling [default: 64]
    #[arg(long)]
    time_samples: Option<usize>,
    /// Source indices to keep, comma separated [default: all]
    #[arg(long, value_delimiter = ',')]
    sources: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// One of invnet3ds, invnet3di, invnet3dg, invnet3d [default: invnet3d]
    #[arg(long)]
    variant: Option<String>,
    /// Depth of every second-layer slot [default: 1]
    #[arg(long)]
    blocks: Option<usize>,
    /// Channel-width divisor of the desk profile [default: 8]
    #[arg(long)]
    divisor: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory written by gen-data
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for history.jsonl and the best/last checkpoints
    #[arg(long)]
    out: Option<PathBuf>,
    /// [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Peak learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Samples held out for validation, taken from the end [default: 8]
    #[arg(long)]
    val_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory (e.g. `<train out>/best`)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluate only the last N samples (the training hold-out)
    #[arg(long)]
    val_samples: Option<usize>,
    /// Add Gaussian noise at this SNR; requires --seed
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    /// High-pass the input at this cutoff before inference
    #[arg(long)]
    cutoff_hz: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here as well as to stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Scale {
    Paper,
    Desk,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// [default: paper]
    #[arg(long)]
    scale: Option<Scale>,
    /// Time samples of the input [default: 896 paper, 64 desk]
    #[arg(long)]
    time: Option<usize>,
    /// Input channels, one per source [default: 8 paper, 4 desk]
    #[arg(long)]
    channels: Option<usize>,
    /// Receivers per surface axis [default: 40 paper, 12 desk]
    #[arg(long)]
    receivers: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Coupling layers in the module [default: 3]
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Channels, even [default: 8]
    #[arg(long)]
    channels: Option<usize>,
    /// Cube edge of the random input [default: 6]
    #[arg(long)]
    spatial: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<invnet3d::Error> for Failure {
    fn from(e: invnet3d::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| usage(format!("--{flag} is required")))
}

fn positive(v: usize, flag: &str) -> Result<usize, Failure> {
    if v == 0 {
        return Err(usage(format!("--{flag} must be positive")));
    }
    Ok(v)
}

fn parse_variant(s: &str) -> Result<VariantKind, Failure> {
    s.parse().map_err(|e: invnet3d::Error| usage(e.to_string()))
}

fn parse_scale(s: &str) -> Result<Scale, Failure> {
    Scale::from_str(s, false).map_err(|_| usage(format!("unknown scale {s:?}; expected paper or desk")))
}

fn variant(args: &ModelArgs, file: &FileConfig) -> Result<ModelVariant, Failure> {
    let kind = match args.variant.as_ref().or(file.variant.as_ref()) {
        Some(s) => parse_variant(s)?,
        None => VariantKind::Full,
    };
    let blocks = positive(args.blocks.or(file.blocks).unwrap_or(1), "blocks")?;
    Ok(ModelVariant::new(kind, blocks))
}

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn gen_data(a: GenDataArgs, file: &FileConfig) -> CmdResult {
    let seed = require(a.seed.or(file.seed), "seed")?;
    let samples = positive(a.samples.or(file.samples).unwrap_or(64), "samples")?;
    let time_samples = positive(a.time_samples.or(file.time_samples).unwrap_or(64), "time-samples")?;
    let out = require(a.out.or(file.out.clone()), "out")?;
    let acquisition = AcquisitionConfig::default();
    let source_indices = a.sources.or(file.sources.clone()).unwrap_or_default();
    if let Some(&bad) = source_indices.iter().find(|&&s| s >= acquisition.n_sources) {
        return Err(usage(format!("source index {bad} out of range; there are {} sources", acquisition.n_sources)));
    }
    let cfg = DatasetConfig {
        samples,
        seed,
        velocity: VelocityConfig::default(),
        acquisition,
        time_samples,
        source_indices,
    };
    let data = generate_dataset(&cfg)?;
    data.write(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    eprintln!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

/// Warmup and step-decay epochs of the default 80-epoch schedule, scaled to
/// `epochs`.
fn scaled_schedule(epochs: usize) -> (usize, Vec<usize>) {
    let base = TrainConfig::default();
    let scale = |e: usize| ((e * epochs) as f64 / base.total_epochs as f64).round() as usize;
    let decays = base.decay_epochs.iter().map(|&e| scale(e)).filter(|&e| e > 0 && e < epochs).collect();
    (scale(base.warmup_epochs), decays)
}

fn geometry_of(data: &Dataset) -> Result<(InputGeometry, [usize; 3]), Failure> {
    let s = data.samples.first().ok_or_else(|| Failure::Runtime("dataset is empty".into()))?;
    let (i, t) = (s.input.dims(), s.target.dims());
    Ok((InputGeometry { channels: i[0], dims: [i[1], i[2], i[3]] }, [t[1], t[2], t[3]]))
}

fn train_cmd(a: TrainArgs, file: &FileConfig) -> CmdResult {
    let variant = variant(&a.model, file)?;
    let seed = require(a.seed.or(file.seed), "seed")?;
    let data_dir = require(a.data.or(file.data.clone()), "data")?;
    let out = require(a.out.or(file.out.clone()), "out")?;
    let divisor = positive(a.model.divisor.or(file.divisor).unwrap_or(8), "divisor")?;
    let epochs = positive(a.epochs.or(file.epochs).unwrap_or(30), "epochs")?;
    let batch_size = positive(a.batch_size.or(file.batch_size).unwrap_or(4), "batch-size")?;
    let lr = a.lr.or(file.lr).unwrap_or(1e-3);
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(usage("--lr must be a non-negative number"));
    }
    let val_n = a.val_samples.or(file.val_samples).unwrap_or(8);

    let mut data = Dataset::load(&data_dir)?;
    let val = if val_n > 0 { Some(data.split_off(val_n)?) } else { None };
    let (input, output) = geometry_of(&data)?;
    let profile = desk_profile(divisor, input, output)?;
    let mut model = build_model::<f32>(variant, &profile, &mut Rng::new(seed))?;
    let (warmup_epochs, decay_epochs) = scaled_schedule(epochs);
    let cfg = TrainConfig {
        base_lr: lr,
        warmup_epochs,
        decay_epochs,
        total_epochs: epochs,
        batch_size,
        seed,
        ..Default::default()
    };
    write_json(&out.join("train_config.json"), &cfg)?;
    let history = train(&mut model, &data, val.as_ref(), &cfg, Some(&TrainOutput { dir: &out, profile: &profile }))?;
    print_json(&history)
}

fn eval_cmd(a: EvalArgs, file: &FileConfig) -> CmdResult {
    let checkpoint = require(a.checkpoint.or(file.checkpoint.clone()), "checkpoint")?;
    let data_dir = require(a.data.or(file.data.clone()), "data")?;
    let snr_db = a.snr_db.or(file.snr_db);
    let cutoff_hz = a.cutoff_hz.or(file.cutoff_hz);
    let seed = a.seed.or(file.seed);
    if snr_db.is_some() && seed.is_none() {
        return Err(usage("--snr-db draws noise and needs --seed"));
    }
    if let Some(c) = cutoff_hz.filter(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(usage(format!("--cutoff-hz must be positive, got {c}")));
    }
    let transform = EvalTransform { snr_db, cutoff_hz, noise_seed: seed.unwrap_or(0) };

    let (mut model, _, _) = load_checkpoint(&checkpoint)?;
    let mut data = Dataset::load(&data_dir)?;
    if let Some(n) = a.val_samples.or(file.val_samples).filter(|&n| n > 0 && n < data.len()) {
        data = data.split_off(n)?;
    }
    let report = evaluate(&mut model, &data, &transform, 4)?;
    if let Some(out) = a.out.or(file.out.clone()) {
        write_json(&out, &report)?;
    }
    print_json(&report)
}

fn cost_cmd(a: CostArgs, file: &FileConfig) -> CmdResult {
    let variant = variant(&a.model, file)?;
    let scale = match (a.scale, &file.scale) {
        (Some(s), _) => s,
        (None, Some(s)) => parse_scale(s)?,
        (None, None) => Scale::Paper,
    };
    let (time, channels, receivers) = match scale {
        Scale::Paper => (896, 8, 40),
        Scale::Desk => (64, AcquisitionConfig::default().n_sources, AcquisitionConfig::default().receiver_grid[0]),
    };
    let time = positive(a.time.or(file.time).unwrap_or(time), "time")?;
    let channels = positive(a.channels.or(file.channels).unwrap_or(channels), "channels")?;
    let receivers = positive(a.receivers.or(file.receivers).unwrap_or(receivers), "receivers")?;
    let input = InputGeometry { channels, dims: [time, receivers, receivers] };
    let profile = match scale {
        Scale::Paper => ArchProfile::full(input),
        Scale::Desk => {
            let divisor = positive(a.model.divisor.or(file.divisor).unwrap_or(8), "divisor")?;
            desk_profile(divisor, input, VelocityConfig::default().dims)?
        }
    };
    let report = model_cost(&build_plan(variant, &profile)?)?;
    print_json(&report)
}

#[derive(Serialize)]
struct VerifyReport {
    blocks: usize,
    channels: usize,
    input: Vec<usize>,
    round_trip_max_abs_err: f64,
    round_trip_tolerance: f64,
    grad_rel_err: f64,
    grad_tolerance: f64,
    passed: bool,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    diff.sqrt() / norm.sqrt().max(f64::MIN_POSITIVE)
}

fn verify_cmd(a: VerifyArgs, file: &FileConfig) -> CmdResult {
    let seed = require(a.seed.or(file.seed), "seed")?;
    let blocks = positive(a.blocks.or(file.blocks).unwrap_or(3), "blocks")?;
    let channels = positive(a.channels.or(file.channels).unwrap_or(8), "channels")?;
    if channels % 2 != 0 {
        return Err(usage("--channels must be even"));
    }
    let s = positive(a.spatial.or(file.spatial).unwrap_or(6), "spatial")?;
    let dims = [2, channels, s, s, s];

    // round trip in single precision
    let mut module = InvertibleModule::<f32>::new(channels, blocks, 1, false, &mut Rng::with_stream(seed, 0))?;
    let x: Tensor<f32> = randn(&mut Rng::with_stream(seed, 1), &dims, 0.0, 1.0)?;
    let y = module.forward(&x, NormMode::TRAIN)?;
    let back = module.inverse(&y, NormMode::RECOMPUTE)?;
    let round_trip = f64::from(back.max_abs_diff(&x)?);

    // recompute gradients against the stored-activation path in double precision
    let module = InvertibleModule::<f64>::new(channels, blocks, 1, false, &mut Rng::with_stream(seed, 0))?;
    let mut rng = Rng::with_stream(seed, 2);
    let x: Tensor<f64> = randn(&mut rng, &dims, 0.0, 1.0)?;
    let g: Tensor<f64> = randn(&mut rng, &dims, 0.0, 1.0)?;
    let mut stored = module.clone();
    let (_, caches) = stored.forward_stored(&x, NormMode::TRAIN)?;
    let gx_ref = stored.backward_stored(&g, &caches)?;
    let grads_ref = stored.param_grads();
    let mut recompute = module;
    let y = recompute.forward(&x, NormMode::TRAIN)?;
    let (gx, grads) = invertible_module_backward(&g, &y, &mut recompute)?;
    let flat = |gx: &Tensor<f64>, gs: &[(String, Tensor<f64>)]| -> Vec<f64> {
        gx.data().iter().chain(gs.iter().flat_map(|(_, t)| t.data())).copied().collect()
    };
    let grad_rel = rel_err(&flat(&gx, &grads), &flat(&gx_ref, &grads_ref));

    let (rt_tol, grad_tol) = (1e-5, 1e-4);
    let passed = round_trip <= rt_tol && grad_rel <= grad_tol;
    print_json(&VerifyReport {
        blocks,
        channels,
        input: dims.to_vec(),
        round_trip_max_abs_err: round_trip,
        round_trip_tolerance: rt_tol,
        grad_rel_err: grad_rel,
        grad_tolerance: grad_tol,
        passed,
    })?;
    if !passed {
        return Err(Failure::Runtime(format!(
            "invertibility check failed: round trip {round_trip:.3e}, gradient {grad_rel:.3e}"
        )));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    let file = FileConfig::load(cli.config.as_deref()).map_err(Failure::Usage)?;
    match cli.command {
        Command::GenData(a) => gen_data(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Eval(a) => eval_cmd(a, &file),
        Command::Cost(a) => cost_cmd(a, &file),
        Command::VerifyInvert(a) => verify_cmd(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("ERROR: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_scales_to_thirty_epochs() {
        assert_eq!(scaled_schedule(30), (4, vec![15, 23, 26]));
        assert_eq!(scaled_schedule(80), (10, vec![40, 60, 70]));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
