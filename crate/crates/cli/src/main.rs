use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use bfa_core::absdomain::InputRegion;
use bfa_core::model::{generate_synthetic, load_model, save_model, Activation, SyntheticSpec};
use bfa_core::verifier::{replay_report, verify, Mode, Overall, Scope, VerificationJob, VerificationReport};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 3;
const EXIT_ERROR: u8 = 4;

#[derive(Parser)]
#[command(name = "bfa-verify", version, about = "Verify quantized networks against bit-flip attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that no single-parameter bit flip changes the classification.
    Verify(VerifyArgs),
    /// Re-execute the witnesses stored in a report.
    Replay {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write a seeded random quantized network.
    Generate {
        /// Layer widths including the input layer, e.g. 2,3,2
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long = "quant-bits", default_value_t = 4)]
        quant_bits: u32,
        #[arg(long, value_enum, default_value_t = Act::Relu)]
        activation: Act,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Act {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "ra_only")]
    RaOnly,
    Full,
    #[value(name = "naive_baseline")]
    NaiveBaseline,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Center of an L-infinity ball: a JSON file or an inline JSON array.
    #[arg(long, requires = "radius", conflicts_with = "region_box")]
    center: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    /// Box region: a JSON file or inline JSON, either `{"lower":[..],"upper":[..]}`
    /// or a list of `[lo, hi]` pairs.
    #[arg(long = "box")]
    region_box: Option<String>,
    /// Target class, 1-based.
    #[arg(long)]
    target: usize,
    /// Maximum number of flipped bits.
    #[arg(long, default_value_t = 1)]
    bits: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    /// `all`, `layers:3,4`, or labels such as `W3[2,2],b2[1]`.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long)]
    workers: Option<usize>,
    /// Seconds.
    #[arg(long = "timeout-ra")]
    timeout_ra: Option<f64>,
    /// Seconds.
    #[arg(long = "timeout-milp")]
    timeout_milp: Option<f64>,
    #[arg(long = "eps-split", default_value_t = 1e-6)]
    eps_split: f64,
    #[arg(long = "eps-strict", default_value_t = 1e-6)]
    eps_strict: f64,
    /// Give the backend all flips of each vulnerable parameter.
    #[arg(long = "full-flip-sets")]
    full_flip_sets: bool,
    #[arg(long = "export-lp")]
    export_lp: Option<PathBuf>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn json_arg(arg: &str) -> Result<serde_json::Value> {
    let text = if arg.trim_start().starts_with(['[', '{']) {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    };
    serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))
}

fn region(args: &VerifyArgs) -> Result<InputRegion<f64>> {
    if let Some(c) = &args.center {
        let center: Vec<f64> = serde_json::from_value(json_arg(c)?).context("center must be a list of numbers")?;
        let radius = args.radius.context("--center needs --radius")?;
        if !(radius >= 0.0) {
            bail!("radius must be non-negative");
        }
        return Ok(InputRegion::linf(center, radius));
    }
    let Some(b) = &args.region_box else {
        bail!("one of --center/--radius or --box is required");
    };
    let v = json_arg(b)?;
    if let Ok(pairs) = serde_json::from_value::<Vec<(f64, f64)>>(v.clone()) {
        let (lower, upper) = pairs.into_iter().unzip();
        return Ok(InputRegion::bounded(lower, upper));
    }
    let side = |k: &str| -> Result<Vec<f64>> {
        let field = v.get(k).cloned().context("box must be {lower, upper} or a list of pairs")?;
        Ok(serde_json::from_value(field)?)
    };
    Ok(InputRegion::bounded(side("lower")?, side("upper")?))
}

fn secs(s: Option<f64>) -> Result<Option<Duration>> {
    s.map(|s| Duration::try_from_secs_f64(s).context("timeouts must be non-negative seconds")).transpose()
}

fn run_verify(args: VerifyArgs) -> Result<u8> {
    let net = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    if args.target == 0 {
        bail!("--target is 1-based");
    }
    let job = VerificationJob {
        mode: match args.mode {
            ModeArg::RaOnly => Mode::RaOnly,
            ModeArg::Full => Mode::Full,
            ModeArg::NaiveBaseline => Mode::NaiveBaseline,
        },
        scope: args.scope.parse::<Scope>()?,
        workers: args.workers,
        timeout_ra: secs(args.timeout_ra)?,
        timeout_milp: secs(args.timeout_milp)?,
        eps_split: args.eps_split,
        eps_strict: args.eps_strict,
        full_flip_sets: args.full_flip_sets,
        export_lp: args.export_lp.clone(),
        ..VerificationJob::new(region(&args)?, args.target - 1, args.bits)
    };
    let report = verify(&net, &job)?;
    let json = report.to_json()?;
    match &args.out {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    eprintln!("{}", summary(&report));
    Ok(match report.overall {
        Overall::BfaTolerant => 0,
        Overall::Falsified => 1,
        Overall::Unknown | Overall::Timeout => 2,
    })
}

fn summary(r: &VerificationReport) -> String {
    let mut s = format!(
        "{}: {} parameters, {} vulnerable after the sweep, {} analyzer calls",
        r.overall,
        r.params.len(),
        r.xi.len(),
        r.analyzer_calls
    );
    if let Some(w) = &r.witness {
        let flips: Vec<String> = w
            .attack
            .flips
            .iter()
            .map(|f| format!("{} bits {:?}", f.param, f.bits.iter().collect::<Vec<_>>()))
            .collect();
        s += &format!("; witness {} at {:?}", flips.join(", "), w.input);
    }
    s
}

fn run_replay(model: &Path, report: &Path) -> Result<u8> {
    let net = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    let text = fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    let report = VerificationReport::from_json(&text)?;
    match replay_report(&net, &report)? {
        Some(true) => {
            println!("witness replays");
            Ok(0)
        }
        Some(false) => {
            println!("witness does not replay");
            Ok(1)
        }
        None => bail!("report contains no witness"),
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Verify(args) => run_verify(args),
        Command::Replay { model, report } => run_replay(&model, &report),
        Command::Generate { dims, quant_bits, activation, seed, out } => {
            let activation = match activation {
                Act::Relu => Activation::Relu,
                Act::Sigmoid => Activation::Sigmoid,
                Act::Tanh => Activation::Tanh,
            };
            let net = generate_synthetic::<f64>(&SyntheticSpec { dims, quant_bits, activation, seed })?;
            save_model(&net, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
