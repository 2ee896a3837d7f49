//! `vlf`: channel constants, quantizer design, bounds and simulation campaigns.
//!
//! Exit status is 0 on success, 1 for model or numeric errors (a JSON error
//! object goes to stderr), and 2 for usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use vlf_core::bounds::{asymptotic_logm, bound_report, BoundVariant};
use vlf_core::channels::{channel_params, ChannelSpec, ChannelSpecFile};
use vlf_core::exec::Schedule;
use vlf_core::lattice_codec::{partition, GroupedEncoderState, MinLookup};
use vlf_core::montecarlo::{
    curve_csv, provenance_header, resolve_channel, run_experiment, trial_rng, verify_equivalence,
    ChannelSource, EncoderSelector, ExperimentConfig,
};
use vlf_core::quantizer::{capacity_loss_report, design_quantizer, DesignOptions};
use vlf_core::trial::{CodecConfig, RoundTrace};
use vlf_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "vlf", version, about = "Variable-length feedback coding toolkit", arg_required_else_help = true)]
struct Cli {
    /// Seed recorded in every output; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trial batches.
    #[arg(long, global = true, env = "VLF_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Channel constants (C, C1, Z, chi, eta, psi0) as JSON.
    ChannelParams(ChannelParamsArgs),
    /// Design an exact-lattice quantizer for the BI-AWGN channel.
    DesignQuantizer(DesignArgs),
    /// Achievability bound report, or a CSV sweep over K.
    Bounds(BoundsArgs),
    /// Monte Carlo rate curve from a JSON experiment config.
    Simulate(SimulateArgs),
    /// Run both codecs on shared noise and compare them round by round.
    Verify(SimulateArgs),
    /// Capacity loss against B as CSV.
    CaplossSweep(CaplossArgs),
    /// Per-round encoder cost of one long trial.
    ComplexitySmoke(ComplexityArgs),
}

#[derive(Debug, Args, Serialize)]
#[group(required = true, multiple = false)]
struct ChannelArg {
    /// Channel spec file.
    #[arg(long)]
    channel: Option<PathBuf>,
    /// BSC crossover probability.
    #[arg(long)]
    bsc: Option<f64>,
    /// BI-AWGN noise power.
    #[arg(long)]
    awgn: Option<f64>,
}

impl ChannelArg {
    fn spec(&self) -> Result<ChannelSpecFile> {
        if let Some(path) = &self.channel {
            return ChannelSpecFile::read(path);
        }
        let spec = match (self.bsc, self.awgn) {
            (Some(p), _) => ChannelSpec::Bsc { p },
            (_, Some(sigma2)) => ChannelSpec::Awgn { sigma2 },
            _ => unreachable!("clap enforces one channel source"),
        };
        Ok(ChannelSpecFile { spec, provenance: None })
    }
}

#[derive(Debug, Args, Serialize)]
struct ChannelParamsArgs {
    #[command(flatten)]
    channel: ChannelArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DesignArgs {
    #[arg(long)]
    sigma2: f64,
    /// Number of output levels B (odd, at least 3).
    #[arg(long)]
    levels: u32,
    /// L_tail search radius.
    #[arg(long, default_value_t = 3)]
    radius: u32,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct BoundsArgs {
    #[command(subcommand)]
    sweep: Option<BoundsCommand>,
    #[command(flatten)]
    #[serde(skip_serializing_if = "BoundsPoint::is_unset")]
    point: BoundsPoint,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BoundsCommand {
    /// CSV of K, N0, n_star_upper and the asymptotic log M over a list of K.
    Sweep(BoundsSweep),
}

#[derive(Debug, Args, Serialize)]
struct BoundsPoint {
    #[command(flatten)]
    channel: ChannelArg,
    /// log2 M.
    #[arg(long, required = true)]
    bits: Option<u32>,
    #[arg(long, required = true)]
    eps: Option<f64>,
    /// Headline the refined variant (psi0 and the channel's log 2 constant).
    #[arg(long)]
    refined: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl BoundsPoint {
    fn is_unset(&self) -> bool {
        self.bits.is_none() && self.eps.is_none()
    }
}

#[derive(Debug, Args, Serialize)]
struct BoundsSweep {
    #[command(flatten)]
    channel: ChannelArg,
    /// Comma-separated list of K.
    #[arg(long, value_delimiter = ',', required = true)]
    bits: Vec<u32>,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    refined: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the output path from the config.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CaplossArgs {
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 3)]
    min_levels: u32,
    #[arg(long, default_value_t = 101)]
    max_levels: u32,
    /// Step between odd B values.
    #[arg(long, default_value_t = 2)]
    step: u32,
    #[arg(long, default_value_t = 3)]
    radius: u32,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ComplexityArgs {
    #[command(flatten)]
    channel: ChannelArg,
    #[arg(long, default_value_t = 120)]
    bits: u32,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Round cap; the trial otherwise runs to its stopping time.
    #[arg(long, default_value_t = 2000)]
    rounds: usize,
    #[arg(long, value_enum, default_value = "linear")]
    lookup: LookupArg,
    /// Per-round trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LookupArg {
    Linear,
    Ordered,
}

impl From<LookupArg> for MinLookup {
    fn from(l: LookupArg) -> Self {
        match l {
            LookupArg::Linear => MinLookup::Linear,
            LookupArg::Ordered => MinLookup::Ordered,
        }
    }
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    seed: u64,
}

struct Ctx<'a> {
    command: &'a Command,
    seed: u64,
    schedule: Schedule,
}

impl Ctx<'_> {
    fn provenance(&self) -> Value {
        serde_json::to_value(Provenance {
            tool: "vlf",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
        })
        .expect("provenance serializes")
    }

    fn csv_header(&self) -> String {
        provenance_header("vlf", self.command, self.seed)
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(path, &text)
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let workers = cli.workers.unwrap_or_else(default_workers);
    let ctx = Ctx {
        command: &cli.command,
        seed: cli.seed.unwrap_or(0),
        schedule: Schedule::with_workers(workers),
    };
    match run(&ctx, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}

fn run(ctx: &Ctx, seed_override: Option<u64>) -> Result<()> {
    match ctx.command {
        Command::ChannelParams(a) => cmd_channel_params(ctx, a),
        Command::DesignQuantizer(a) => cmd_design(ctx, a),
        Command::Bounds(a) => match &a.sweep {
            Some(BoundsCommand::Sweep(s)) => cmd_bounds_sweep(ctx, s),
            None => cmd_bounds(ctx, &a.point),
        },
        Command::Simulate(a) => cmd_simulate(ctx, a, seed_override),
        Command::Verify(a) => cmd_verify(ctx, a, seed_override),
        Command::CaplossSweep(a) => cmd_caploss(ctx, a),
        Command::ComplexitySmoke(a) => cmd_complexity(ctx, a),
    }
}

fn cmd_channel_params(ctx: &Ctx, a: &ChannelParamsArgs) -> Result<()> {
    let spec = a.channel.spec()?;
    let params = channel_params(&spec.spec.to_channel()?)?;
    let out = json!({ "provenance": ctx.provenance(), "params": params });
    emit_json(a.output.as_deref(), &out)
}

fn cmd_design(ctx: &Ctx, a: &DesignArgs) -> Result<()> {
    let options = DesignOptions {
        search_radius: a.radius,
        ..DesignOptions::default()
    };
    let design = design_quantizer(a.sigma2, a.levels, options)?;
    let loss = capacity_loss_report(&design)?;
    let mut meta = serde_json::to_value(&design)?;
    if let Value::Object(m) = &mut meta {
        m.remove("channel");
        m.insert("capacity_loss".into(), serde_json::to_value(loss)?);
    }
    let file = ChannelSpecFile {
        spec: ChannelSpec::Lattice {
            channel: design.channel.clone(),
            quantizer: Some(meta),
        },
        provenance: Some(ctx.provenance()),
    };
    let mut text = file.to_json();
    text.push('\n');
    emit(a.output.as_deref(), &text)
}

fn cmd_bounds(ctx: &Ctx, a: &BoundsPoint) -> Result<()> {
    let (bits, eps) = a.bits.zip(a.eps).expect("clap requires --bits and --eps");
    let channel = a.channel.spec()?.spec.to_channel()?;
    let params = channel_params(&channel)?;
    let report = bound_report(&params, 2f64.powi(bits as i32), eps)?;
    let variant = if a.refined { BoundVariant::Refined } else { BoundVariant::Baseline };
    let out = json!({
        "provenance": ctx.provenance(),
        "bits": bits,
        "selected": report.variant(variant),
        "report": report,
    });
    emit_json(a.output.as_deref(), &out)
}

fn cmd_bounds_sweep(ctx: &Ctx, a: &BoundsSweep) -> Result<()> {
    let channel = a.channel.spec()?.spec.to_channel()?;
    let params = channel_params(&channel)?;
    let variant = if a.refined { BoundVariant::Refined } else { BoundVariant::Baseline };
    let mut out = ctx.csv_header();
    out.push_str("# asymptotic_logM is in nats, evaluated at N = n_star_upper\n");
    out.push_str("K,N0,n_star_upper,asymptotic_logM\n");
    for &k in &a.bits {
        let report = bound_report(&params, 2f64.powi(k as i32), a.eps)?;
        let v = report.variant(variant);
        let asym = asymptotic_logm(&params, v.n_star_upper, a.eps)?;
        out.push_str(&format!("{k},{},{},{}\n", v.n0, v.n_star_upper, asym.logm_lower));
    }
    emit(a.output.as_deref(), &out)
}

fn load_config(a: &SimulateArgs, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(out) = &a.output {
        config.output = Some(out.clone());
    }
    // Inline the channel so the provenance header is self-contained.
    if let ChannelSource::File(_) = &config.channel {
        config.channel = ChannelSource::Inline(config.spec()?);
    }
    Ok(config)
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs, seed_override: Option<u64>) -> Result<()> {
    let config = load_config(a, seed_override)?;
    let points = run_experiment(&config, ctx.schedule)?;
    emit(config.output.as_deref(), &curve_csv(&config, &points))
}

fn cmd_verify(ctx: &Ctx, a: &SimulateArgs, seed_override: Option<u64>) -> Result<()> {
    let mut config = load_config(a, seed_override)?;
    config.encoder = EncoderSelector::BothVerify;
    let report = verify_equivalence(&config, ctx.schedule)?;
    let out = json!({
        "provenance": { "tool": "vlf", "version": env!("CARGO_PKG_VERSION"), "config": &config, "seed": config.seed },
        "report": &report,
    });
    emit_json(config.output.as_deref(), &out)?;
    report.ensure_clean().map(|_| ())
}

fn cmd_caploss(ctx: &Ctx, a: &CaplossArgs) -> Result<()> {
    if a.min_levels < 3 || a.min_levels % 2 == 0 || a.step % 2 == 1 || a.step == 0 {
        return Err(Error::Domain("levels must start at an odd B >= 3 and advance by an even step".into()));
    }
    let options = DesignOptions {
        search_radius: a.radius,
        ..DesignOptions::default()
    };
    let mut out = ctx.csv_header();
    out.push_str("B,delta,Ltail,C_induced,exact_loss,leading_term,asymptotic_term\n");
    for b in (a.min_levels..=a.max_levels).step_by(a.step as usize) {
        let d = design_quantizer(a.sigma2, b, options)?;
        let r = capacity_loss_report(&d)?;
        out.push_str(&format!(
            "{b},{},{},{},{},{},{}\n",
            d.delta, d.tail_label, d.induced_capacity, r.exact_loss, r.leading_term, r.asymptotic_term
        ));
    }
    emit(a.output.as_deref(), &out)
}

/// Least-squares slope of `ys` against `xs`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn cmd_complexity(ctx: &Ctx, a: &ComplexityArgs) -> Result<()> {
    let spec = a.channel.spec()?;
    let config = ExperimentConfig {
        channel: ChannelSource::Inline(spec),
        bits: vec![a.bits],
        epsilon: a.eps,
        trials: 1,
        seed: ctx.seed,
        encoder: EncoderSelector::Lattice,
        output: None,
        rounds_per_bit: None,
        lookup: a.lookup.into(),
    };
    config.validate()?;
    let channel = resolve_channel(&config)?.lattice;
    let codec = CodecConfig::new(a.eps, a.rounds)?;
    let m = 1u128 << a.bits;
    let mut rng = trial_rng(ctx.seed, a.bits, 0);
    let w = rng.random_range(1..=m);
    let mut state = GroupedEncoderState::new(m, channel.lattice_spacing())?;
    let mut trace = Vec::with_capacity(a.rounds);
    let mut nanos = Vec::with_capacity(a.rounds);
    let mut masses = state.masses();
    while masses.max_r() < codec.threshold() && state.round() < codec.max_rounds {
        let start = Instant::now();
        let outcome = partition::partition(&masses, config.lookup);
        let x = state.encode_symbol(&outcome, w)?;
        let n_t = channel.sample(x, &mut rng);
        state.materialize(&outcome.minus, n_t)?;
        masses = state.masses();
        nanos.push(start.elapsed().as_nanos() as f64);
        trace.push(RoundTrace {
            t: state.round(),
            n_t,
            groups: state.group_count(),
            fragments: state.fragment_count(),
            imbalance: outcome.delta,
            repair_iters: outcome.repair.iterations,
            partial_batches: outcome.repair.partial_batches,
            lookup_steps: outcome.repair.lookup_steps,
            max_posterior: masses.max_r(),
            w_plus: x == vlf_core::channels::Input::Plus,
            sed_ok: outcome.sed_ok,
        });
    }
    if trace.len() < 8 {
        return Err(Error::Domain(format!("only {} rounds; raise --bits", trace.len())));
    }
    // Skip the first quarter, where fixed per-round costs dominate.
    let skip = trace.len() / 4;
    let tail = &trace[skip..];
    let xs: Vec<f64> = tail.iter().map(|r| (r.t as f64).ln()).collect();
    let time_slope = slope(&xs, &nanos[skip..].iter().map(|n| n.max(1.0).ln()).collect::<Vec<_>>());
    let step_slope = slope(&xs, &tail.iter().map(|r| (r.lookup_steps.max(1) as f64).ln()).collect::<Vec<_>>());
    if let Some(path) = &a.trace {
        let mut csv = ctx.csv_header();
        csv.push_str("t,n_t,G_t,F_t,delta,repair_iters,max_r,lookup_steps,nanos\n");
        for (r, ns) in trace.iter().zip(&nanos) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t, r.n_t, r.groups, r.fragments, r.imbalance, r.repair_iters, r.max_posterior, r.lookup_steps, ns
            ));
        }
        emit(Some(path), &csv)?;
    }
    let last = trace.last().expect("at least one round");
    let out = json!({
        "provenance": ctx.provenance(),
        "rounds": trace.len(),
        "final_groups": last.groups,
        "final_fragments": last.fragments,
        "sed_violations": trace.iter().filter(|r| !r.sed_ok).count(),
        "max_repair_iters": trace.iter().map(|r| r.repair_iters).max(),
        "time_slope": time_slope,
        "lookup_step_slope": step_slope,
        "within_quadratic": time_slope <= 2.0,
    });
    emit_json(a.output.as_deref(), &out)
}
