//! Command-line front end.
//!
//! Every subcommand writes CSV to stdout or `--out`; `--json`, or an `--out`
//! path ending in `.json`, switches to JSON.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use splitpoint_core::baselines::{exhaustive_optimal, SelectorKind};
use splitpoint_core::delaymodel::{epoch_delay, BatchCount, ResourceState, TrainingConfig};
use splitpoint_core::montecarlo::{calibrate_client_flops, linspace, CvCell, MonteCarloConfig, ResourceDistribution};
use splitpoint_core::netprofile::{build_profile, ArchitectureSpec, FlopConvention, NetworkProfile};
use splitpoint_core::ocla::{offline_phase, prune_profile_function, prune_tradeoff, SplitRegionTable};
use splitpoint_core::simrunner::{attach_loss_trace, simulate_training};

use crate::arch::load_architecture;
use crate::export::{profile_rows, region_rows, surface_rows, timeline_rows, write_csv};
use crate::parallel::run_gain_grid_parallel;
use crate::simconfig::{load_loss_trace, load_simulation, seed_from_env};
use crate::table_file::RegionTableFile;

#[derive(Debug, Parser)]
#[command(name = "splitpoint", version, about = "Cut-layer selection for split learning")]
pub struct Cli {
    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer load, activation and parameter profile.
    Profile {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Candidate layers surviving each pruning step.
    Prune {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split-region table. A `.json` output is a reloadable table file.
    Regions {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut layer for one resource state.
    Select(SelectArgs),
    /// Multi-client training timeline.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `epoch,loss,accuracy` CSV to place on the timeline.
        #[arg(long, requires = "curve_out")]
        loss_trace: Option<PathBuf>,
        #[arg(long, requires = "loss_trace")]
        curve_out: Option<PathBuf>,
    },
    /// Monte Carlo gain of the region lookup over a fixed layer.
    McGain(McArgs),
    /// Client speed centring the mean resources in a layer's region.
    CalibrateFk {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 3)]
        layer: usize,
        #[arg(long, default_value_t = 20e6)]
        mean_rate: f64,
        #[arg(long, default_value_t = 0.03)]
        mean_ratio: f64,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Architecture JSON.
    #[arg(long)]
    arch: PathBuf,
    #[arg(long, default_value_t = 32)]
    scalar_bits: u32,
    /// FLOPs per multiply-add.
    #[arg(long, default_value_t = 2)]
    mac_flops: u64,
    #[arg(long, default_value_t = 0)]
    bias_flops: u64,
    #[arg(long, default_value_t = 0)]
    activation_flops: u64,
}

impl ModelArgs {
    fn convention(&self) -> FlopConvention {
        FlopConvention {
            multiply_add: self.mac_flops,
            bias_add: self.bias_flops,
            activation: self.activation_flops,
            ..FlopConvention::default()
        }
    }

    fn load(&self) -> anyhow::Result<(ArchitectureSpec, FlopConvention, NetworkProfile)> {
        let arch = load_architecture(&self.arch)?;
        let conv = self.convention();
        let profile = build_profile(&arch, &conv, self.scalar_bits)?;
        Ok((arch, conv, profile))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BatchMode {
    Exact,
    Ceil,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Samples per client, D_k.
    #[arg(long, default_value_t = 9992)]
    dk: u64,
    #[arg(long, default_value_t = 100)]
    batch: u64,
    #[arg(long, value_enum, default_value_t = BatchMode::Exact)]
    batch_count: BatchMode,
}

impl DataArgs {
    fn training(&self) -> anyhow::Result<TrainingConfig> {
        let t = TrainingConfig {
            dataset_size: self.dk,
            batch_size: self.batch,
            batch_count: match self.batch_count {
                BatchMode::Exact => BatchCount::Exact,
                BatchMode::Ceil => BatchCount::Ceil,
            },
            ..TrainingConfig::reference()
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// ocla, exhaustive or naive:<layer>.
    #[arg(long)]
    strategy: SelectorKind,
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    scalar_bits: u32,
    #[arg(long)]
    dk: Option<u64>,
    #[arg(long, default_value_t = 100)]
    batch: u64,
    /// Region table written by `regions --out file.json`.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Selects on θ alone (bits/FLOP).
    #[arg(long, conflicts_with_all = ["fk", "fs", "rate"])]
    theta: Option<f64>,
    #[arg(long, requires_all = ["fs", "rate"])]
    fk: Option<f64>,
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Debug, Args)]
struct McArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// `lo:hi:n` or a comma-separated list, used for both coefficients of
    /// variation unless `--ratio-grid` is given.
    #[arg(long, default_value = "0.01:0.5:10")]
    grid: String,
    #[arg(long)]
    ratio_grid: Option<String>,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    naive_layer: usize,
    /// Client speed; calibrated to the naive layer's region when omitted.
    #[arg(long)]
    fk: Option<f64>,
    #[arg(long, default_value_t = 20e6)]
    mean_rate: f64,
    #[arg(long, default_value_t = 0.03)]
    mean_ratio: f64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `lo:hi:n` or `a,b,c`.
pub fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [lo, hi, n] => linspace(lo.trim().parse()?, hi.trim().parse()?, n.trim().parse()?),
        [_] => s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad grid list `{s}`"))?,
        _ => bail!("grid `{s}` is neither lo:hi:n nor a comma-separated list"),
    };
    if values.is_empty() {
        bail!("grid `{s}` is empty");
    }
    Ok(values)
}

struct Output<'a> {
    json: bool,
    path: Option<&'a Path>,
}

impl<'a> Output<'a> {
    fn new(json: bool, path: Option<&'a Path>) -> Self {
        let json = json || path.is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
        Self { json, path }
    }

    fn sink(&self, stdout: &'a mut dyn Write) -> anyhow::Result<Box<dyn Write + 'a>> {
        Ok(match self.path {
            Some(p) => Box::new(io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(stdout),
        })
    }

    fn rows<R: Serialize>(&self, stdout: &'a mut dyn Write, rows: &[R]) -> anyhow::Result<()> {
        self.value(stdout, rows, |w, r| Ok(write_csv(w, r)?))
    }

    fn value<T: Serialize + ?Sized>(
        &self,
        stdout: &'a mut dyn Write,
        value: &T,
        csv: impl FnOnce(&mut dyn Write, &T) -> anyhow::Result<()>,
    ) -> anyhow::Result<()> {
        let mut w = self.sink(stdout)?;
        if self.json {
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        } else {
            csv(&mut w, value)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one invocation, writing results to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Profile { model, out } => {
            let (_, _, profile) = model.load()?;
            Output::new(json, out.as_deref()).rows(stdout, &profile_rows(&profile))
        }
        Command::Prune { model, data, out } => {
            let (_, _, profile) = model.load()?;
            let d = data.training()?.effective_dataset_size();
            let step1 = prune_profile_function(&profile, d)?;
            let step2 = prune_tradeoff(&step1, &profile, d)?;
            #[derive(Serialize)]
            struct Stages {
                after_step1: Vec<usize>,
                after_step2: Vec<usize>,
            }
            let stages = Stages {
                after_step1: step1.layers,
                after_step2: step2.layers,
            };
            Output::new(json, out.as_deref()).value(stdout, &stages, |w, s| {
                let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
                writeln!(w, "stage,layers")?;
                writeln!(w, "after_step1,{}", join(&s.after_step1))?;
                writeln!(w, "after_step2,{}", join(&s.after_step2))?;
                Ok(())
            })
        }
        Command::Regions { model, data, out } => {
            let (arch, conv, profile) = model.load()?;
            let table = offline_phase(&profile, data.training()?.effective_dataset_size())?;
            let output = Output::new(json, out.as_deref());
            match (output.json, out.as_deref()) {
                (true, Some(path)) => Ok(RegionTableFile::new(&table, &arch, &conv).save(path)?),
                (true, None) => output.value(stdout, &RegionTableFile::new(&table, &arch, &conv), |_, _| Ok(())),
                (false, _) => output.rows(stdout, &region_rows(&table)),
            }
        }
        Command::Select(args) => select(args, json, stdout),
        Command::Simulate {
            config,
            out,
            loss_trace,
            curve_out,
        } => {
            let started = Instant::now();
            let sim = load_simulation(&config, seed_from_env()?)?;
            let timeline = simulate_training(&sim.profile, Some(&sim.table), &sim.config)?;
            Output::new(json, out.as_deref()).rows(stdout, &timeline_rows(&timeline))?;
            if let (Some(trace), Some(curve_out)) = (loss_trace, curve_out) {
                let curve = attach_loss_trace(&timeline, &load_loss_trace(&trace)?)?;
                Output::new(json, Some(&curve_out)).rows(&mut io::sink(), &curve)?;
            }
            eprintln!(
                "{} epochs, {:.1} s simulated wall clock ({:.2?})",
                timeline.events.len(),
                timeline.total(),
                started.elapsed()
            );
            Ok(())
        }
        Command::McGain(args) => mc_gain(args, json, stdout),
        Command::CalibrateFk {
            model,
            data,
            layer,
            mean_rate,
            mean_ratio,
        } => {
            let (_, _, profile) = model.load()?;
            let table = offline_phase(&profile, data.training()?.effective_dataset_size())?;
            let fk = calibrate_client_flops(&table, layer, mean_rate, mean_ratio)?;
            #[derive(Serialize)]
            struct Calibration {
                layer: usize,
                client_flops: f64,
                mean_theta: f64,
            }
            let c = Calibration {
                layer,
                client_flops: fk,
                mean_theta: ResourceDistribution {
                    client_flops: fk,
                    mean_link_bps: mean_rate,
                    mean_speed_ratio: mean_ratio,
                }
                .mean_theta(),
            };
            Output::new(json, None).rows(stdout, &[c])
        }
    }
}

fn select(args: SelectArgs, json: bool, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let res = match (args.theta, args.fk, args.fs, args.rate) {
        (Some(theta), ..) => ResourceState::from_theta(theta)?,
        (None, Some(fk), Some(fs), Some(rate)) => ResourceState::new(fk, fs, rate)?,
        _ => bail!("give either --theta or all of --fk, --fs and --rate"),
    };
    let arch = args.arch.as_deref().map(load_architecture).transpose()?;
    let conv = FlopConvention::default();
    let profile = arch
        .as_ref()
        .map(|a| build_profile(a, &conv, args.scalar_bits))
        .transpose()?;
    let table: Option<SplitRegionTable> = match (&args.table, &profile, args.dk) {
        (Some(path), _, _) => {
            let file = RegionTableFile::load(path)?;
            if let Some(a) = &arch {
                file.check_architecture(a, &conv)?;
            }
            Some(file.table()?)
        }
        (None, Some(p), Some(dk)) => Some(offline_phase(p, dk)?),
        _ => None,
    };
    let dk = args.dk.or(table.as_ref().map(|t| t.dataset_size));
    let layer = match args.strategy {
        SelectorKind::Ocla => {
            let table = table.context("ocla needs --table, or --arch with --dk")?;
            splitpoint_core::ocla::select_cut_layer(&table, &res)?
        }
        kind => {
            let (Some(profile), Some(dk)) = (&profile, dk) else {
                bail!("{kind} needs --arch and --dk (or --table)");
            };
            let training = TrainingConfig {
                dataset_size: dk,
                batch_size: args.batch,
                ..TrainingConfig::reference()
            };
            kind.select(profile, None, &res, &training)?
        }
    };

    #[derive(Serialize)]
    struct Selection {
        strategy: String,
        layer: usize,
        theta: f64,
        epoch_delay: Option<f64>,
        optimal_layer: Option<usize>,
    }
    let (epoch_delay, optimal_layer) = match (&profile, dk) {
        (Some(p), Some(dk)) => {
            let training = TrainingConfig {
                dataset_size: dk,
                batch_size: args.batch,
                ..TrainingConfig::reference()
            };
            (
                // θ alone does not fix the time scale.
                args.theta
                    .is_none()
                    .then(|| epoch_delay(p, layer, &res, &training).map(|d| d.t_epoch))
                    .transpose()?,
                Some(exhaustive_optimal(p, &res, &training)?.0),
            )
        }
        _ => (None, None),
    };
    let s = Selection {
        strategy: args.strategy.to_string(),
        layer,
        theta: res.theta(),
        epoch_delay,
        optimal_layer,
    };
    Output::new(json, None).rows(stdout, &[s])
}

fn mc_gain(args: McArgs, json: bool, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let started = Instant::now();
    let (_, _, profile) = args.model.load()?;
    let training = args.data.training()?;
    let table = offline_phase(&profile, training.effective_dataset_size())?;
    let rates = parse_grid(&args.grid)?;
    let ratios = match &args.ratio_grid {
        Some(g) => parse_grid(g)?,
        None => rates.clone(),
    };
    let client_flops = match args.fk {
        Some(fk) => fk,
        None => calibrate_client_flops(&table, args.naive_layer, args.mean_rate, args.mean_ratio)?,
    };
    let cfg = MonteCarloConfig {
        iterations: args.iterations,
        samples_per_iteration: args.samples,
        grid: CvCell::grid(&rates, &ratios),
        distribution: ResourceDistribution {
            client_flops,
            mean_link_bps: args.mean_rate,
            mean_speed_ratio: args.mean_ratio,
        },
        training,
        naive_layer: args.naive_layer,
        seed: args.seed,
    };
    let surface = run_gain_grid_parallel(&profile, &table, &cfg, args.threads)?;
    Output::new(json, args.out.as_deref()).rows(stdout, &surface_rows(&surface))?;
    eprintln!(
        "{} cells x {} iterations x {} samples, f_k = {client_flops:.4e} FLOP/s ({:.2?})",
        cfg.grid.len(),
        cfg.iterations,
        cfg.samples_per_iteration,
        started.elapsed()
    );
    Ok(())
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    let pipe = Some(io::ErrorKind::BrokenPipe);
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>().map(io::Error::kind) == pipe
            || c.downcast_ref::<serde_json::Error>().and_then(|j| j.io_error_kind()) == pipe
    })
}

/// Parses `args` and runs; errors go to stderr with a nonzero status.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let stdout = io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("splitpoint: {e:#}");
            ExitCode::FAILURE
        }
    }
}
