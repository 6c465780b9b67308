use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bubblepair::chaos::{analyze, poincare};
use bubblepair::continuation::{chart, monostability_probe, sweep, Axis, ChartConfig, ChartSeed, GridAxis, ProbeBox, Seed, SweepConfig, DEFAULT_JUMP_THRESHOLD};
use bubblepair::io::{parse_config, parse_config_str, write_outputs, Command, JobStatus, RunConfig, RunManifest, RunResults};
use bubblepair::{Error, Model, Result, State};
use clap::{Args, Parser, Subcommand};

const EXIT_VALIDATION: u8 = 2;
const EXIT_BREAKDOWN: u8 = 3;

/// Dynamics of two coupled, coated microbubbles in an acoustic field.
#[derive(Parser, Debug)]
#[command(name = "bubblepair", version, allow_negative_numbers = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration or a previous run manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Drive amplitude in Pa.
    #[arg(long = "pac", alias = "p-ac", global = true)]
    p_ac: Option<f64>,
    /// Centre distance over the first bubble's equilibrium radius.
    #[arg(long, global = true)]
    d_ratio: Option<f64>,
    /// Size ratio R20/R10.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Drive angular frequency in rad/s.
    #[arg(long, global = true)]
    omega: Option<f64>,
    /// Integrator relative tolerance.
    #[arg(long, global = true)]
    rtol: Option<f64>,
    /// Integrator absolute tolerance.
    #[arg(long, global = true)]
    atol: Option<f64>,
    /// Transient length in drive periods.
    #[arg(long, global = true)]
    transient: Option<usize>,
    /// Measurement length in drive periods.
    #[arg(long, global = true)]
    measure: Option<usize>,
    /// Longest measurement when extending an unconverged run.
    #[arg(long, global = true)]
    max_measure: Option<usize>,
    /// Threshold separating zero from nonzero exponents.
    #[arg(long, global = true)]
    lambda_tr: Option<f64>,
    /// Seed of the probe sampler.
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Lyapunov spectrum, class and Poincaré section of one attractor.
    Analyze {
        /// Initial state `r1,u1,r2,u2[,theta]` or a JSON file.
        #[arg(long)]
        state: String,
    },
    /// Stroboscopic Poincaré section.
    Poincare {
        /// Initial state `r1,u1,r2,u2[,theta]` or a JSON file.
        #[arg(long)]
        state: String,
        /// Drive periods discarded before sampling.
        #[arg(long, default_value_t = 1000)]
        skip: usize,
        /// Samples kept.
        #[arg(long, default_value_t = 1000)]
        collect: usize,
    },
    /// Continuation in the size ratio from several seeds.
    SweepEps {
        /// Lower end of the range.
        #[arg(long)]
        from: f64,
        /// Upper end of the range.
        #[arg(long)]
        to: f64,
        #[arg(long)]
        step: f64,
        /// Where the seeds are analyzed before continuing both ways.
        #[arg(long, default_value_t = 1.0)]
        start: f64,
        /// Seeds as `label:r1,u1,r2,u2` or a JSON file of `{label, state}` objects.
        #[arg(long = "seeds", num_args = 1.., required = true)]
        seeds: Vec<String>,
        /// Hausdorff distance above which a class change counts as a jump.
        #[arg(long, default_value_t = DEFAULT_JUMP_THRESHOLD)]
        jump_threshold: f64,
    },
    /// Two-parameter chart of the effective exponents.
    Chart {
        /// Axis `param:lo:hi:n` with param one of eps, pac, d_ratio.
        #[arg(long)]
        x: String,
        /// Vertical axis, same form as `--x`.
        #[arg(long)]
        y: String,
        /// Seed `x,y,state.json` or `x,y,r1,u1,r2,u2`.
        #[arg(long)]
        seed: String,
    },
    /// Random-start search for coexisting attractors.
    Probe {
        /// Number of random initial states.
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Hausdorff distance under which two records are merged.
        #[arg(long, default_value_t = DEFAULT_JUMP_THRESHOLD)]
        jump_threshold: f64,
    },
    /// Runs the command stored in the configuration file.
    Run,
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn parse_numbers(s: &str, key: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| invalid(key, format!("`{t}` is not a number"))))
        .collect()
}

fn read_state_file(path: &Path, key: &str) -> Result<State> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(key, format!("{}: {e}", path.display())))
}

fn state_from_numbers(v: &[f64], key: &str) -> Result<State> {
    match v.len() {
        4 => Ok(State::new(v[0], v[1], v[2], v[3], 0.0)),
        5 => Ok(State::new(v[0], v[1], v[2], v[3], v[4])),
        n => Err(invalid(key, format!("expected 4 or 5 components, got {n}"))),
    }
}

fn parse_state(s: &str, key: &str) -> Result<State> {
    match parse_numbers(s, key) {
        Ok(v) => state_from_numbers(&v, key),
        Err(_) => read_state_file(Path::new(s), key),
    }
}

fn parse_seeds(args: &[String]) -> Result<Vec<Seed>> {
    let mut out = Vec::new();
    for a in args {
        if a.contains(':') {
            out.push(parse_seed(a)?);
        } else {
            let text = fs::read_to_string(a).map_err(|e| Error::Io(format!("{a}: {e}")))?;
            let seeds: Vec<Seed> = serde_json::from_str(&text).map_err(|e| invalid("seeds", format!("{a}: {e}")))?;
            out.extend(seeds);
        }
    }
    Ok(out)
}

fn parse_seed(s: &str) -> Result<Seed> {
    let (label, state) = s
        .split_once(':')
        .ok_or_else(|| invalid("seeds", format!("`{s}` is not `label:r1,u1,r2,u2`")))?;
    Ok(Seed {
        label: label.to_string(),
        state: parse_state(state, "seeds")?,
    })
}

fn parse_axis(s: &str, key: &str) -> Result<GridAxis> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(invalid(key, format!("`{s}` is not `param:lo:hi:n`")));
    }
    let param: Axis = parts[0].parse().map_err(|e: Error| invalid(key, e.to_string()))?;
    let num = |t: &str| t.parse::<f64>().map_err(|_| invalid(key, format!("`{t}` is not a number")));
    let n = parts[3]
        .parse::<usize>()
        .map_err(|_| invalid(key, format!("`{}` is not a count", parts[3])))?;
    Ok(GridAxis {
        param,
        lo: num(parts[1])?,
        hi: num(parts[2])?,
        n,
    })
}

fn parse_chart_seed(s: &str) -> Result<ChartSeed> {
    let parts: Vec<&str> = s.splitn(3, ',').collect();
    if parts.len() != 3 {
        return Err(invalid("seed", format!("`{s}` is not `x,y,state`")));
    }
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| invalid("seed", format!("`{t}` is not a number")))
    };
    Ok(ChartSeed {
        x: num(parts[0])?,
        y: num(parts[1])?,
        state: parse_state(parts[2], "seed")?,
    })
}

fn to_command(sub: &Sub) -> Result<Option<Command>> {
    Ok(Some(match sub {
        Sub::Analyze { state } => Command::Analyze {
            state: parse_state(state, "state")?,
        },
        Sub::Poincare { state, skip, collect } => Command::Poincare {
            state: parse_state(state, "state")?,
            skip: *skip,
            collect: *collect,
        },
        Sub::SweepEps {
            from,
            to,
            step,
            start,
            seeds,
            jump_threshold,
        } => Command::SweepEps(SweepConfig {
            axis: Axis::Eps,
            lo: *from,
            hi: *to,
            step: *step,
            start: *start,
            seeds: parse_seeds(seeds)?,
            jump_threshold: *jump_threshold,
        }),
        Sub::Chart { x, y, seed } => Command::Chart(ChartConfig {
            x: parse_axis(x, "x")?,
            y: parse_axis(y, "y")?,
            seed: parse_chart_seed(seed)?,
        }),
        Sub::Probe { n, jump_threshold } => Command::Probe {
            n_random: *n,
            sample_box: ProbeBox::default(),
            jump_threshold: *jump_threshold,
        },
        Sub::Run => return Ok(None),
    }))
}

/// Config file first, then command-line flags on top.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => parse_config(path)?,
        None => parse_config_str("{}")?,
    };
    let p = &mut cfg.physical;
    if let Some(v) = g.p_ac {
        p.p_ac = v;
    }
    if let Some(v) = g.omega {
        p.omega = v;
    }
    if let Some(v) = g.eps {
        p.eps = v;
    }
    if let Some(v) = g.d_ratio {
        p.d = v * p.r10;
    }
    if let Some(v) = g.rtol {
        cfg.integrator.rtol = v;
    }
    if let Some(v) = g.atol {
        cfg.integrator.atol = v;
    }
    if let Some(v) = g.transient {
        cfg.analysis.transient_periods = v;
    }
    if let Some(v) = g.measure {
        cfg.analysis.measure_periods = v;
    }
    if let Some(v) = g.max_measure {
        cfg.analysis.max_measure_periods = v;
    }
    if let Some(v) = g.lambda_tr {
        cfg.analysis.lambda_tr = v;
    }
    if let Some(v) = g.rng_seed {
        cfg.rng_seed = v;
    }
    if let Some(v) = &g.out {
        cfg.output_dir = v.clone();
    }
    if let Some(c) = to_command(&cli.command)? {
        cfg.command = Some(c);
    }
    if cfg.command.is_none() {
        return Err(invalid("command", "no command given on the command line or in the config"));
    }
    cfg.analysis.integrator = cfg.integrator;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cfg: &RunConfig) -> Result<(RunResults, Vec<JobStatus>)> {
    let model = Model::new(cfg.physical)?;
    let analysis = cfg.analysis_config();
    let ok = |job: &str, detail: String| JobStatus {
        job: job.to_string(),
        ok: true,
        detail,
    };
    match cfg.command.as_ref().expect("resolved config has a command") {
        Command::Analyze { state } => {
            let r = analyze(&model, state, &analysis)?;
            let detail = format!(
                "class {} sync {} effective ({:.6e}, {:.6e})",
                r.class.map(|c| c.as_str()).unwrap_or("Unconverged"),
                r.synchrony.as_str(),
                r.spectrum.effective.0,
                r.spectrum.effective.1
            );
            Ok((RunResults::Analyze(r), vec![ok("analyze", detail)]))
        }
        Command::Poincare { state, skip, collect } => {
            let ps = poincare(&model, state, &cfg.integrator, *skip, *collect)?;
            let detail = format!("{} samples", ps.len());
            Ok((RunResults::Poincare(ps), vec![ok("poincare", detail)]))
        }
        Command::SweepEps(sc) => {
            let branches = sweep(&cfg.physical, sc, &analysis)?;
            let jobs = branches
                .iter()
                .map(|b| JobStatus {
                    job: format!("{}/{}", b.label, b.arm.as_str()),
                    ok: matches!(b.termination, bubblepair::continuation::Termination::RangeEnd),
                    detail: format!("{} points, {:?}", b.points.len(), b.termination),
                })
                .collect();
            Ok((RunResults::Sweep(branches), jobs))
        }
        Command::Chart(cc) => {
            let grid = chart(&cfg.physical, cc, &analysis)?;
            let failed = grid
                .cells
                .iter()
                .filter(|c| matches!(c.outcome, bubblepair::continuation::CellOutcome::Failed { .. }))
                .count();
            let job = JobStatus {
                job: "chart".into(),
                ok: failed == 0,
                detail: format!("{} cells, {failed} failed", grid.cells.len()),
            };
            Ok((RunResults::Chart(grid), vec![job]))
        }
        Command::Probe {
            n_random,
            sample_box,
            jump_threshold,
        } => {
            let report = monostability_probe(&model, *n_random, sample_box, cfg.rng_seed, &analysis, *jump_threshold)?;
            let detail = format!(
                "{} distinct attractors, {} failed probes",
                report.coexistence.attractors.len(),
                report.coexistence.failures.len()
            );
            Ok((RunResults::Probe(report), vec![ok("probe", detail)]))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_breakdown() {
        EXIT_BREAKDOWN
    } else {
        match e {
            Error::InvalidParameters(_) | Error::Domain(_) | Error::Config { .. } | Error::Precondition(_) => {
                EXIT_VALIDATION
            }
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let started = Instant::now();
    let outcome = execute(&cfg);
    let elapsed = started.elapsed();
    let (code, jobs) = match outcome {
        Ok((results, jobs)) => match write_outputs(&results, &cfg.output_dir) {
            Ok(paths) => {
                for j in &jobs {
                    println!("{}: {}", j.job, j.detail);
                }
                for p in paths {
                    println!("wrote {}", p.display());
                }
                (0, jobs)
            }
            Err(e) => {
                eprintln!("error: {e}");
                (exit_code(&e), jobs)
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            let name = cfg.command.as_ref().map(|c| c.name()).unwrap_or("run");
            let job = JobStatus {
                job: name.to_string(),
                ok: false,
                detail: e.to_string(),
            };
            (exit_code(&e), vec![job])
        }
    };
    match RunManifest::new(cfg.clone(), elapsed, jobs).write(&cfg.output_dir) {
        Ok(p) => println!("wrote {}", p.display()),
        Err(e) => {
            eprintln!("error: cannot write manifest: {e}");
            if code == 0 {
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::from(code)
}
