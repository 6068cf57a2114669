//! `streamdgd`: run experiments, print bounds, validate invariants, sweep
//! parameters.
//!
//! Exit codes: 0 success, 1 runtime failure or failed validation, 2 invalid
//! configuration or arguments, 3 degenerate theory constants.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use streamdgd::config::{parse_assignment, ExperimentConfig};
use streamdgd::csv::{fmt_f64, write_atomic};
use streamdgd::experiment::{monte_carlo, Topology};
use streamdgd::theory::{SchemeBound, TheoryConstants, TheoryInputs};
use streamdgd::validation::{self, Options};
use streamdgd::Error;

#[derive(Parser)]
#[command(name = "streamdgd", version, about = "DGD tracking-error simulator and bound verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo experiment and write the aggregate CSV and manifest.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the theory constants and a bound table.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Write the bound table to `<out>/bounds_<cell>.csv` instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Largest t of the grid (default: the horizon).
        #[arg(long)]
        t_max: Option<usize>,
    },
    /// Run the invariant suite; nonzero exit if any check fails.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Number of simulated runs.
        #[arg(long, default_value_t = 2)]
        runs: usize,
        /// Test hook: add this to M[0,0] before validating.
        #[arg(long, hide = true)]
        perturb_mixing: Option<f64>,
    },
    /// Run one experiment per value of a parameter, with common random numbers.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values, e.g. `1,5,10` or `uniform,discounted`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override applied after the file, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the Monte-Carlo runs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(name = "E")]
    E,
    Gamma,
    Eta,
    Scheme,
}

impl SweepParam {
    fn label(self) -> &'static str {
        match self {
            SweepParam::E => "E",
            SweepParam::Gamma => "gamma",
            SweepParam::Eta => "eta",
            SweepParam::Scheme => "scheme",
        }
    }

    fn assignment(self, value: &str) -> (String, String) {
        match self {
            SweepParam::E => ("E".into(), value.into()),
            SweepParam::Eta => ("eta".into(), value.into()),
            SweepParam::Gamma => ("scheme".into(), format!("discounted:{value}")),
            SweepParam::Scheme => ("scheme".into(), value.into()),
        }
    }
}

impl Common {
    fn base(&self) -> Result<String, Error> {
        match &self.config {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display()))),
            None => Ok(String::new()),
        }
    }

    fn assignments(&self, extra: Option<(String, String)>) -> Result<Vec<(String, String)>, Error> {
        let mut out = self
            .overrides
            .iter()
            .map(|s| parse_assignment(s))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(seed) = self.seed {
            out.push(("master_seed".into(), seed.to_string()));
        }
        out.extend(extra);
        Ok(out)
    }

    fn load(&self, extra: Option<(String, String)>) -> Result<ExperimentConfig, Error> {
        ExperimentConfig::load(&self.base()?, &self.assignments(extra)?)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Degenerate(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { common, out } => cmd_run(&common, &out),
        Command::Bounds { common, out, t_max } => cmd_bounds(&common, out.as_deref(), t_max),
        Command::Validate {
            common,
            runs,
            perturb_mixing,
        } => cmd_validate(&common, runs, perturb_mixing),
        Command::Sweep {
            common,
            param,
            values,
            out,
        } => cmd_sweep(&common, param, &values, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run_into(cfg: &ExperimentConfig, threads: Option<usize>, out: &Path) -> Result<(), Error> {
    let table = monte_carlo(cfg, threads)?;
    fs::create_dir_all(out)?;
    for p in table.write_to(out)? {
        log::info!("wrote {}", p.display());
    }
    if let Some(last) = table.rows.last() {
        println!(
            "{}: t = {}, rms_te = {}, mean_fpte = {}, mean_bias = {}",
            out.display(),
            last.t,
            fmt_f64(last.rms_te),
            fmt_f64(last.mean_fpte),
            fmt_f64(last.mean_bias)
        );
    }
    Ok(())
}

fn cmd_run(common: &Common, out: &Path) -> Result<ExitCode, Error> {
    let cfg = common.load(None)?;
    run_into(&cfg, common.threads, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(common: &Common, param: SweepParam, values: &[String], out: &Path) -> Result<ExitCode, Error> {
    if values.is_empty() {
        return Err(Error::Parameter("sweep needs at least one value".into()));
    }
    // Resolve every cell first so a bad value fails before anything runs.
    let cells = values
        .iter()
        .map(|v| {
            let cfg = common.load(Some(param.assignment(v)))?;
            Ok((out.join(format!("{}={v}", param.label())), cfg))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    for (dir, cfg) in &cells {
        run_into(cfg, common.threads, dir)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(common: &Common, runs: usize, perturb: Option<f64>) -> Result<ExitCode, Error> {
    let cfg = common.load(None)?;
    let opts = Options {
        runs,
        mixing_perturbation: perturb,
        ..Options::default()
    };
    let report = validation::validate(&cfg, &opts)?;
    println!("{report}");
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        eprintln!("validation failed: {}", names.join(", "));
        Ok(ExitCode::from(1))
    }
}

/// `1, 2, 5, 10, 20, 50, ...` up to `t_max`, plus `t0` and `t_max`.
fn t_grid(t0: usize, t_max: usize) -> Vec<usize> {
    let mut ts = vec![t_max];
    if t0 <= t_max {
        ts.push(t0);
    }
    let mut decade = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let t = m * decade;
            if t > t_max {
                break 'outer;
            }
            ts.push(t);
        }
        decade = match decade.checked_mul(10) {
            Some(d) => d,
            None => break,
        };
    }
    ts.sort_unstable();
    ts.dedup();
    ts
}

fn cmd_bounds(common: &Common, out: Option<&Path>, t_max: Option<usize>) -> Result<ExitCode, Error> {
    let cfg = common.load(None)?;
    let (lambda2, lambda_n, source) = match cfg.lambda2 {
        Some(l2) => (l2, cfg.lambda_n, "config".to_string()),
        None => {
            let topo = Topology::shared(&cfg)?;
            (
                topo.mix.lambda2(),
                Some(topo.mix.lambda_n()),
                format!("graph (topology seed of master_seed {})", cfg.master_seed),
            )
        }
    };
    // With w_0 = 0 the initial distance is ||wtilde_1||, which is at most
    // C sqrt(N kappa) for any stream realization.
    let base = TheoryConstants::new(TheoryInputs {
        mu: cfg.mu,
        l_smooth: cfg.l_smooth,
        eta: cfg.eta,
        inner_steps: cfg.inner_steps,
        c_max: cfg.c_max,
        dim: cfg.dim,
        n_agents: cfg.n_agents,
        lambda2,
        init_dist: 0.0,
    })?;
    let tc = TheoryConstants {
        init_dist: base.fixed_point_norm_bound(),
        ..base
    };
    let sb = SchemeBound::new(cfg.scheme, tc.alpha)?;

    let mut s = String::new();
    let _ = writeln!(s, "scheme = {}", cfg.scheme.tag());
    let _ = writeln!(s, "lambda2 = {lambda2:.12} ({source})");
    match lambda_n {
        Some(ln) => {
            let max_eta = (1.0 + ln) / (cfg.l_smooth + cfg.mu);
            let _ = writeln!(s, "lambda_n = {ln:.12}");
            let _ = writeln!(s, "max_stable_step = {max_eta:.12}");
            if cfg.eta > max_eta {
                log::warn!("eta = {} exceeds the contraction bound {max_eta}", cfg.eta);
            }
        }
        None => log::warn!("lambda_n not given; step-size guard not checked"),
    }
    let _ = writeln!(s, "alpha = {:.12}", tc.alpha);
    let _ = writeln!(s, "kappa = {:.12}", tc.kappa);
    let _ = writeln!(s, "Lambda = {:.12}", tc.lambda);
    let _ = writeln!(s, "C = {:.12}", tc.c_bound);
    let _ = writeln!(s, "G = {:.12}", tc.g);
    let _ = writeln!(s, "init_dist_bound = {:.12}", tc.init_dist);
    let _ = writeln!(s, "t0 = {}", sb.t0());
    match sb {
        SchemeBound::Uniform(u) => {
            let _ = writeln!(s, "A = {:.12}", u.a);
        }
        SchemeBound::Discounted { constants, .. } => {
            let _ = writeln!(s, "A_gamma = {:.12}", constants.a_gamma);
            let _ = writeln!(s, "floor = {:.12}", constants.floor);
        }
    }
    let _ = writeln!(s, "bias_floor = {:.12}", tc.bias_floor());
    let _ = writeln!(s, "te_limsup = {:.12}", sb.te_limsup(&tc));
    print!("{s}");

    let mut csv = String::from("t,bound,unrolled_bound,drift_envelope\n");
    for t in t_grid(sb.t0(), t_max.unwrap_or(cfg.horizon).max(1)) {
        let _ = writeln!(
            csv,
            "{t},{},{},{}",
            sb.te_bound(&tc, t).map(fmt_f64).unwrap_or_default(),
            fmt_f64(sb.unrolled_bound(&tc, t)),
            fmt_f64(sb.drift_envelope(&tc, t))
        );
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("bounds_{}.csv", cfg.cell_tag()));
            write_atomic(&path, csv.as_bytes())?;
            println!("wrote {}", path.display());
        }
        None => {
            println!();
            print!("{csv}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
