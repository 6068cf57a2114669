//! Cross-module invariant suite run by `streamdgd validate`.
//!
//! Every check is named and reports pass, fail (with a detail string) or
//! skipped (with the reason). A report passes when nothing failed.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::ExperimentConfig;
use crate::dgd::{Dgd, StackedIterate, StepSize};
use crate::error::Result;
use crate::experiment::{run_trial_on, RunTrace, Topology};
use crate::network::{MixingInvariant, MixingMatrix};
use crate::oracle::{self, FP_RESIDUAL_TOL};
use crate::seed::{substream, substream_seed};
use crate::streaming::StreamState;

/// Relative slack on contraction inequalities.
pub const CONTRACTION_SLACK: f64 = 1e-10;
/// Absolute slack on the bias certificate.
pub const BIAS_SLACK: f64 = 1e-9;
/// Relative tolerance between recursive and direct accumulators.
pub const RECURSION_TOL: f64 = 1e-9;
/// Largest stacked dimension for which the dense reference solve is run.
pub const KRONECKER_MAX_DIM: usize = 1600;

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Pass,
    Fail(String),
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub status: Status,
    /// What was checked, e.g. the number of points.
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        !self.checks.iter().any(|c| matches!(c.status, Status::Fail(_)))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| matches!(c.status, Status::Fail(_)))
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn pass(&mut self, name: &str, detail: impl Into<String>) {
        self.push(name, Status::Pass, detail);
    }

    fn skip(&mut self, name: &str, why: impl Into<String>) {
        self.push(name, Status::Skipped(why.into()), "");
    }

    fn push(&mut self, name: &str, status: Status, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            status,
            detail: detail.into(),
        });
    }

    /// Pass if `violations` is empty, otherwise fail quoting the first few.
    fn verdict(&mut self, name: &str, detail: impl Into<String>, violations: Vec<String>) {
        if violations.is_empty() {
            self.pass(name, detail);
        } else {
            let shown: Vec<&str> = violations.iter().take(3).map(String::as_str).collect();
            let more = violations.len().saturating_sub(3);
            let mut msg = shown.join("; ");
            if more > 0 {
                msg.push_str(&format!("; ... {more} more"));
            }
            self.push(name, Status::Fail(msg), detail);
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match &c.status {
                Status::Pass => writeln!(f, "PASS  {:<28} {}", c.name, c.detail)?,
                Status::Fail(m) => writeln!(f, "FAIL  {:<28} {m}", c.name)?,
                Status::Skipped(m) => writeln!(f, "SKIP  {:<28} {m}", c.name)?,
            }
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    /// Number of runs to simulate (capped by the config's `n_runs`).
    pub runs: usize,
    /// Random pairs for the one-step contraction check.
    pub contraction_pairs: usize,
    /// Test hook: added to `M[0,0]`, which keeps `M` symmetric but breaks
    /// its row sums.
    pub mixing_perturbation: Option<f64>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            runs: 2,
            contraction_pairs: 100,
            mixing_perturbation: None,
        }
    }
}

fn perturbed(mix: &MixingMatrix, delta: f64) -> Result<MixingMatrix> {
    let mut m = mix.entries().clone();
    m[(0, 0)] += delta;
    MixingMatrix::from_dense(m)
}

fn random_iterate<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, scale: f64) -> StackedIterate {
    let data = (0..n * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>();
    StackedIterate::from_vec(n, d, data).expect("length matches by construction")
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Runs the full suite on `cfg`. Simulation checks use every time step
/// (`measure_stride` is forced to 1 so that drift is tracked).
pub fn validate(cfg: &ExperimentConfig, opts: &Options) -> Result<Report> {
    cfg.validate()?;
    let mut report = Report::default();
    let topo = Topology::shared(cfg)?;
    let mix = match opts.mixing_perturbation {
        Some(delta) => perturbed(&topo.mix, delta)?,
        None => topo.mix.clone(),
    };

    let violations = mix.violations(Some(&topo.graph));
    for inv in [
        MixingInvariant::Symmetry,
        MixingInvariant::RowSum,
        MixingInvariant::ColumnSum,
        MixingInvariant::TopEigenvalue,
        MixingInvariant::SpectralGap,
        MixingInvariant::SmallestEigenvalue,
        MixingInvariant::Sparsity,
    ] {
        let hits: Vec<String> = violations
            .iter()
            .filter(|(k, _)| *k == inv)
            .map(|(_, m)| m.clone())
            .collect();
        report.verdict(
            &format!("mixing/{}", inv.name()),
            format!("N = {}, lambda2 = {:.6}", mix.n_agents(), mix.lambda2()),
            hits,
        );
    }
    let mixing_ok = violations.is_empty();

    check_simplex(cfg, &mut report);
    check_recursion(cfg, &mut report)?;

    if !mixing_ok {
        for name in DOWNSTREAM {
            report.skip(name, "mixing matrix failed its structural checks");
        }
        return Ok(report);
    }

    let step = if cfg.allow_unstable_step {
        StepSize::with_override(cfg.eta, &mix, cfg.mu, cfg.l_smooth)?
    } else {
        StepSize::checked(cfg.eta, &mix, cfg.mu, cfg.l_smooth)?
    };
    check_contraction(cfg, &mix, step, opts, &mut report)?;
    check_kronecker(cfg, &mix, step.eta(), &mut report)?;

    let mut run_cfg = cfg.clone();
    run_cfg.measure_stride = 1;
    let runs = opts.runs.clamp(1, cfg.n_runs);
    let mut traces = Vec::with_capacity(runs);
    for r in 0..runs {
        match run_trial_on(&run_cfg, r, &mix) {
            Ok(tr) => traces.push(tr),
            Err(e) => {
                report.push("simulation", Status::Fail(e.to_string()), "");
                for name in &DOWNSTREAM[4..] {
                    report.skip(name, "simulation failed");
                }
                return Ok(report);
            }
        }
    }
    report.pass("simulation", format!("{runs} runs x {} steps", cfg.horizon));
    check_traces(&traces, cfg, step.within_guard(), &mut report);
    Ok(report)
}

const DOWNSTREAM: [&str; 11] = [
    "contraction/phi",
    "contraction/inner",
    "oracle/kronecker",
    "simulation",
    "oracle/fp-residual",
    "lemma2/minimizer-box",
    "lemma2/gradient-bound",
    "lemma2/fixed-point-norm",
    "lemma3/bias",
    "lemma4/drift",
    "bound/domination",
];

fn check_simplex(cfg: &ExperimentConfig, report: &mut Report) {
    let mut bad = Vec::new();
    for t in 1..=cfg.horizon.min(1000) {
        match cfg.scheme.weights(t) {
            Ok(w) => {
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-12 || w.iter().any(|&a| a < 0.0) {
                    bad.push(format!("t={t}: weights sum to {sum}"));
                }
            }
            Err(e) => bad.push(format!("t={t}: {e}")),
        }
        let (o, n) = cfg.scheme.recursion_coefficients(t);
        if (o + n - 1.0).abs() > 1e-14 || o < 0.0 || n < 0.0 {
            bad.push(format!("t={t}: recursion coefficients ({o}, {n})"));
        }
    }
    report.verdict("weights/simplex", format!("t = 1..{}", cfg.horizon.min(1000)), bad);
}

fn check_recursion(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let steps = cfg.horizon.min(200);
    let mut rng = substream(substream_seed(cfg.master_seed, "validate"), "stream");
    let mut state = StreamState::init(cfg.stream_params(), cfg.scheme, &mut rng, true)?;
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for t in 1..=steps {
        if t > 1 {
            state.advance(&mut rng)?;
        }
        let direct = state.direct_accumulators()?;
        let acc = state.accumulators();
        let gap = rel_gap(acc.per_agent_h(), direct.per_agent_h()).max(rel_gap(acc.per_agent_b(), direct.per_agent_b()));
        worst = worst.max(gap);
        if !(gap <= RECURSION_TOL) {
            bad.push(format!("t={t}: relative gap {gap:e}"));
        }
    }
    report.verdict("weights/recursion", format!("t = 1..{steps}, worst {worst:.2e}"), bad);
    Ok(())
}

fn check_contraction(
    cfg: &ExperimentConfig,
    mix: &MixingMatrix,
    step: StepSize,
    opts: &Options,
    report: &mut Report,
) -> Result<()> {
    if !step.within_guard() {
        let why = format!(
            "eta = {} exceeds (1 + lambda_N)/(L + mu) = {:.6}; contraction not guaranteed",
            step.eta(),
            mix.max_stable_step(cfg.mu, cfg.l_smooth)?
        );
        log::warn!("contraction checks skipped: {why}");
        report.skip("contraction/phi", why.clone());
        report.skip("contraction/inner", why);
        return Ok(());
    }
    let mut rng = substream(substream_seed(cfg.master_seed, "validate"), "contraction");
    let state = StreamState::init(cfg.stream_params(), cfg.scheme, &mut rng, false)?;
    let acc = state.accumulators();
    let (n, d) = (cfg.n_agents, cfg.dim);
    let q = 1.0 - step.eta() * cfg.mu;
    let mut dgd = Dgd::new(step);
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..opts.contraction_pairs {
        let u = random_iterate(&mut rng, n, d, cfg.c_max);
        let v = random_iterate(&mut rng, n, d, cfg.c_max);
        let before = u.distance(&v);
        let (mut pu, mut pv) = (u, v);
        dgd.phi_in_place(mix, acc, &mut pu)?;
        dgd.phi_in_place(mix, acc, &mut pv)?;
        let ratio = pu.distance(&pv) / before;
        worst = worst.max(ratio);
        if ratio > q * (1.0 + CONTRACTION_SLACK) {
            bad.push(format!("pair {k}: ratio {ratio} > {q}"));
        }
    }
    report.verdict(
        "contraction/phi",
        format!("{} pairs, worst ratio {worst:.9} vs 1 - eta mu = {q:.9}", opts.contraction_pairs),
        bad,
    );

    let fp = oracle::fixed_point(mix, acc, step.eta())?;
    let alpha = q.powi(cfg.inner_steps as i32);
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    let trials = opts.contraction_pairs.min(20);
    for k in 0..trials {
        let mut u = random_iterate(&mut rng, n, d, cfg.c_max);
        let before = u.distance(&fp);
        dgd.run_inner(mix, acc, cfg.inner_steps, &mut u)?;
        let ratio = u.distance(&fp) / before;
        worst = worst.max(ratio);
        if ratio > alpha * (1.0 + CONTRACTION_SLACK) {
            bad.push(format!("start {k}: ratio {ratio} > alpha = {alpha}"));
        }
    }
    report.verdict(
        "contraction/inner",
        format!("{trials} starts, worst ratio {worst:.9} vs alpha = {alpha:.9}"),
        bad,
    );
    Ok(())
}

fn check_kronecker(cfg: &ExperimentConfig, mix: &MixingMatrix, eta: f64, report: &mut Report) -> Result<()> {
    let name = "oracle/kronecker";
    if cfg.n_agents * cfg.dim > KRONECKER_MAX_DIM {
        report.skip(name, format!("N d = {} exceeds {KRONECKER_MAX_DIM}", cfg.n_agents * cfg.dim));
        return Ok(());
    }
    let mut rng = substream(substream_seed(cfg.master_seed, "validate"), "kronecker");
    let state = StreamState::init(cfg.stream_params(), cfg.scheme, &mut rng, false)?;
    let a = oracle::fixed_point(mix, state.accumulators(), eta)?;
    let b = oracle::fixed_point_kronecker(mix, state.accumulators(), eta)?;
    let gap = a.distance(&b) / b.norm().max(1.0);
    let bad = if gap <= 1e-10 {
        Vec::new()
    } else {
        vec![format!("decoupled and dense solves differ by {gap:e}")]
    };
    report.verdict(name, format!("relative gap {gap:.2e}"), bad);
    Ok(())
}

fn check_traces(traces: &[RunTrace], cfg: &ExperimentConfig, within_guard: bool, report: &mut Report) {
    let mut residual = Vec::new();
    let mut boxed = Vec::new();
    let mut grads = Vec::new();
    let mut norms = Vec::new();
    let mut bias = Vec::new();
    let mut drift = Vec::new();
    let mut dominated = Vec::new();
    let mut in_range = 0usize;
    let mut points = 0usize;
    for tr in traces {
        let tc = &tr.constants;
        let r = tr.run_index;
        for rec in &tr.records {
            if !(rec.fp_residual <= FP_RESIDUAL_TOL) {
                residual.push(format!("run {r} t={}: residual {:e}", rec.t, rec.fp_residual));
            }
        }
        for c in &tr.certificates {
            if c.minimizer_max_abs > cfg.c_max * (1.0 + 1e-12) {
                boxed.push(format!("run {r} t={}: |wbar*|_inf = {}", c.t, c.minimizer_max_abs));
            }
            for (what, g) in [("minimizer", c.bias_gradient_norm), ("fixed point", c.fixed_point_gradient_norm)] {
                if g > tc.g {
                    grads.push(format!("run {r} t={}: gradient at {what} {g} > G = {}", c.t, tc.g));
                }
            }
            if c.fixed_point_norm > tc.fixed_point_norm_bound() {
                norms.push(format!("run {r} t={}: |wtilde| = {}", c.t, c.fixed_point_norm));
            }
        }
        for (rec, c) in tr.records.iter().zip(&tr.certificates) {
            if rec.bias > c.bias_bound + BIAS_SLACK {
                bias.push(format!("run {r} t={}: bias {} > {}", rec.t, rec.bias, c.bias_bound));
            }
        }
        for dr in &tr.drifts {
            if dr.measured > dr.envelope * (1.0 + 1e-12) {
                drift.push(format!("run {r} t={}: drift {} > envelope {}", dr.t, dr.measured, dr.envelope));
            }
            if dr.measured > dr.gradient_gap_bound * (1.0 + 1e-9) + 1e-12 {
                drift.push(format!(
                    "run {r} t={}: drift {} > gradient gap / mu = {}",
                    dr.t, dr.measured, dr.gradient_gap_bound
                ));
            }
        }
        for ((rec, b), c) in tr.records.iter().zip(&tr.bound_values).zip(&tr.certificates) {
            points += 1;
            if let Some(b) = b {
                in_range += 1;
                if rec.te > *b {
                    dominated.push(format!("run {r} t={}: TE {} > bound {b}", rec.t, rec.te));
                }
            }
            if within_guard && rec.te > c.unrolled_bound {
                dominated.push(format!("run {r} t={}: TE {} > unrolled bound {}", rec.t, rec.te, c.unrolled_bound));
            }
        }
    }
    let n_records: usize = traces.iter().map(|t| t.records.len()).sum();
    let n_drifts: usize = traces.iter().map(|t| t.drifts.len()).sum();
    report.verdict("oracle/fp-residual", format!("{n_records} fixed points, tol {FP_RESIDUAL_TOL:e}"), residual);
    report.verdict("lemma2/minimizer-box", format!("{n_records} minimizers"), boxed);
    report.verdict("lemma2/gradient-bound", format!("G = {:.6e}", traces[0].constants.g), grads);
    report.verdict(
        "lemma2/fixed-point-norm",
        format!("bound {:.6e}", traces[0].constants.fixed_point_norm_bound()),
        norms,
    );
    report.verdict("lemma3/bias", format!("{n_records} points"), bias);
    if n_drifts == 0 {
        report.skip("lemma4/drift", "horizon too short for drift");
    } else {
        report.verdict("lemma4/drift", format!("{n_drifts} transitions"), drift);
    }
    if !within_guard {
        report.skip("bound/domination", "step size outside the contraction range");
    } else {
        let t0 = traces[0].scheme_bound.t0();
        report.verdict(
            "bound/domination",
            format!("t0 = {t0}: {in_range} of {points} points at t >= t0, all {points} against the unrolled bound"),
            dominated,
        );
    }
}
