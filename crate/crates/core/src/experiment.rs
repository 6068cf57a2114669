//! The simulation time loop and Monte-Carlo aggregation.
//!
//! Time indexing: the stream starts at `t = 1` and the network starts from
//! `w_0 = 0`. At every `t = 1..=T` the samples of time `t` are absorbed into
//! `fbar_t` (for `t = 1` they are the initial samples), then `E` DGD steps on
//! `fbar_t` map `w_{t-1}` to `w_t`, and `w_t` is scored against the minimizer
//! and fixed point of that same `fbar_t`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::csv::{fmt_f64, write_atomic};
use crate::dgd::{Dgd, StackedIterate, StepSize};
use crate::error::{Error, Result};
use crate::network::{generate_rgg, metropolis_mixing, Graph, MixingMatrix};
use crate::oracle::{self, ErrorRecord};
use crate::seed::{run_seed, substream, substream_seed};
use crate::streaming::StreamState;
use crate::theory::{SchemeBound, TheoryConstants, TheoryInputs};

/// Graph plus mixing matrix used by a run.
#[derive(Debug, Clone)]
pub struct Topology {
    pub graph: Graph,
    pub mix: MixingMatrix,
}

impl Topology {
    pub fn from_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "graph");
        let graph = generate_rgg(cfg.n_agents, cfg.initial_radius, cfg.growth_factor, &mut rng)?;
        let mix = metropolis_mixing(&graph)?;
        Ok(Topology { graph, mix })
    }

    /// The experiment-wide graph used when `shared_topology` is set.
    pub fn shared(cfg: &ExperimentConfig) -> Result<Self> {
        Self::from_seed(cfg, substream_seed(cfg.master_seed, "topology"))
    }

    /// Topology of run `run_index` under the config's sharing rule.
    pub fn for_run(cfg: &ExperimentConfig, run_index: usize) -> Result<Self> {
        if cfg.shared_topology {
            Self::shared(cfg)
        } else {
            Self::from_seed(cfg, run_seed(cfg.master_seed, run_index as u64))
        }
    }
}

/// Per-measurement certification data alongside an [`ErrorRecord`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub t: usize,
    /// `eta kappa Lambda || grad fbar_t(1 (x) wbar*_t) ||`.
    pub bias_bound: f64,
    pub bias_gradient_norm: f64,
    /// `|| wtilde_t ||`.
    pub fixed_point_norm: f64,
    /// `|| grad fbar_t(wtilde_t) ||`.
    pub fixed_point_gradient_norm: f64,
    /// `max_n || wbar*_t ||_inf` over coordinates.
    pub minimizer_max_abs: f64,
    /// Unrolled recursion bound, valid for every `t >= 1`.
    pub unrolled_bound: f64,
}

/// Fixed-point drift across `t -> t + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftRecord {
    pub t: usize,
    /// `|| wtilde_{t+1} - wtilde_t ||`.
    pub measured: f64,
    /// `(1/mu) || grad fbar_{t+1}(wtilde_{t+1}) - grad fbar_t(wtilde_{t+1}) ||`.
    pub gradient_gap_bound: f64,
    /// Scheme envelope on the drift.
    pub envelope: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub run_index: usize,
    pub seed: u64,
    pub records: Vec<ErrorRecord>,
    /// Tracking-error bound per record; `None` before `t0`.
    pub bound_values: Vec<Option<f64>>,
    pub certificates: Vec<Certificate>,
    pub drifts: Vec<DriftRecord>,
    pub constants: TheoryConstants,
    pub scheme_bound: SchemeBound,
    pub lambda2: f64,
    pub lambda_n: f64,
}

impl RunTrace {
    /// Largest gradient norm seen at fixed points and stacked minimizers,
    /// a data-driven stand-in for `G`. Diagnostic only.
    pub fn measured_gradient_bound(&self) -> f64 {
        self.certificates
            .iter()
            .map(|c| c.bias_gradient_norm.max(c.fixed_point_gradient_norm))
            .fold(0.0, f64::max)
    }
}

fn is_measured(t: usize, stride: usize, horizon: usize) -> bool {
    t == 1 || t.is_multiple_of(stride) || t == horizon
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs trial `run_index` on its topology (see [`Topology::for_run`]).
pub fn run_trial(cfg: &ExperimentConfig, run_index: usize) -> Result<RunTrace> {
    let topo = Topology::for_run(cfg, run_index)
        .map_err(|e| Error::Run { run: run_index, t: 0, source: Box::new(e) })?;
    run_trial_on(cfg, run_index, &topo.mix)
}

/// Runs trial `run_index` on a given mixing matrix.
pub fn run_trial_on(cfg: &ExperimentConfig, run_index: usize, mix: &MixingMatrix) -> Result<RunTrace> {
    let at = |t: usize| move |e: Error| Error::Run { run: run_index, t, source: Box::new(e) };
    cfg.validate().map_err(at(0))?;
    let seed = run_seed(cfg.master_seed, run_index as u64);
    let mut rng = substream(seed, "stream");
    let mut state = StreamState::init(cfg.stream_params(), cfg.scheme, &mut rng, false).map_err(at(1))?;

    let step = if cfg.allow_unstable_step {
        StepSize::with_override(cfg.eta, mix, cfg.mu, cfg.l_smooth)
    } else {
        StepSize::checked(cfg.eta, mix, cfg.mu, cfg.l_smooth)
    }
    .map_err(at(0))?;
    let eta = step.eta();
    let mut dgd = Dgd::new(step);

    let first_fp = oracle::fixed_point(mix, state.accumulators(), eta).map_err(at(1))?;
    let constants = TheoryConstants::new(TheoryInputs {
        mu: cfg.mu,
        l_smooth: cfg.l_smooth,
        eta,
        inner_steps: cfg.inner_steps,
        c_max: cfg.c_max,
        dim: cfg.dim,
        n_agents: cfg.n_agents,
        lambda2: mix.lambda2(),
        init_dist: first_fp.norm(),
    })
    .map_err(at(0))?;
    let scheme_bound = SchemeBound::new(cfg.scheme, constants.alpha).map_err(at(0))?;

    let horizon = cfg.horizon;
    let stride = cfg.measure_stride;
    let track_drift = stride == 1;
    let mut w = StackedIterate::zeros(cfg.n_agents, cfg.dim);
    let mut trace = RunTrace {
        run_index,
        seed,
        records: Vec::new(),
        bound_values: Vec::new(),
        certificates: Vec::new(),
        drifts: Vec::new(),
        constants,
        scheme_bound,
        lambda2: mix.lambda2(),
        lambda_n: mix.lambda_n(),
    };
    let mut prev_fp: Option<StackedIterate> = None;
    let mut pending_fp = Some(first_fp);

    for t in 1..=horizon {
        let prev_acc = (t > 1 && track_drift).then(|| state.accumulators().clone());
        if t > 1 {
            state.advance(&mut rng).map_err(at(t))?;
        }
        let acc = state.accumulators();
        dgd.run_inner(mix, acc, cfg.inner_steps, &mut w).map_err(at(t))?;

        let measured = is_measured(t, stride, horizon);
        if !(measured || track_drift) {
            continue;
        }
        let fp = match pending_fp.take() {
            Some(fp) => fp,
            None => oracle::fixed_point(mix, acc, eta).map_err(at(t))?,
        };
        if track_drift {
            if let (Some(prev_fp), Some(prev_acc)) = (prev_fp.as_ref(), prev_acc.as_ref()) {
                let gap = oracle::gradient_gap(prev_acc, acc, &fp).map_err(at(t))?;
                trace.drifts.push(DriftRecord {
                    t: t - 1,
                    measured: fp.distance(prev_fp),
                    gradient_gap_bound: gap / cfg.mu,
                    envelope: trace.scheme_bound.drift_envelope(&trace.constants, t - 1),
                });
            }
        }
        if measured {
            let fp_grad = norm(&acc.weighted_gradient(fp.as_slice()).map_err(at(t))?);
            let m = oracle::measure_with_fixed_point(t, &w, mix, acc, eta, fp.clone()).map_err(at(t))?;
            let tc = &trace.constants;
            trace.certificates.push(Certificate {
                t,
                bias_bound: tc.bias_bound(m.bias_gradient_norm),
                bias_gradient_norm: m.bias_gradient_norm,
                fixed_point_norm: m.fixed_point.norm(),
                fixed_point_gradient_norm: fp_grad,
                minimizer_max_abs: m.minimizer.iter().fold(0.0, |a: f64, x| a.max(x.abs())),
                unrolled_bound: trace.scheme_bound.unrolled_bound(tc, t),
            });
            trace.bound_values.push(trace.scheme_bound.te_bound(tc, t));
            trace.records.push(m.record);
        }
        if track_drift {
            prev_fp = Some(fp);
        }
    }
    Ok(trace)
}

/// Aggregates of one measured time index across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub rms_te: f64,
    pub min_te: f64,
    pub max_te: f64,
    pub mean_fpte: f64,
    pub min_fpte: f64,
    pub max_fpte: f64,
    pub mean_bias: f64,
    pub min_bias: f64,
    pub max_bias: f64,
    /// Mean/min/max of the per-run bound; `None` before `t0`.
    pub mean_bound: Option<f64>,
    pub min_bound: Option<f64>,
    pub max_bound: Option<f64>,
    pub mean_fp_residual: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone)]
pub struct MonteCarloTable {
    pub config: ExperimentConfig,
    pub rows: Vec<AggregateRow>,
    pub traces: Vec<RunTrace>,
    /// The shared topology, when the config uses one.
    pub topology: Option<Topology>,
}

/// Column order of the aggregate CSV.
pub const CSV_HEADER: &str = "t,rms_te,mean_fpte,mean_bias,bound,mean_fp_residual,n_runs";

impl MonteCarloTable {
    /// Aggregate table; the bound column is empty before `t0`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.t,
                fmt_f64(r.rms_te),
                fmt_f64(r.mean_fpte),
                fmt_f64(r.mean_bias),
                r.mean_bound.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.mean_fp_residual),
                r.n_runs
            );
        }
        s
    }

    /// Resolved config as TOML, preceded by comments listing derived seeds.
    /// Feeding it back as a config reproduces the same outputs.
    pub fn manifest(&self) -> Result<String> {
        let mut s = String::from("# streamdgd run manifest\n");
        let _ = writeln!(s, "# topology seed: {}", substream_seed(self.config.master_seed, "topology"));
        for tr in &self.traces {
            let _ = writeln!(s, "# run {} seed: {}", tr.run_index, tr.seed);
        }
        s.push_str(&self.config.to_toml()?);
        Ok(s)
    }

    pub fn csv_file_name(&self) -> String {
        format!("{}.csv", self.config.cell_tag())
    }

    /// Writes `<dir>/<scheme>_E<E>.csv`, `<dir>/manifest.toml`, and for a
    /// shared topology its edge list and mixing matrix. Every file is
    /// written atomically, and only after all contents are rendered.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files = vec![
            (dir.join(self.csv_file_name()), self.to_csv()),
            (dir.join("manifest.toml"), self.manifest()?),
        ];
        if let Some(topo) = &self.topology {
            files.push((dir.join("topology_edges.csv"), topo.graph.edges_csv()));
            files.push((dir.join("mixing_matrix.csv"), topo.mix.to_csv()));
        }
        for (p, c) in &files {
            write_atomic(p, c.as_bytes())?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

/// Runs `cfg.n_runs` independent trials and aggregates them. Results do not
/// depend on `threads` (run-indexed storage, then a serial fold).
pub fn monte_carlo(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<MonteCarloTable> {
    cfg.validate()?;
    if let Some(s) = cfg.suggested_stride() {
        log::warn!(
            "horizon {} with measure_stride = 1 solves a fixed point every step; consider measure_stride = {s}",
            cfg.horizon
        );
    }
    let shared = if cfg.shared_topology {
        Some(Topology::shared(cfg).map_err(|e| Error::Run { run: 0, t: 0, source: Box::new(e) })?)
    } else {
        None
    };
    let work = |r: usize| -> Result<RunTrace> {
        match &shared {
            Some(topo) => run_trial_on(cfg, r, &topo.mix),
            None => run_trial(cfg, r),
        }
    };
    let results: Vec<Result<RunTrace>> = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::logic(format!("thread pool: {e}")))?;
            pool.install(|| (0..cfg.n_runs).into_par_iter().map(work).collect())
        }
        None => (0..cfg.n_runs).into_par_iter().map(work).collect(),
    };
    let traces = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&traces)?;
    Ok(MonteCarloTable {
        config: cfg.clone(),
        rows,
        traces,
        topology: shared,
    })
}

/// Folds run traces into per-t aggregates. RMS-TE is
/// `sqrt(mean_r TE_r(t)^2)`.
pub fn aggregate(traces: &[RunTrace]) -> Result<Vec<AggregateRow>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::param("aggregation needs at least one run"))?;
    let r = traces.len() as f64;
    let mut rows = Vec::with_capacity(first.records.len());
    for (k, rec0) in first.records.iter().enumerate() {
        let t = rec0.t;
        let mut row = AggregateRow {
            t,
            rms_te: 0.0,
            min_te: f64::INFINITY,
            max_te: f64::NEG_INFINITY,
            mean_fpte: 0.0,
            min_fpte: f64::INFINITY,
            max_fpte: f64::NEG_INFINITY,
            mean_bias: 0.0,
            min_bias: f64::INFINITY,
            max_bias: f64::NEG_INFINITY,
            mean_bound: Some(0.0),
            min_bound: Some(f64::INFINITY),
            max_bound: Some(f64::NEG_INFINITY),
            mean_fp_residual: 0.0,
            n_runs: traces.len(),
        };
        let mut sum_sq = 0.0;
        for tr in traces {
            let rec = tr
                .records
                .get(k)
                .filter(|x| x.t == t)
                .ok_or_else(|| Error::logic(format!("run {} has no record for t={t}", tr.run_index)))?;
            sum_sq += rec.te * rec.te;
            row.min_te = row.min_te.min(rec.te);
            row.max_te = row.max_te.max(rec.te);
            row.mean_fpte += rec.fpte / r;
            row.min_fpte = row.min_fpte.min(rec.fpte);
            row.max_fpte = row.max_fpte.max(rec.fpte);
            row.mean_bias += rec.bias / r;
            row.min_bias = row.min_bias.min(rec.bias);
            row.max_bias = row.max_bias.max(rec.bias);
            row.mean_fp_residual += rec.fp_residual / r;
            match tr.bound_values[k] {
                Some(b) => {
                    row.mean_bound = row.mean_bound.map(|m| m + b / r);
                    row.min_bound = row.min_bound.map(|m| m.min(b));
                    row.max_bound = row.max_bound.map(|m| m.max(b));
                }
                None => {
                    row.mean_bound = None;
                    row.min_bound = None;
                    row.max_bound = None;
                }
            }
        }
        row.rms_te = (sum_sq / r).sqrt();
        rows.push(row);
    }
    Ok(rows)
}
