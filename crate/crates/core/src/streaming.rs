//! Streaming quadratic losses and their temporally weighted accumulators.
//!
//! Agent `n` at time `t` holds the loss `0.5 (w - c)^T A (w - c)` with a
//! diagonal Hessian `A = diag(h)`, `h_j ~ Unif[mu, L]`, and a center `c` that
//! follows a clipped Gaussian random walk in `[-C_max, C_max]^d`. Only the
//! weighted sums `Hbar_n = sum_i a_i(t) A_{n,i}` and
//! `bbar_n = sum_i a_i(t) A_{n,i} c_{n,i}` are needed to evaluate gradients,
//! and both follow the weight scheme's two-term recursion exactly.
//!
//! All per-agent arrays use the agent-major layout: agent `n`, coordinate `j`
//! lives at index `n * dim + j`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::csv::fmt_f64;
use crate::error::{Error, Result};
use crate::network::check_moduli;
use crate::weighting::{WeightCursor, WeightScheme};

/// Gradient access to a stacked objective `fbar(w) = sum_n fbar_n(w_n)`.
///
/// Implementations must be `mu`-strongly convex and `L`-smooth; the DGD
/// engine and its step-size guard rely on nothing else.
pub trait WeightedObjective {
    fn n_agents(&self) -> usize;
    fn dim(&self) -> usize;
    /// `(mu, L)`.
    fn moduli(&self) -> (f64, f64);
    /// Writes the gradient at the stacked point `w` into `out`.
    fn gradient_into(&self, w: &[f64], out: &mut [f64]);

    fn stacked_len(&self) -> usize {
        self.n_agents() * self.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamParams {
    pub n_agents: usize,
    pub dim: usize,
    pub mu: f64,
    pub l_smooth: f64,
    pub c_max: f64,
    pub sigma2: f64,
    /// Every agent receives agent 0's samples.
    pub homogeneous: bool,
}

impl StreamParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.dim == 0 {
            return Err(Error::param("n_agents and dim must be >= 1"));
        }
        check_moduli(self.mu, self.l_smooth)?;
        if !(self.c_max.is_finite() && self.c_max > 0.0) {
            return Err(Error::param(format!("C_max must be positive, got {}", self.c_max)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::param(format!("sigma2 must be >= 0, got {}", self.sigma2)));
        }
        Ok(())
    }
}

/// One time index worth of samples for all agents (agent-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub hessians: Vec<f64>,
    pub centers: Vec<f64>,
}

/// Weighted per-agent sums `Hbar_n` (diagonal) and `bbar_n`, plus their
/// totals over agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulators {
    n_agents: usize,
    dim: usize,
    mu: f64,
    l_smooth: f64,
    h: Vec<f64>,
    b: Vec<f64>,
    global_h: Vec<f64>,
    global_b: Vec<f64>,
}

impl Accumulators {
    /// Builds accumulators directly from per-agent diagonal curvatures `h`
    /// and linear terms `b` (agent-major, `n_agents * dim` each).
    pub fn from_parts(
        n_agents: usize,
        dim: usize,
        moduli: (f64, f64),
        h: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        let (mu, l_smooth) = moduli;
        check_moduli(mu, l_smooth)?;
        if n_agents == 0 || dim == 0 || h.len() != n_agents * dim || b.len() != h.len() {
            return Err(Error::logic("accumulator parts have the wrong shape"));
        }
        if let Some(x) = h.iter().find(|&&x| !(x >= mu && x <= l_smooth)) {
            return Err(Error::param(format!("curvature {x} outside [mu, L]")));
        }
        let mut acc = Accumulators {
            n_agents,
            dim,
            mu,
            l_smooth,
            h,
            b,
            global_h: vec![0.0; dim],
            global_b: vec![0.0; dim],
        };
        acc.refresh_totals();
        Ok(acc)
    }

    fn from_batch(params: &StreamParams, batch: &SampleBatch) -> Self {
        let b = batch
            .hessians
            .iter()
            .zip(&batch.centers)
            .map(|(h, c)| h * c)
            .collect();
        let mut acc = Accumulators {
            n_agents: params.n_agents,
            dim: params.dim,
            mu: params.mu,
            l_smooth: params.l_smooth,
            h: batch.hessians.clone(),
            b,
            global_h: vec![0.0; params.dim],
            global_b: vec![0.0; params.dim],
        };
        acc.refresh_totals();
        acc
    }

    fn refresh_totals(&mut self) {
        let d = self.dim;
        self.global_h.iter_mut().for_each(|x| *x = 0.0);
        self.global_b.iter_mut().for_each(|x| *x = 0.0);
        for n in 0..self.n_agents {
            for j in 0..d {
                self.global_h[j] += self.h[n * d + j];
                self.global_b[j] += self.b[n * d + j];
            }
        }
    }

    fn blend(&mut self, old: f64, new: f64, batch: &SampleBatch) {
        for k in 0..self.h.len() {
            let a = batch.hessians[k];
            self.h[k] = old * self.h[k] + new * a;
            self.b[k] = old * self.b[k] + new * a * batch.centers[k];
        }
        self.refresh_totals();
    }

    /// Diagonal of `Hbar_n` for every agent (agent-major).
    pub fn per_agent_h(&self) -> &[f64] {
        &self.h
    }

    pub fn per_agent_b(&self) -> &[f64] {
        &self.b
    }

    pub fn global_h(&self) -> &[f64] {
        &self.global_h
    }

    pub fn global_b(&self) -> &[f64] {
        &self.global_b
    }

    /// Gradient of the stacked weighted objective, allocating.
    pub fn weighted_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.stacked_len() {
            return Err(Error::logic(format!(
                "iterate has {} entries, expected {}",
                w.len(),
                self.stacked_len()
            )));
        }
        let mut out = vec![0.0; w.len()];
        self.gradient_into(w, &mut out);
        Ok(out)
    }
}

impl WeightedObjective for Accumulators {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn moduli(&self) -> (f64, f64) {
        (self.mu, self.l_smooth)
    }

    fn gradient_into(&self, w: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.h[k] * w[k] - self.b[k];
        }
    }
}

/// The sample stream of one simulation run.
#[derive(Debug, Clone)]
pub struct StreamState {
    params: StreamParams,
    cursor: WeightCursor,
    acc: Accumulators,
    current: SampleBatch,
    history: Option<Vec<SampleBatch>>,
}

impl StreamState {
    /// Draws `c_{n,0} ~ Unif[-C_max, C_max]^d`, takes one walk step to get
    /// `c_{n,1}`, draws the `t = 1` Hessians, and absorbs them with full
    /// weight.
    ///
    /// Draw order: initial centers, then the batch for `t = 1` as in
    /// [`StreamState::draw_next`].
    pub fn init<R: Rng + ?Sized>(
        params: StreamParams,
        scheme: WeightScheme,
        rng: &mut R,
        keep_history: bool,
    ) -> Result<Self> {
        params.validate()?;
        let cursor = WeightCursor::new(scheme)?;
        let sources = if params.homogeneous { 1 } else { params.n_agents };
        let c_max = params.c_max;
        let raw: Vec<f64> = (0..sources * params.dim)
            .map(|_| rng.random_range(-c_max..=c_max))
            .collect();
        let initial = SampleBatch {
            hessians: vec![0.0; params.n_agents * params.dim],
            centers: broadcast(&params, raw),
        };
        let first = next_batch(&params, &initial.centers, rng);
        let acc = Accumulators::from_batch(&params, &first);
        Ok(StreamState {
            params,
            cursor,
            acc,
            history: keep_history.then(|| vec![first.clone()]),
            current: first,
        })
    }

    pub fn params(&self) -> &StreamParams {
        &self.params
    }

    pub fn scheme(&self) -> WeightScheme {
        self.cursor.scheme()
    }

    /// Current time index (number of absorbed batches).
    pub fn t(&self) -> usize {
        self.cursor.t()
    }

    pub fn accumulators(&self) -> &Accumulators {
        &self.acc
    }

    /// Samples of the latest time index.
    pub fn current(&self) -> &SampleBatch {
        &self.current
    }

    pub fn history(&self) -> Option<&[SampleBatch]> {
        self.history.as_deref()
    }

    /// Draws the samples of time `t + 1`: a Gaussian increment of variance
    /// `sigma2` per center coordinate, clipped to `[-C_max, C_max]`, and fresh
    /// Hessian entries `Unif[mu, L]`.
    pub fn draw_next<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleBatch {
        next_batch(&self.params, &self.current.centers, rng)
    }

    /// Absorbs the batch of time `t + 1` with the scheme's recursion
    /// coefficients.
    pub fn ingest(&mut self, batch: SampleBatch) -> Result<()> {
        let len = self.params.n_agents * self.params.dim;
        if batch.hessians.len() != len || batch.centers.len() != len {
            return Err(Error::logic("sample batch has the wrong shape"));
        }
        let (old, new) = self.cursor.advance();
        self.acc.blend(old, new, &batch);
        if let Some(h) = self.history.as_mut() {
            h.push(batch.clone());
        }
        self.current = batch;
        Ok(())
    }

    /// `draw_next` followed by `ingest`.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let batch = self.draw_next(rng);
        self.ingest(batch)
    }

    /// Recomputes the accumulators as explicit weighted sums over the
    /// retained history, using the closed-form weights.
    pub fn direct_accumulators(&self) -> Result<Accumulators> {
        let history = self
            .history
            .as_ref()
            .ok_or_else(|| Error::logic("stream was created without history"))?;
        let t = history.len();
        let w = self.scheme().weights(t)?;
        let len = self.params.n_agents * self.params.dim;
        let mut acc = self.acc.clone();
        acc.h = vec![0.0; len];
        acc.b = vec![0.0; len];
        for (a, batch) in w.iter().zip(history) {
            for k in 0..len {
                acc.h[k] += a * batch.hessians[k];
                acc.b[k] += a * batch.hessians[k] * batch.centers[k];
            }
        }
        acc.refresh_totals();
        Ok(acc)
    }

    /// Retained history as CSV: `t,agent,coord,center,hessian`.
    pub fn history_csv(&self) -> Result<String> {
        let history = self
            .history
            .as_ref()
            .ok_or_else(|| Error::logic("stream was created without history"))?;
        let d = self.params.dim;
        let mut s = String::from("t,agent,coord,center,hessian\n");
        for (i, batch) in history.iter().enumerate() {
            for k in 0..batch.centers.len() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    i + 1,
                    k / d,
                    k % d,
                    fmt_f64(batch.centers[k]),
                    fmt_f64(batch.hessians[k])
                );
            }
        }
        Ok(s)
    }
}

fn broadcast(params: &StreamParams, raw: Vec<f64>) -> Vec<f64> {
    if params.homogeneous {
        raw.repeat(params.n_agents)
    } else {
        raw
    }
}

/// Clipped random-walk step on the centers plus fresh Hessians. Draw order:
/// all increments (source-major), then all Hessian entries.
fn next_batch<R: Rng + ?Sized>(params: &StreamParams, centers: &[f64], rng: &mut R) -> SampleBatch {
    let sources = if params.homogeneous { 1 } else { params.n_agents };
    let count = sources * params.dim;
    let normal = Normal::new(0.0, params.sigma2.sqrt()).expect("sigma2 validated");
    let c_max = params.c_max;
    let moved: Vec<f64> = centers[..count]
        .iter()
        .map(|c| clip(c + normal.sample(rng), c_max))
        .collect();
    let hess: Vec<f64> = (0..count)
        .map(|_| rng.random_range(params.mu..=params.l_smooth))
        .collect();
    SampleBatch {
        hessians: broadcast(params, hess),
        centers: broadcast(params, moved),
    }
}

/// `max(-c_max, min(x, c_max))`.
pub fn clip(x: f64, c_max: f64) -> f64 {
    x.clamp(-c_max, c_max)
}
