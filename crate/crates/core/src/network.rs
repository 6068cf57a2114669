//! Agent graphs and Metropolis mixing matrices.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::csv::fmt_f64;
use crate::error::{Error, Result};

/// Undirected agent graph. Edges are stored once as `(i, j)` with `i < j`,
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    layout: Option<Layout>,
}

/// Geometric embedding of a random geometric graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub positions: Vec<[f64; 2]>,
    pub radius_used: f64,
}

impl Graph {
    /// Builds a graph from an explicit edge list. Self-loops and duplicates
    /// are rejected.
    pub fn from_edges(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::param("graph needs at least one agent"));
        }
        let mut out = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n_agents || b >= n_agents {
                return Err(Error::param(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::param(format!("self-loop at agent {a}")));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        let before = out.len();
        out.dedup();
        if out.len() != before {
            return Err(Error::param("duplicate edge"));
        }
        Ok(Graph {
            n_agents,
            edges: out,
            layout: None,
        })
    }

    /// Connects every pair of points at Euclidean distance `<= radius`.
    pub fn geometric(positions: Vec<[f64; 2]>, radius: f64) -> Self {
        let n = positions.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if distance(positions[i], positions[j]) <= radius {
                    edges.push((i, j));
                }
            }
        }
        Graph {
            n_agents: n,
            edges,
            layout: Some(Layout {
                positions,
                radius_used: radius,
            }),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn layout(&self) -> Option<&Layout> {
        self.layout.as_ref()
    }

    pub fn radius_used(&self) -> Option<f64> {
        self.layout.as_ref().map(|l| l.radius_used)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.edges.binary_search(&(i.min(j), i.max(j))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_agents];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_agents];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Number of connected components, by breadth-first search.
    pub fn component_count(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n_agents];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.n_agents {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &u in &adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Edge list as CSV (`i,j`, zero-based).
    pub fn edges_csv(&self) -> String {
        let mut s = String::from("i,j\n");
        for &(i, j) in &self.edges {
            let _ = writeln!(s, "{i},{j}");
        }
        s
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Uniform point in the unit disk (angle uniform, radius `sqrt(u)`).
fn sample_unit_disk<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    let r = rng.random::<f64>().sqrt();
    [r * theta.cos(), r * theta.sin()]
}

/// Random geometric graph on `n_agents` points drawn uniformly in the unit
/// disk. The radius starts at `initial_radius` and is multiplied by
/// `growth_factor` until the graph is connected; the points never move.
pub fn generate_rgg<R: Rng + ?Sized>(
    n_agents: usize,
    initial_radius: f64,
    growth_factor: f64,
    rng: &mut R,
) -> Result<Graph> {
    if n_agents == 0 {
        return Err(Error::param("n_agents must be >= 1"));
    }
    if !(initial_radius.is_finite() && initial_radius > 0.0) {
        return Err(Error::param(format!(
            "initial radius must be finite and positive, got {initial_radius}"
        )));
    }
    if !(growth_factor.is_finite() && growth_factor > 1.0) {
        return Err(Error::param(format!(
            "growth factor must be finite and > 1, got {growth_factor}"
        )));
    }
    let positions: Vec<[f64; 2]> = (0..n_agents).map(|_| sample_unit_disk(rng)).collect();
    Ok(connect_with_growth(positions, initial_radius, growth_factor))
}

/// Smallest `initial_radius * growth_factor^k`, `k >= 0`, that connects the
/// given points.
pub fn connect_with_growth(positions: Vec<[f64; 2]>, initial_radius: f64, growth_factor: f64) -> Graph {
    let mut k = 0i32;
    loop {
        let radius = initial_radius * growth_factor.powi(k);
        let g = Graph::geometric(positions.clone(), radius);
        if g.is_connected() {
            return g;
        }
        k += 1;
    }
}

/// Symmetric, doubly stochastic mixing matrix with its spectrum.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    entries: DMatrix<f64>,
    spectrum: Vec<f64>,
    lambda2: f64,
    lambda_n: f64,
    topology_factor: f64,
}

/// Tolerances for the structural checks on a mixing matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-12;
pub const TOP_EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Named structural check that failed on a mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingInvariant {
    Symmetry,
    RowSum,
    ColumnSum,
    TopEigenvalue,
    SpectralGap,
    SmallestEigenvalue,
    Sparsity,
}

impl MixingInvariant {
    pub fn name(&self) -> &'static str {
        match self {
            MixingInvariant::Symmetry => "symmetry",
            MixingInvariant::RowSum => "row-sum",
            MixingInvariant::ColumnSum => "column-sum",
            MixingInvariant::TopEigenvalue => "top-eigenvalue",
            MixingInvariant::SpectralGap => "spectral-gap",
            MixingInvariant::SmallestEigenvalue => "smallest-eigenvalue",
            MixingInvariant::Sparsity => "sparsity",
        }
    }
}

impl MixingMatrix {
    /// Wraps a dense matrix, computing its spectrum. Only symmetry is
    /// required here; the remaining structure is checked by
    /// [`MixingMatrix::violations`].
    pub fn from_dense(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::param("mixing matrix must be square and non-empty"));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("mixing matrix has non-finite entries".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Precondition(format!(
                        "mixing matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eig = SymmetricEigen::new(entries.clone());
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            let r = (&entries * v - v * lam).norm();
            if r > EIGEN_RESIDUAL_TOL {
                return Err(Error::Numerical(format!(
                    "eigenpair {k} residual {r:e} exceeds {EIGEN_RESIDUAL_TOL:e}"
                )));
            }
        }
        let mut spectrum: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        spectrum.sort_by(|a, b| b.total_cmp(a));
        // A single agent has no second eigenvalue; lambda2 = 1 makes the
        // topology factor the +inf sentinel.
        let lambda2 = if n >= 2 { spectrum[1] } else { 1.0 };
        let lambda_n = spectrum[n - 1];
        Ok(MixingMatrix {
            entries,
            spectrum,
            lambda2,
            lambda_n,
            topology_factor: 1.0 / (1.0 - lambda2),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Eigenvalues in descending order.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn lambda1(&self) -> f64 {
        self.spectrum[0]
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn lambda_n(&self) -> f64 {
        self.lambda_n
    }

    /// `1 / (1 - lambda2)`; `+inf` for a single agent.
    pub fn topology_factor(&self) -> f64 {
        self.topology_factor
    }

    /// Largest step size for which the DGD map contracts with factor
    /// `1 - eta * mu`: `(1 + lambda_N) / (L + mu)`.
    pub fn max_stable_step(&self, mu: f64, l_smooth: f64) -> Result<f64> {
        check_moduli(mu, l_smooth)?;
        Ok((1.0 + self.lambda_n) / (l_smooth + mu))
    }

    /// Structural checks. `graph` adds the sparsity-pattern check.
    pub fn violations(&self, graph: Option<&Graph>) -> Vec<(MixingInvariant, String)> {
        let n = self.n_agents();
        let m = &self.entries;
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                    out.push((MixingInvariant::Symmetry, format!("M[{i},{j}] != M[{j},{i}]")));
                }
            }
        }
        for i in 0..n {
            let r: f64 = m.row(i).sum();
            if (r - 1.0).abs() > ROW_SUM_TOL {
                out.push((MixingInvariant::RowSum, format!("row {i} sums to {r}")));
            }
            let c: f64 = m.column(i).sum();
            if (c - 1.0).abs() > ROW_SUM_TOL {
                out.push((MixingInvariant::ColumnSum, format!("column {i} sums to {c}")));
            }
        }
        if (self.lambda1() - 1.0).abs() > TOP_EIGEN_TOL {
            out.push((
                MixingInvariant::TopEigenvalue,
                format!("lambda1 = {}", self.lambda1()),
            ));
        }
        if n >= 2 && self.lambda2 >= 1.0 {
            out.push((MixingInvariant::SpectralGap, format!("lambda2 = {}", self.lambda2)));
        }
        if self.lambda_n <= -1.0 {
            out.push((
                MixingInvariant::SmallestEigenvalue,
                format!("lambdaN = {}", self.lambda_n),
            ));
        }
        if let Some(g) = graph {
            for i in 0..n {
                for j in 0..n {
                    if i != j && !g.has_edge(i, j) && m[(i, j)] != 0.0 {
                        out.push((MixingInvariant::Sparsity, format!("M[{i},{j}] on a non-edge")));
                    }
                }
            }
        }
        out
    }

    /// Dense matrix as CSV, one row per line, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = self.n_agents();
        let mut s = String::new();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| fmt_f64(self.entries[(i, j)])).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub(crate) fn check_moduli(mu: f64, l_smooth: f64) -> Result<()> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::param(format!("mu must be positive, got {mu}")));
    }
    if !(l_smooth.is_finite() && l_smooth >= mu) {
        return Err(Error::param(format!("L must satisfy L >= mu, got L={l_smooth}, mu={mu}")));
    }
    Ok(())
}

/// Metropolis weights: `1 / (1 + max(d_i, d_j))` on edges, the remainder on
/// the diagonal.
pub fn metropolis_mixing(graph: &Graph) -> Result<MixingMatrix> {
    if !graph.is_connected() {
        return Err(Error::Precondition(format!(
            "graph has {} components; the mixing matrix would have lambda2 = 1",
            graph.component_count()
        )));
    }
    let n = graph.n_agents();
    let deg = graph.degrees();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in graph.edges() {
        let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        m[(i, j)] = w;
        m[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_dense(m)
}
