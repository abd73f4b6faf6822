//! Sampled quadratic Lyapunov programs.
//!
//! Each observation `(x, u) -> (y, v)` becomes the row
//! `⟨yyᵀ, P_v⟩ <= λ^{2l} ⟨xxᵀ, P_u⟩`. For a fixed rate the rows, the floor
//! `P_u ⪰ I` and the Frobenius cap `‖P_u‖_F <= C` are all convex, and a
//! point in their intersection is searched for by a phase-I log-barrier
//! method that grows its working set of rows on demand. The rate is then
//! minimized by bisection and the largest Frobenius norm by a second
//! bisection at the optimal rate.

use std::io::{self, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::csvfmt::num;
use crate::linalg::{LinalgError, SymMatrix, Vector};
use crate::policy::Tolerances;
use crate::sampling::{ContinuousObservation, ContinuousSampleSet, HybridObservation, HybridSampleSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("the program has no constraint rows")]
    NoSamples,
    #[error("row {row}: expected state dimension {expected}, got {got}")]
    DimensionMismatch { row: usize, expected: usize, got: usize },
    #[error("row {row}: node {node} out of range (node count {node_count})")]
    NodeOutOfRange { row: usize, node: usize, node_count: usize },
    #[error("row {row}: non-finite or zero initial state")]
    DegenerateRow { row: usize },
    #[error("Frobenius radius {radius} is below sqrt(n) = {min}")]
    RadiusTooSmall { radius: f64, min: f64 },
    #[error("unbounded growth: no feasible rate up to {cap}")]
    UnboundedGrowth { cap: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One sampled inequality `⟨yyᵀ, P_target⟩ <= λ^{2l} ⟨xxᵀ, P_source⟩`,
/// kept in factored rank-one form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    x: Vector,
    y: Vector,
    source: usize,
    target: usize,
}

impl ConstraintRow {
    pub fn new(x: Vector, y: Vector, source: usize, target: usize) -> Self {
        ConstraintRow { x, y, source, target }
    }

    pub fn from_hybrid(obs: &HybridObservation) -> Self {
        ConstraintRow::new(obs.x.clone(), obs.y.clone(), obs.source, obs.target)
    }

    pub fn from_continuous(obs: &ContinuousObservation) -> Self {
        ConstraintRow::new(obs.x.clone(), obs.y.clone(), 0, 0)
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// `G_s = x xᵀ`.
    pub fn gram_source(&self) -> SymMatrix {
        SymMatrix::outer(&self.x)
    }

    /// `G_t = y yᵀ`.
    pub fn gram_target(&self) -> SymMatrix {
        SymMatrix::outer(&self.y)
    }

    /// `⟨G_t, P_t⟩ - factor ⟨G_s, P_s⟩` and the scale
    /// `max(⟨G_t, P_t⟩, factor ⟨G_s, P_s⟩)`.
    pub fn residual(&self, p: &[SymMatrix], factor: f64) -> (f64, f64) {
        let lhs = p[self.target].quad_form(&self.y);
        let rhs = factor * p[self.source].quad_form(&self.x);
        (lhs - rhs, lhs.max(rhs))
    }

    /// Residual divided by `1 + scale`.
    pub fn relative_violation(&self, p: &[SymMatrix], factor: f64) -> f64 {
        let (r, s) = self.residual(p, factor);
        r / (1.0 + s)
    }
}

/// Outcome of a fixed-rate feasibility query.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible { matrices: Vec<SymMatrix>, iterations: usize, residual: f64 },
    Infeasible { iterations: usize, residual: f64 },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }

    pub fn iterations(&self) -> usize {
        match self {
            Feasibility::Feasible { iterations, .. } | Feasibility::Infeasible { iterations, .. } => *iterations,
        }
    }

    pub fn residual(&self) -> f64 {
        match self {
            Feasibility::Feasible { residual, .. } | Feasibility::Infeasible { residual, .. } => {
                *residual
            }
        }
    }
}

/// The quantity being bisected at a trace entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Rate,
    Frobenius,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Rate => "lambda",
            Phase::Frobenius => "frobenius",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub phase: Phase,
    pub value: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverDiagnostics {
    pub feasibility_calls: usize,
    pub total_iterations: usize,
    /// Largest relative row violation of the returned matrices.
    pub max_residual: f64,
    pub trace: Vec<TraceEntry>,
}

impl SolverDiagnostics {
    fn record(&mut self, phase: Phase, value: f64, outcome: &Feasibility) {
        self.feasibility_calls += 1;
        self.total_iterations += outcome.iterations();
        self.trace.push(TraceEntry {
            phase,
            value,
            feasible: outcome.is_feasible(),
            iterations: outcome.iterations(),
            residual: outcome.residual(),
        });
    }

    /// `step,phase,value,feasible,iterations,residual`.
    pub fn write_trace_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "step,phase,value,feasible,iterations,residual")?;
        for (i, t) in self.trace.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{},{}",
                t.phase.as_str(),
                num(t.value),
                t.feasible,
                t.iterations,
                num(t.residual)
            )?;
        }
        Ok(())
    }
}

/// Optimum of a sampled program under the order (rate, max Frobenius norm).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSolution {
    pub lambda_star: f64,
    pub horizon: usize,
    /// One matrix per node; a single entry for continuous data.
    pub p_star: Vec<SymMatrix>,
    pub c_star: f64,
    pub diagnostics: SolverDiagnostics,
}

impl ScenarioSolution {
    /// `λ*^{2l}`, the factor multiplying the source side of every row.
    pub fn factor(&self) -> f64 {
        self.lambda_star.powi(2 * self.horizon as i32)
    }

    /// Largest relative violation over `rows`, recomputed from scratch.
    pub fn max_violation(&self, rows: &[ConstraintRow]) -> f64 {
        let f = self.factor();
        rows.iter()
            .map(|r| r.relative_violation(&self.p_star, f))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Rows over `node_count` matrix unknowns of order `dim`, at horizon `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    rows: Vec<ConstraintRow>,
    node_count: usize,
    dim: usize,
    horizon: usize,
}

impl Program {
    pub fn new(
        rows: Vec<ConstraintRow>,
        node_count: usize,
        dim: usize,
        horizon: usize,
    ) -> Result<Self, SolverError> {
        let mut program = Program {
            rows: Vec::with_capacity(rows.len()),
            node_count,
            dim,
            horizon,
        };
        for row in rows {
            program.push(row)?;
        }
        Ok(program)
    }

    pub fn hybrid(set: &HybridSampleSet) -> Result<Self, SolverError> {
        let rows = set.observations().iter().map(ConstraintRow::from_hybrid).collect();
        Program::new(rows, set.node_count, set.dim, set.horizon)
    }

    pub fn continuous(set: &ContinuousSampleSet) -> Result<Self, SolverError> {
        let rows = set.observations().iter().map(ConstraintRow::from_continuous).collect();
        Program::new(rows, 1, set.dim, set.horizon)
    }

    pub fn push(&mut self, row: ConstraintRow) -> Result<(), SolverError> {
        let index = self.rows.len();
        for v in [&row.x, &row.y] {
            if v.len() != self.dim {
                return Err(SolverError::DimensionMismatch {
                    row: index,
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        for node in [row.source, row.target] {
            if node >= self.node_count {
                return Err(SolverError::NodeOutOfRange {
                    row: index,
                    node,
                    node_count: self.node_count,
                });
            }
        }
        let finite = row.x.iter().chain(row.y.iter()).all(|v| v.is_finite());
        if !finite || row.x.norm() == 0.0 {
            return Err(SolverError::DegenerateRow { row: index });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn factor(&self, lambda: f64) -> f64 {
        lambda.powi(2 * self.horizon as i32)
    }

    /// Feasibility of the rows at rate `lambda` with every matrix in
    /// `{P ⪰ I, ‖P‖_F <= radius}`.
    pub fn feasibility(
        &self,
        lambda: f64,
        radius: f64,
        tol: &Tolerances,
    ) -> Result<Feasibility, SolverError> {
        self.feasibility_at_factor(self.factor(lambda), radius, tol)
    }

    /// Like [`Program::feasibility`] but, when feasible, returns a point
    /// deep inside the feasible set instead of the first one found.
    pub fn deep_feasibility(
        &self,
        lambda: f64,
        radius: f64,
        tol: &Tolerances,
    ) -> Result<Feasibility, SolverError> {
        let min_radius = (self.dim as f64).sqrt();
        if !(radius > min_radius * (1.0 + 1e-12)) {
            return Err(SolverError::RadiusTooSmall { radius, min: min_radius });
        }
        let factor = self.factor(lambda);
        Ok(self.working_set(factor, radius, true, tol))
    }

    /// Runs the barrier on a growing subset of rows. Infeasibility of a
    /// subset settles the question; a point found for the subset is checked
    /// against every row and the worst offenders join the subset.
    fn working_set(&self, factor: f64, radius: f64, deep: bool, tol: &Tolerances) -> Feasibility {
        let batch = WORKING_BATCH.max(4 * self.node_count);
        let identity = vec![SymMatrix::identity(self.dim); self.node_count];
        let mut active = vec![false; self.rows.len()];
        let mut chosen = worst_rows(&self.rows, &identity, factor, &active, batch);
        let mut iterations = 0;
        loop {
            for &k in &chosen {
                active[k] = true;
            }
            let indices: Vec<usize> = (0..self.rows.len()).filter(|&k| active[k]).collect();
            let outcome = Barrier::new(self, &indices, factor, radius).run(factor, deep, tol);
            iterations += outcome.iterations();
            let (matrices, residual) = match outcome {
                Feasibility::Feasible { matrices, residual, .. } => (matrices, residual),
                Feasibility::Infeasible { residual, .. } => {
                    return Feasibility::Infeasible { iterations, residual }
                }
            };
            chosen = worst_rows(&self.rows, &matrices, factor, &active, batch);
            if chosen.is_empty() {
                return Feasibility::Feasible { matrices, iterations, residual };
            }
        }
    }

    pub(crate) fn feasibility_at_factor(
        &self,
        factor: f64,
        radius: f64,
        tol: &Tolerances,
    ) -> Result<Feasibility, SolverError> {
        let min_radius = (self.dim as f64).sqrt();
        if !(radius >= min_radius * (1.0 - 1e-12)) {
            return Err(SolverError::RadiusTooSmall { radius, min: min_radius });
        }
        let identity = vec![SymMatrix::identity(self.dim); self.node_count];
        let at_identity = self
            .rows
            .iter()
            .map(|r| r.residual(&identity, factor).0)
            .fold(0.0, f64::max);
        if at_identity <= 0.0 {
            return Ok(Feasibility::Feasible { matrices: identity, iterations: 0, residual: 0.0 });
        }
        if radius <= min_radius * (1.0 + 1e-12) {
            return Ok(Feasibility::Infeasible { iterations: 0, residual: at_identity });
        }
        Ok(self.working_set(factor, radius, false, tol))
    }

    /// Minimizes the rate, then the largest Frobenius norm at that rate.
    pub fn solve(&self, tol: &Tolerances) -> Result<ScenarioSolution, SolverError> {
        if self.rows.is_empty() {
            return Err(SolverError::NoSamples);
        }
        let cap = tol.frobenius_cap;
        let mut diag = SolverDiagnostics::default();

        let at_zero = self.feasibility(0.0, cap, tol)?;
        diag.record(Phase::Rate, 0.0, &at_zero);
        let (lambda_star, mut best) = if let Feasibility::Feasible { matrices, .. } = at_zero {
            (0.0, matrices)
        } else {
            let l = self.horizon as f64;
            let gain = self
                .rows
                .iter()
                .map(|r| r.y.norm() / r.x.norm())
                .fold(0.0, f64::max);
            let mut hi = (2.0 * gain.powf(1.0 / l)).max(tol.lambda_tol).min(tol.lambda_cap);
            let mut best = loop {
                let outcome = self.feasibility(hi, cap, tol)?;
                diag.record(Phase::Rate, hi, &outcome);
                if let Feasibility::Feasible { matrices, .. } = outcome {
                    break matrices;
                }
                if hi >= tol.lambda_cap {
                    return Err(SolverError::UnboundedGrowth { cap: tol.lambda_cap });
                }
                hi = (2.0 * hi).min(tol.lambda_cap);
            };
            let mut lo = 0.0;
            while hi - lo > tol.lambda_tol {
                let mid = 0.5 * (lo + hi);
                let outcome = self.feasibility(mid, cap, tol)?;
                diag.record(Phase::Rate, mid, &outcome);
                match outcome {
                    Feasibility::Feasible { matrices, .. } => {
                        hi = mid;
                        best = matrices;
                    }
                    Feasibility::Infeasible { .. } => lo = mid,
                }
            }
            (hi, best)
        };

        let norm_of = |ps: &[SymMatrix]| ps.iter().map(SymMatrix::frobenius_norm).fold(0.0, f64::max);
        best = shrink_to_floor(best)?;
        let mut c_hi = norm_of(&best);
        let mut c_lo = (self.dim as f64).sqrt();
        let c_tol = tol.c_tol(self.dim);
        while c_hi - c_lo > c_tol {
            let mid = 0.5 * (c_lo + c_hi);
            let outcome = self.feasibility(lambda_star, mid, tol)?;
            diag.record(Phase::Frobenius, mid, &outcome);
            match outcome {
                Feasibility::Feasible { matrices, .. } => {
                    best = shrink_to_floor(matrices)?;
                    c_hi = norm_of(&best).min(mid);
                }
                Feasibility::Infeasible { .. } => c_lo = mid,
            }
        }

        let mut solution = ScenarioSolution {
            lambda_star,
            horizon: self.horizon,
            c_star: norm_of(&best),
            p_star: best,
            diagnostics: diag,
        };
        solution.diagnostics.max_residual = solution.max_violation(&self.rows).max(0.0);
        Ok(solution)
    }
}

const WORKING_BATCH: usize = 48;

/// Up to `count` inactive rows violated by `p`, worst first.
fn worst_rows(
    rows: &[ConstraintRow],
    p: &[SymMatrix],
    factor: f64,
    active: &[bool],
    count: usize,
) -> Vec<usize> {
    let mut violated: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .filter(|&(k, _)| !active[k])
        .map(|(k, r)| (k, r.relative_violation(p, factor)))
        .filter(|&(_, v)| v > 0.0)
        .collect();
    violated.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    violated.truncate(count);
    violated.into_iter().map(|(k, _)| k).collect()
}

/// Rows are homogeneous in the matrices, so a common rescaling that makes
/// the smallest eigenvalue exactly one keeps every row and the floor while
/// shrinking every norm.
fn shrink_to_floor(matrices: Vec<SymMatrix>) -> Result<Vec<SymMatrix>, SolverError> {
    let mut floor = f64::INFINITY;
    for p in &matrices {
        floor = floor.min(p.eigen()?.min());
    }
    if floor > 1.0 {
        Ok(matrices.iter().map(|p| p.scale(1.0 / floor)).collect())
    } else {
        Ok(matrices)
    }
}

/// Fixed-rate feasibility on a raw row list.
pub fn feasibility(
    rows: &[ConstraintRow],
    lambda: f64,
    horizon: usize,
    node_count: usize,
    dim: usize,
    radius: f64,
    tol: &Tolerances,
) -> Result<Feasibility, SolverError> {
    Program::new(rows.to_vec(), node_count, dim, horizon)?.feasibility(lambda, radius, tol)
}

/// Solves the hybrid program: one matrix per graph node.
pub fn solve_hybrid(set: &HybridSampleSet, tol: &Tolerances) -> Result<ScenarioSolution, SolverError> {
    Program::hybrid(set)?.solve(tol)
}

/// Solves the continuous program: one matrix shared by all states.
pub fn solve_continuous(
    set: &ContinuousSampleSet,
    tol: &Tolerances,
) -> Result<ScenarioSolution, SolverError> {
    Program::continuous(set)?.solve(tol)
}

/// Phase-I log-barrier search at a fixed rate.
///
/// Rows are homogeneous in the matrices, so the search runs over
/// normalized matrices `Q_u = μ P_u` with `Σ_u tr Q_u = 1`. Unknowns are
/// the upper triangles of every `Q_u`, then `μ`, then a margin `s`. The
/// program maximizes `s` subject to
/// `(f⟨xxᵀ, Q_s⟩ − ⟨yyᵀ, Q_t⟩) / ν >= s` for every row, `Q_u ≻ μ I` and
/// `‖Q_u‖_F < radius · μ`. A point with `s >= 0` gives matrices
/// `P_u = Q_u / μ` that satisfy every row; a certified `max s < 0` rules
/// out any solution.
struct Barrier<'a> {
    program: &'a Program,
    radius2: f64,
    pairs: Vec<(usize, usize)>,
    /// Sparse coefficients of each normalized row slack (margin excluded).
    rows: Vec<Vec<(usize, f64)>>,
    /// Equality constraint `Σ tr Q_u = 1` as a coefficient vector.
    trace: Vector,
    vars: usize,
}

impl<'a> Barrier<'a> {
    fn new(program: &'a Program, indices: &[usize], factor: f64, radius: f64) -> Self {
        let n = program.dim;
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let block = pairs.len();
        let rows = indices
            .iter()
            .map(|&k| {
                let r = &program.rows[k];
                let nu = r.y.norm_squared() + factor * r.x.norm_squared();
                let nu = if nu > 0.0 { nu } else { 1.0 };
                let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(2 * block);
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let w = if i == j { 1.0 } else { 2.0 };
                    let src = factor * w * r.x[i] * r.x[j] / nu;
                    let tgt = -w * r.y[i] * r.y[j] / nu;
                    if r.source == r.target {
                        coeffs.push((r.source * block + k, src + tgt));
                    } else {
                        coeffs.push((r.source * block + k, src));
                        coeffs.push((r.target * block + k, tgt));
                    }
                }
                coeffs.retain(|&(_, c)| c != 0.0);
                coeffs
            })
            .collect();
        let vars = program.node_count * block + 2;
        let mut trace = Vector::zeros(vars);
        for u in 0..program.node_count {
            for (k, &(i, j)) in pairs.iter().enumerate() {
                if i == j {
                    trace[u * block + k] = 1.0;
                }
            }
        }
        Barrier {
            program,
            radius2: radius * radius,
            pairs,
            rows,
            trace,
            vars,
        }
    }

    fn block(&self) -> usize {
        self.pairs.len()
    }

    fn mu_index(&self) -> usize {
        self.vars - 2
    }

    fn margin(&self, z: &[f64]) -> f64 {
        z[self.vars - 1]
    }

    /// Trace of each `Q_u` at the starting point; margins are judged in
    /// this unit.
    fn unit(&self) -> f64 {
        1.0 / (self.program.dim * self.program.node_count) as f64
    }

    fn matrix(&self, z: &[f64], u: usize) -> DMatrix<f64> {
        let n = self.program.dim;
        let base = u * self.block();
        let mut p = DMatrix::zeros(n, n);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            p[(i, j)] = z[base + k];
            p[(j, i)] = z[base + k];
        }
        p
    }

    fn slack(&self, coeffs: &[(usize, f64)], z: &[f64]) -> f64 {
        coeffs.iter().map(|&(k, c)| c * z[k]).sum::<f64>() - self.margin(z)
    }

    fn start(&self) -> Vec<f64> {
        let unit = self.unit();
        let n = self.program.dim as f64;
        let mut z = vec![0.0; self.vars];
        for u in 0..self.program.node_count {
            for (idx, &(i, j)) in self.pairs.iter().enumerate() {
                if i == j {
                    z[u * self.block() + idx] = unit;
                }
            }
        }
        // floor needs μ < unit, ball needs μ > unit·sqrt(n)/radius
        let ratio = (n / self.radius2).sqrt();
        z[self.mu_index()] = unit * 0.5 * (1.0 + ratio);
        let min_slack = self
            .rows
            .iter()
            .map(|c| self.slack(c, &z))
            .fold(f64::INFINITY, f64::min);
        z[self.vars - 1] = min_slack.min(0.0) - 0.1 * unit;
        z
    }

    /// Barrier value at `z`, or `None` outside the strict domain.
    fn value(&self, z: &[f64], t: f64) -> Option<f64> {
        let mu = z[self.mu_index()];
        let mut phi = -t * self.margin(z);
        for c in &self.rows {
            let sigma = self.slack(c, z);
            if !(sigma > 0.0) {
                return None;
            }
            phi -= sigma.ln();
        }
        let n = self.program.dim;
        for u in 0..self.program.node_count {
            let q = self.matrix(z, u);
            let h = self.radius2 * mu * mu - q.norm_squared();
            if !(h > 0.0 && mu > 0.0) {
                return None;
            }
            phi -= h.ln();
            let f = q - DMatrix::identity(n, n) * mu;
            let chol = f.cholesky()?;
            phi -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        phi.is_finite().then_some(phi)
    }

    /// Gradient and Hessian at a strictly feasible `z`.
    fn derivatives(&self, z: &[f64], t: f64) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let m = self.vars;
        let sv = m - 1;
        let mv = self.mu_index();
        let block = self.block();
        let n = self.program.dim;
        let mu = z[mv];
        let mut grad = vec![0.0; m];
        let mut hess = DMatrix::<f64>::zeros(m, m);
        grad[sv] = -t;
        for c in &self.rows {
            let sigma = self.slack(c, z);
            let inv = 1.0 / sigma;
            let inv2 = inv * inv;
            for &(a, ca) in c {
                grad[a] -= ca * inv;
                for &(b, cb) in c {
                    hess[(a, b)] += ca * cb * inv2;
                }
                hess[(a, sv)] -= ca * inv2;
                hess[(sv, a)] -= ca * inv2;
            }
            grad[sv] += inv;
            hess[(sv, sv)] += inv2;
        }
        for u in 0..self.program.node_count {
            let base = u * block;
            let q = self.matrix(z, u);
            // cone ‖Q‖_F < radius · μ
            let h = self.radius2 * mu * mu - q.norm_squared();
            let mut dh: Vec<(usize, f64, f64)> = self
                .pairs
                .iter()
                .enumerate()
                .map(|(k, &(i, j))| {
                    let w = if i == j { 2.0 } else { 4.0 };
                    (base + k, -w * q[(i, j)], -w)
                })
                .collect();
            dh.push((mv, 2.0 * self.radius2 * mu, 2.0 * self.radius2));
            for &(a, da, dda) in &dh {
                grad[a] -= da / h;
                hess[(a, a)] -= dda / h;
                for &(b, db, _) in &dh {
                    hess[(a, b)] += da * db / (h * h);
                }
            }
            // floor Q − μ I ≻ 0
            let f = q - DMatrix::identity(n, n) * mu;
            let w_inv = f.cholesky()?.inverse();
            let mut products: Vec<DMatrix<f64>> = Vec::with_capacity(block + 1);
            for &(i, j) in &self.pairs {
                let mut basis = DMatrix::<f64>::zeros(n, n);
                basis[(i, j)] = 1.0;
                basis[(j, i)] = 1.0;
                products.push(&w_inv * basis);
            }
            products.push(-&w_inv);
            let index = |k: usize| if k < block { base + k } else { mv };
            for (k, mk) in products.iter().enumerate() {
                grad[index(k)] -= mk.trace();
                for (l, ml) in products.iter().enumerate() {
                    hess[(index(k), index(l))] += (mk * ml).trace();
                }
            }
        }
        Some((grad, hess))
    }

    fn matrices(&self, z: &[f64]) -> Vec<SymMatrix> {
        let mu = z[self.mu_index()];
        (0..self.program.node_count)
            .map(|u| SymMatrix::symmetrized(self.matrix(z, u) / mu))
            .collect()
    }

    fn feasible(&self, z: &[f64], iterations: usize, factor: f64) -> Feasibility {
        let matrices = self.matrices(z);
        let residual = self
            .program
            .rows
            .iter()
            .map(|r| r.relative_violation(&matrices, factor))
            .fold(0.0, f64::max);
        Feasibility::Feasible { matrices, iterations, residual }
    }

    /// Newton direction for the barrier restricted to `Σ tr Q_u` fixed.
    fn newton_step(&self, grad: &Vector, hess: DMatrix<f64>) -> Option<Vector> {
        let chol = match hess.clone().cholesky() {
            Some(ch) => ch,
            None => {
                let ridge = 1e-12 * hess.diagonal().amax().max(1.0);
                (hess + DMatrix::identity(self.vars, self.vars) * ridge).cholesky()?
            }
        };
        let hg = chol.solve(grad);
        let ha = chol.solve(&self.trace);
        let nu = -self.trace.dot(&hg) / self.trace.dot(&ha);
        Some(-(hg + ha * nu))
    }

    fn run(&self, factor: f64, deep: bool, tol: &Tolerances) -> Feasibility {
        let degree = (self.rows.len() + self.program.node_count * (self.program.dim + 2)) as f64;
        let unit = self.unit();
        let margin_tol = tol.margin_tol * unit;
        let mut z = self.start();
        let mut t = degree / unit;
        let mut iterations = 0;
        let finish = |z: &[f64], iterations: usize| {
            if self.margin(z) >= 0.0 {
                self.feasible(z, iterations, factor)
            } else {
                Feasibility::Infeasible { iterations, residual: -self.margin(z) / unit }
            }
        };
        loop {
            loop {
                if iterations >= tol.max_newton_steps {
                    return finish(&z, iterations);
                }
                let Some((grad, hess)) = self.derivatives(&z, t) else {
                    return finish(&z, iterations);
                };
                let g = Vector::from_vec(grad);
                let Some(step) = self.newton_step(&g, hess) else { break };
                let decrement = -g.dot(&step);
                if !(decrement > 1e-9) {
                    break;
                }
                let Some(current) = self.value(&z, t) else { break };
                let mut alpha = 1.0;
                let mut accepted = None;
                for _ in 0..60 {
                    let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
                    if let Some(v) = self.value(&cand, t) {
                        if v <= current - 0.25 * alpha * decrement {
                            accepted = Some(cand);
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                iterations += 1;
                let Some(next) = accepted else { break };
                z = next;
                if !deep && self.margin(&z) >= 0.0 {
                    return self.feasible(&z, iterations, factor);
                }
            }
            let s = self.margin(&z);
            let gap = degree / t;
            if deep && s >= 0.0 && gap <= 1e-3 * (unit + s) {
                return self.feasible(&z, iterations, factor);
            }
            if s + gap < -margin_tol {
                return Feasibility::Infeasible { iterations, residual: -s / unit };
            }
            if gap <= 0.1 * margin_tol {
                return if s >= -margin_tol {
                    self.feasible(&z, iterations, factor)
                } else {
                    Feasibility::Infeasible { iterations, residual: -s / unit }
                };
            }
            t *= 20.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{flower, LabeledGraph};
    use crate::sampling::{sample_continuous, sample_hybrid, SamplingConfig};
    use crate::system::SwitchedSystem;
    use proptest::prelude::*;

    fn v(data: &[f64]) -> Vector {
        Vector::from_row_slice(data)
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn scalar_flower(c: f64) -> SwitchedSystem {
        SwitchedSystem::new(flower(1), vec![DMatrix::identity(2, 2) * c]).unwrap()
    }

    fn ncs() -> SwitchedSystem {
        let g = LabeledGraph::new(3, [(0, 0, 1), (0, 1, 2), (1, 0, 1), (1, 2, 2), (2, 0, 1)]).unwrap();
        let a1 = DMatrix::from_row_slice(2, 2, &[0.45, 1.08, -0.06, -0.27]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.45, 1.08, 0.36, 0.09]);
        SwitchedSystem::new(g, vec![a1, a2]).unwrap()
    }

    #[test]
    fn single_scalar_sample() {
        let row = ConstraintRow::new(v(&[1.0, 0.0]), v(&[0.5, 0.0]), 0, 0);
        let program = Program::new(vec![row], 1, 2, 1).unwrap();
        let sol = program.solve(&tol()).unwrap();
        assert!((sol.lambda_star - 0.5).abs() <= tol().lambda_tol);
        assert!(sol.lambda_star >= 0.5 - 1e-9);
        assert!((sol.c_star - 2f64.sqrt()).abs() <= tol().c_tol(2));
    }

    #[test]
    fn identity_matrices_give_unit_rate() {
        let sys = SwitchedSystem::new(flower(2), vec![DMatrix::identity(2, 2); 2]).unwrap();
        let set = sample_hybrid(&sys, &SamplingConfig::new(1, 50, 0.0, 3).unwrap()).unwrap();
        let sol = solve_hybrid(&set, &tol()).unwrap();
        assert!((sol.lambda_star - 1.0).abs() <= tol().lambda_tol);
    }

    #[test]
    fn empty_rows_are_feasible_at_identity() {
        let out = feasibility(&[], 0.3, 1, 2, 2, 1e6, &tol()).unwrap();
        match out {
            Feasibility::Feasible { matrices, .. } => {
                assert_eq!(matrices, vec![SymMatrix::identity(2); 2]);
            }
            _ => panic!("expected feasible"),
        }
    }

    #[test]
    fn zero_dynamics_feasible_at_identity() {
        let rows = vec![
            ConstraintRow::new(v(&[1.0, 0.0]), v(&[0.0, 0.0]), 0, 0),
            ConstraintRow::new(v(&[0.6, 0.8]), v(&[0.0, 0.0]), 0, 0),
        ];
        let out = feasibility(&rows, 0.1, 1, 1, 2, 1e6, &tol()).unwrap();
        assert!(out.is_feasible());
        let program = Program::new(rows, 1, 2, 1).unwrap();
        assert_eq!(program.solve(&tol()).unwrap().lambda_star, 0.0);
    }

    #[test]
    fn contradictory_row_is_infeasible() {
        let rows = vec![ConstraintRow::new(v(&[1.0, 0.0]), v(&[1.0, 0.0]), 0, 0)];
        assert!(!feasibility(&rows, 0.5, 1, 1, 2, 1e6, &tol()).unwrap().is_feasible());
    }

    #[test]
    fn continuous_scalar_flower() {
        let sys = scalar_flower(0.5);
        let set = sample_continuous(&sys, &SamplingConfig::new(1, 30, 0.0, 1).unwrap()).unwrap();
        let sol = solve_continuous(&set, &tol()).unwrap();
        assert!((sol.lambda_star - 0.5).abs() <= tol().lambda_tol);
        assert_eq!(sol.p_star.len(), 1);
        let diff = SymMatrix::symmetrized(sol.p_star[0].as_matrix() - DMatrix::identity(2, 2));
        assert!(diff.frobenius_norm() <= tol().c_tol(2) * 2.0);
    }

    #[test]
    fn single_node_hybrid_matches_continuous() {
        let sys = SwitchedSystem::new(
            flower(2),
            vec![
                DMatrix::from_row_slice(2, 2, &[0.4, 0.3, -0.2, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.1, -0.6, 0.3, 0.2]),
            ],
        )
        .unwrap();
        let cfg = SamplingConfig::new(1, 200, 0.0, 8).unwrap();
        let hybrid = solve_hybrid(&sample_hybrid(&sys, &cfg).unwrap(), &tol()).unwrap();
        let set = sample_hybrid(&sys, &cfg).unwrap();
        let cont_rows: Vec<ConstraintRow> = set
            .samples
            .iter()
            .map(|s| ConstraintRow::from_continuous(&ContinuousObservation { x: s.x.clone(), y: s.y.clone() }))
            .collect();
        let cont = Program::new(cont_rows, 1, 2, 1).unwrap().solve(&tol()).unwrap();
        assert_eq!(hybrid.lambda_star, cont.lambda_star);
        assert_eq!(hybrid.p_star, cont.p_star);
    }

    #[test]
    fn ncs_rate_respects_cycle_value() {
        let sys = ncs();
        let set = sample_hybrid(&sys, &SamplingConfig::new(1, 1000, 0.0, 11).unwrap()).unwrap();
        let program = Program::hybrid(&set).unwrap();
        let sol = program.solve(&tol()).unwrap();
        assert!(sol.lambda_star < 1.0);
        assert!(sol.lambda_star >= 0.70697 - 0.02, "{}", sol.lambda_star);
        assert!(sol.max_violation(program.rows()) <= 10.0 * tol().feas_tol);
        for p in &sol.p_star {
            assert!(p.eigen().unwrap().min() >= 1.0 - 1e-9);
            assert!(p.frobenius_norm() <= tol().frobenius_cap + 1e-9);
        }
        let below = program.feasibility(sol.lambda_star - tol().lambda_tol, 1e6, &tol()).unwrap();
        assert!(!below.is_feasible());
        for entry in sol.diagnostics.trace.iter().filter(|t| t.phase == Phase::Rate && t.feasible) {
            assert!(entry.value >= sol.lambda_star - 1e-12);
        }
    }

    #[test]
    fn rate_bounded_by_sampled_operator_norms() {
        let sys = ncs();
        let set = sample_hybrid(&sys, &SamplingConfig::new(1, 300, 0.0, 4).unwrap()).unwrap();
        let sol = solve_hybrid(&set, &tol()).unwrap();
        let lift = sys.build_lift(1).unwrap();
        let max_norm = set
            .samples
            .iter()
            .map(|s| lift.edge_matrix(s.edge).singular_values().max())
            .fold(0.0, f64::max);
        assert!(sol.lambda_star <= max_norm + tol().lambda_tol);
    }

    #[test]
    fn unbounded_growth_reported() {
        let rows = vec![ConstraintRow::new(v(&[1.0, 0.0]), v(&[1.0, 0.0]), 0, 0)];
        let mut t = tol();
        t.lambda_cap = 1.5;
        let program = Program::new(rows, 1, 2, 1).unwrap();
        // rate 1 is feasible, so a small cap still succeeds
        assert!(program.solve(&t).is_ok());
        let rows = vec![ConstraintRow::new(v(&[1.0, 0.0]), v(&[10.0, 0.0]), 0, 0)];
        let program = Program::new(rows, 1, 2, 1).unwrap();
        t.lambda_cap = 5.0;
        assert!(matches!(program.solve(&t), Err(SolverError::UnboundedGrowth { .. })));
    }

    #[test]
    fn rejects_malformed_rows() {
        let bad_dim = ConstraintRow::new(v(&[1.0]), v(&[1.0, 0.0]), 0, 0);
        assert!(matches!(
            Program::new(vec![bad_dim], 1, 2, 1),
            Err(SolverError::DimensionMismatch { .. })
        ));
        let bad_node = ConstraintRow::new(v(&[1.0, 0.0]), v(&[1.0, 0.0]), 0, 3);
        assert!(matches!(
            Program::new(vec![bad_node], 2, 2, 1),
            Err(SolverError::NodeOutOfRange { .. })
        ));
        let zero = ConstraintRow::new(v(&[0.0, 0.0]), v(&[1.0, 0.0]), 0, 0);
        assert!(matches!(Program::new(vec![zero], 1, 2, 1), Err(SolverError::DegenerateRow { .. })));
        assert!(matches!(Program::new(vec![], 1, 2, 1).unwrap().solve(&tol()), Err(SolverError::NoSamples)));
    }

    #[test]
    fn trace_csv_has_header() {
        let row = ConstraintRow::new(v(&[1.0, 0.0]), v(&[0.5, 0.0]), 0, 0);
        let sol = Program::new(vec![row], 1, 2, 1).unwrap().solve(&tol()).unwrap();
        let mut buf = Vec::new();
        sol.diagnostics.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,phase,value,feasible,iterations,residual\n"));
        assert_eq!(text.lines().count(), sol.diagnostics.trace.len() + 1);
    }

    fn random_rows(seed: u64, count: usize, nodes: usize) -> Vec<ConstraintRow> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mats: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.8..0.8)))
            .collect();
        (0..count)
            .map(|_| {
                let x = crate::sampling::unit_sphere(&mut rng, 2);
                let k = rng.random_range(0..mats.len());
                let y = &mats[k] * &x;
                ConstraintRow::new(x, y, rng.random_range(0..nodes), rng.random_range(0..nodes))
            })
            .collect()
    }

    #[test]
    fn barrier_derivatives_match_finite_differences() {
        let program = Program::new(random_rows(5, 12, 2), 2, 2, 1).unwrap();
        let all: Vec<usize> = (0..program.rows().len()).collect();
        let barrier = Barrier::new(&program, &all, 0.8, 50.0);
        let mut z = barrier.start();
        z[0] += 0.03;
        z[1] -= 0.02;
        z[4] += 0.05;
        let t = 3.0;
        let (grad, hess) = barrier.derivatives(&z, t).unwrap();
        let h = 1e-6;
        for k in 0..z.len() {
            let mut plus = z.clone();
            plus[k] += h;
            let mut minus = z.clone();
            minus[k] -= h;
            let fd = (barrier.value(&plus, t).unwrap() - barrier.value(&minus, t).unwrap()) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + grad[k].abs()), "grad {k}: {fd} vs {}", grad[k]);
            let gp = barrier.derivatives(&plus, t).unwrap().0;
            let gm = barrier.derivatives(&minus, t).unwrap().0;
            for j in 0..z.len() {
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                assert!((fd - hess[(j, k)]).abs() < 1e-4 * (1.0 + fd.abs()), "hess {j},{k}: {fd} vs {}", hess[(j, k)]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn feasibility_monotone_along_trace(seed in 0u64..1000) {
            let program = Program::new(random_rows(seed, 40, 2), 2, 2, 1).unwrap();
            let sol = program.solve(&tol()).unwrap();
            for bump in [0.01, 0.05, 0.2] {
                prop_assert!(program.feasibility(sol.lambda_star + bump, 1e6, &tol()).unwrap().is_feasible());
            }
        }

        #[test]
        fn adding_rows_never_lowers_rate(seed in 0u64..1000) {
            let rows = random_rows(seed, 60, 2);
            let small = Program::new(rows[..30].to_vec(), 2, 2, 1).unwrap().solve(&tol()).unwrap();
            let large = Program::new(rows, 2, 2, 1).unwrap().solve(&tol()).unwrap();
            prop_assert!(large.lambda_star >= small.lambda_star - tol().lambda_tol);
        }

        #[test]
        fn rate_is_scale_invariant(seed in 0u64..1000, mu in 0.2f64..5.0) {
            let rows = random_rows(seed, 30, 1);
            let scaled: Vec<ConstraintRow> = rows
                .iter()
                .map(|r| ConstraintRow::new(r.x() * mu, r.y() * mu, r.source(), r.target()))
                .collect();
            let a = Program::new(rows, 1, 2, 1).unwrap().solve(&tol()).unwrap();
            let b = Program::new(scaled, 1, 2, 1).unwrap().solve(&tol()).unwrap();
            prop_assert!((a.lambda_star - b.lambda_star).abs() <= tol().lambda_tol + 1e-9);
        }

        #[test]
        fn solutions_certify_their_rows(seed in 0u64..1000) {
            let program = Program::new(random_rows(seed, 50, 3), 3, 2, 1).unwrap();
            let sol = program.solve(&tol()).unwrap();
            prop_assert!(sol.max_violation(program.rows()) <= 10.0 * tol().feas_tol);
            for p in &sol.p_star {
                prop_assert!(p.eigen().unwrap().min() >= 1.0 - 1e-9);
            }
        }
    }
}
