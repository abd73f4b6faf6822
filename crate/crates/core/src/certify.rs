//! Probabilistic CJSR bounds from scenario solutions, and model-based
//! baselines that bracket the true value.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::graph::Word;
use crate::linalg::{LinalgError, SymMatrix};
use crate::policy::Tolerances;
use crate::solver::{ConstraintRow, Feasibility, Program, ScenarioSolution, SolverError};
use crate::specfun::{delta, epsilon, kappa, kappa_alt, SpecfunError};
use crate::system::{SwitchedSystem, SystemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("insufficient samples for certification: N = {samples} < d = {dimension}")]
    InsufficientSamples { samples: usize, dimension: usize },
    #[error("noise radius must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("node {node} has no Lyapunov matrix (solution has {available})")]
    UnknownNode { node: usize, available: usize },
    #[error("no observed transitions to bound")]
    NoObservations,
    #[error(transparent)]
    Specfun(SpecfunError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    System(#[from] SystemError),
}

impl From<SpecfunError> for CertifyError {
    fn from(e: SpecfunError) -> Self {
        match e {
            SpecfunError::InsufficientSamples { samples, dimension } => {
                CertifyError::InsufficientSamples { samples, dimension }
            }
            other => CertifyError::Specfun(other),
        }
    }
}

/// `λ̄ = λ*^l + sqrt(λ_max(P_t) / λ_min(P_s)) · W`.
pub fn lambda_bar(
    solution: &ScenarioSolution,
    source: usize,
    target: usize,
    noise_radius: f64,
) -> Result<f64, CertifyError> {
    if !(noise_radius >= 0.0 && noise_radius.is_finite()) {
        return Err(CertifyError::InvalidNoise(noise_radius));
    }
    let available = solution.p_star.len();
    for node in [source, target] {
        if node >= available {
            return Err(CertifyError::UnknownNode { node, available });
        }
    }
    let base = solution.lambda_star.powi(solution.horizon as i32);
    if noise_radius == 0.0 {
        return Ok(base);
    }
    let max_t = solution.p_star[target].eigen()?.max();
    let min_s = solution.p_star[source].eigen()?.min();
    Ok(base + (max_t / min_s).sqrt() * noise_radius)
}

/// One `(source, target)` contribution to a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundTerm {
    pub source: usize,
    pub target: usize,
    pub lambda_bar: f64,
    pub kappa: f64,
    pub kappa_alt: f64,
    pub delta_arg: f64,
    pub delta_value: Option<f64>,
    /// `+inf` when the δ argument leaves `(−∞, 1/2)`.
    pub bound: f64,
    pub delta_arg_alt: f64,
    pub delta_value_alt: Option<f64>,
    pub bound_alt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub lambda_star: f64,
    pub horizon: usize,
    pub samples: usize,
    pub beta: f64,
    pub dimension: usize,
    /// `|E(G^(l))|` in hybrid mode, `|L_{G,l}|` in continuous mode.
    pub multiplicity: usize,
    pub epsilon: f64,
    pub terms: Vec<BoundTerm>,
    pub rho_primary: f64,
    pub rho_alternative: f64,
    pub rho_final: f64,
    pub vacuous: bool,
    pub certifies_stability: bool,
}

fn root(value: f64, horizon: usize) -> f64 {
    if value.is_infinite() {
        f64::INFINITY
    } else {
        value.powf(1.0 / horizon as f64)
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    solution: &ScenarioSolution,
    pairs: &[(usize, usize)],
    multiplicity: usize,
    dimension: usize,
    beta: f64,
    samples: usize,
    noise_radius: f64,
) -> Result<BoundReport, CertifyError> {
    if pairs.is_empty() {
        return Err(CertifyError::NoObservations);
    }
    let eps = epsilon(beta, samples, dimension)?;
    let l = solution.horizon;
    let n = solution.p_star.first().map_or(1, SymMatrix::order);
    let scaled = eps * multiplicity as f64;
    let mut terms = Vec::with_capacity(pairs.len());
    for &(source, target) in pairs {
        let lb = lambda_bar(solution, source, target, noise_radius)?;
        let p_s = &solution.p_star[source];
        let k = kappa(p_s)?;
        let k_alt = kappa_alt(p_s)?;

        let arg = scaled * k / 2.0;
        let d = delta(arg, n);
        let bound = d.map_or(f64::INFINITY, |d| root(lb / d, l));

        let arg_alt = (1.0 - (1.0 - scaled) * k_alt) / 2.0;
        let d_alt = if scaled < 1.0 { delta(arg_alt, n) } else { None };
        let bound_alt = d_alt.map_or(f64::INFINITY, |d| root(lb / d, l));

        terms.push(BoundTerm {
            source,
            target,
            lambda_bar: lb,
            kappa: k,
            kappa_alt: k_alt,
            delta_arg: arg,
            delta_value: d,
            bound,
            delta_arg_alt: arg_alt,
            delta_value_alt: d_alt,
            bound_alt,
        });
    }
    let rho_primary = terms.iter().map(|t| t.bound).fold(0.0, f64::max);
    let rho_alternative = terms.iter().map(|t| t.bound_alt).fold(0.0, f64::max);
    let rho_final = rho_primary.min(rho_alternative);
    let vacuous = rho_final.is_infinite();
    Ok(BoundReport {
        lambda_star: solution.lambda_star,
        horizon: l,
        samples,
        beta,
        dimension,
        multiplicity,
        epsilon: eps,
        terms,
        rho_primary,
        rho_alternative,
        rho_final,
        vacuous,
        certifies_stability: rho_final < 1.0,
    })
}

/// Bound from a hybrid-mode solution. `observed` lists the
/// `(source, target)` node pairs of the sampled lifted edges.
pub fn hybrid_bound(
    solution: &ScenarioSolution,
    lifted_edge_count: usize,
    observed: &[(usize, usize)],
    beta: f64,
    samples: usize,
    noise_radius: f64,
) -> Result<BoundReport, CertifyError> {
    let n = solution.p_star.first().map_or(1, SymMatrix::order);
    let d = solution.p_star.len() * n * (n + 1) / 2;
    let pairs: Vec<(usize, usize)> = observed.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    assemble(solution, &pairs, lifted_edge_count, d, beta, samples, noise_radius)
}

/// Bound from a continuous-mode (single matrix) solution.
pub fn continuous_bound(
    solution: &ScenarioSolution,
    word_count: usize,
    beta: f64,
    samples: usize,
    noise_radius: f64,
) -> Result<BoundReport, CertifyError> {
    let n = solution.p_star.first().map_or(1, SymMatrix::order);
    assemble(solution, &[(0, 0)], word_count, n * (n + 1) / 2, beta, samples, noise_radius)
}

/// Result of the model-based quadratic bound on a lift.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteboxBound {
    /// Per-step rate `γ̂`, i.e. the lifted rate raised to `1/l`.
    pub gamma: f64,
    /// Matrices certifying `gamma`.
    pub certificate: Vec<SymMatrix>,
    pub cuts: usize,
    pub bisection_steps: usize,
}

/// Smallest per-step rate certified by `p` on every lifted edge:
/// `max_e λ_max(L_s^{-T} A_eᵀ P_t A_e L_s^{-1})^{1/(2l)}` with `P_s = L_sᵀ L_s`.
pub fn certified_rate(
    edges: &[(usize, usize, &DMatrix<f64>)],
    p: &[SymMatrix],
    horizon: usize,
) -> Result<f64, CertifyError> {
    let mut worst = 0.0f64;
    for &(s, t, a) in edges {
        let l = p[s].cholesky()?;
        let l_inv = l.clone().try_inverse().ok_or(LinalgError::NotPositiveDefinite(0.0))?;
        let k = a * &l_inv;
        let m = SymMatrix::symmetrized(k.transpose() * p[t].as_matrix() * &k);
        worst = worst.max(m.eigen()?.max().max(0.0));
    }
    Ok(worst.powf(1.0 / (2.0 * horizon as f64)))
}

/// Upper bound `γ̂ >= γ*(G^(l), A^(l))^{1/l}` by bisection on the rate with
/// an eigen-direction cutting-plane feasibility test at each step.
pub fn whitebox_upper(
    sys: &SwitchedSystem,
    horizon: usize,
    tol: &Tolerances,
) -> Result<WhiteboxBound, CertifyError> {
    let lift = sys.build_lift(horizon)?;
    let node_count = sys.graph().node_count();
    let n = sys.dim();
    let edges: Vec<(usize, usize, &DMatrix<f64>)> = lift
        .lifted_graph()
        .edges()
        .iter()
        .enumerate()
        .map(|(id, e)| (e.source, e.target, lift.edge_matrix(id)))
        .collect();

    let identity = vec![SymMatrix::identity(n); node_count];
    let mut best_gamma = certified_rate(&edges, &identity, horizon)?;
    let mut best_p = identity;

    let mut program = Program::new(Vec::new(), node_count, n, horizon)?;
    for &(s, t, a) in &edges {
        for i in 0..n {
            let x = crate::linalg::Vector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
            program.push(ConstraintRow::new(x.clone(), a * &x, s, t))?;
        }
    }

    let mut lo = 0.0f64;
    let mut hi = best_gamma;
    let mut steps = 0;
    let cap = edges.len() * tol.cut_cap;
    let mut cuts = 0usize;
    while hi - lo > tol.gamma_tol {
        steps += 1;
        let gamma = 0.5 * (lo + hi);
        let factor = gamma.powi(2 * horizon as i32);
        let mut round_cuts = 0usize;
        let verdict = loop {
            let outcome = program.deep_feasibility(gamma, tol.frobenius_cap, tol)?;
            let Feasibility::Feasible { matrices, .. } = outcome else {
                break None;
            };
            let mut violated = Vec::new();
            for &(s, t, a) in &edges {
                let lhs = SymMatrix::symmetrized(a.transpose() * matrices[t].as_matrix() * a);
                let gap = SymMatrix::symmetrized(matrices[s].as_matrix() * factor - lhs.as_matrix());
                let eig = gap.eigen()?;
                let scale = 1.0 + factor * matrices[s].eigen()?.max();
                if eig.min() < -tol.cut_tol * scale {
                    let x = eig.vectors.column(0).into_owned();
                    violated.push(ConstraintRow::new(x.clone(), a * &x, s, t));
                }
            }
            if violated.is_empty() {
                break Some(matrices);
            }
            if round_cuts + violated.len() > cap {
                break None;
            }
            round_cuts += violated.len();
            cuts += violated.len();
            for row in violated {
                program.push(row)?;
            }
        };
        match verdict {
            Some(p) => {
                let certified = certified_rate(&edges, &p, horizon)?;
                if certified < best_gamma {
                    best_gamma = certified;
                    best_p = p;
                }
                hi = gamma.min(best_gamma);
            }
            None => lo = gamma,
        }
    }
    Ok(WhiteboxBound {
        gamma: best_gamma,
        certificate: best_p,
        cuts,
        bisection_steps: steps,
    })
}

/// Spectral radius of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Lower bound `max_c ρ(A_c)^{1/|c|}` over closed-walk words of length at
/// most `max_len`, with the maximizing word.
pub fn cycle_lower_with_word(sys: &SwitchedSystem, max_len: usize) -> Result<(f64, Word), CertifyError> {
    let cycles = sys.graph().cycles_up_to(max_len).map_err(SystemError::from)?;
    let words: BTreeSet<Word> = cycles.into_iter().map(|(w, _)| w).collect();
    let mut best = (f64::NEG_INFINITY, None);
    for word in words {
        let value = spectral_radius(&sys.word_matrix(&word)).powf(1.0 / word.len() as f64);
        if value > best.0 {
            best = (value, Some(word));
        }
    }
    match best {
        (v, Some(w)) => Ok((v, w)),
        _ => Err(CertifyError::System(SystemError::Graph(crate::graph::GraphError::ZeroLength))),
    }
}

pub fn cycle_lower(sys: &SwitchedSystem, max_len: usize) -> Result<f64, CertifyError> {
    Ok(cycle_lower_with_word(sys, max_len)?.0)
}

/// Whitebox bound on the arbitrary-switching system built from the
/// distinct length-`l` word products, rescaled to a per-step rate.
pub fn arbitrary_reduction_upper(
    sys: &SwitchedSystem,
    horizon: usize,
    tol: &Tolerances,
) -> Result<f64, CertifyError> {
    let flower = sys.word_flower(horizon)?;
    let mut scaled = *tol;
    scaled.gamma_tol = tol.gamma_tol.powf(1.0 / horizon as f64).min(tol.gamma_tol * horizon as f64);
    let bound = whitebox_upper(&flower, 1, &scaled)?;
    Ok(bound.gamma.powf(1.0 / horizon as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRow {
    pub horizon: usize,
    pub upper: f64,
    pub arbitrary_upper: f64,
    pub lower: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub cycle_length: usize,
    pub lower: f64,
    pub rows: Vec<BaselineRow>,
}

/// Upper bounds for `l = 1..=l_max` against the cycle lower bound.
pub fn baseline(
    sys: &SwitchedSystem,
    l_max: usize,
    cycle_max: usize,
    tol: &Tolerances,
) -> Result<BaselineReport, CertifyError> {
    let lower = cycle_lower(sys, cycle_max)?;
    let rows = (1..=l_max)
        .map(|l| {
            let upper = whitebox_upper(sys, l, tol)?.gamma;
            let arbitrary_upper = arbitrary_reduction_upper(sys, l, tol)?;
            Ok(BaselineRow {
                horizon: l,
                upper,
                arbitrary_upper,
                lower,
                width: upper - lower,
            })
        })
        .collect::<Result<Vec<_>, CertifyError>>()?;
    Ok(BaselineReport {
        cycle_length: cycle_max,
        lower,
        rows,
    })
}
