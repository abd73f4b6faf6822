//! Numeric tolerances shared by every solver path.

use serde::{Deserialize, Serialize};

/// Every tolerance and iteration cap in one place, so tests can tighten
/// or loosen them consistently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Largest `|M_ij - M_ji|` accepted when building a symmetric matrix.
    pub symmetry: f64,
    /// Jacobi stops once the off-diagonal Frobenius norm drops below
    /// `jacobi_threshold * ||M||_F`.
    pub jacobi_threshold: f64,
    pub jacobi_max_sweeps: usize,
    /// Width of the final bracket when bisecting on the rate.
    pub lambda_tol: f64,
    /// Scaled by `sqrt(n)` to give the Frobenius tie-break tolerance.
    pub c_tol_factor: f64,
    /// Relative residual accepted on a sampled constraint row.
    pub feas_tol: f64,
    /// Frobenius radius `C` bounding every Lyapunov matrix.
    pub frobenius_cap: f64,
    /// Newton steps allowed per feasibility query; running out is reported
    /// as infeasible.
    pub max_newton_steps: usize,
    /// Phase-I margin accepted as feasible once the barrier gap closes.
    pub margin_tol: f64,
    /// Largest rate tried before declaring the data unbounded.
    pub lambda_cap: f64,
    /// Bisection tolerance on the model-based quadratic bound.
    pub gamma_tol: f64,
    /// Matrix inequality violation tolerated by the cutting-plane loop.
    pub cut_tol: f64,
    /// Cuts added per lifted edge before a rate is declared infeasible.
    pub cut_cap: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            symmetry: 1e-12,
            jacobi_threshold: 1e-12,
            jacobi_max_sweeps: 100,
            lambda_tol: 1e-3,
            c_tol_factor: 1e-2,
            feas_tol: 1e-6,
            frobenius_cap: 1e6,
            max_newton_steps: 400,
            margin_tol: 1e-10,
            lambda_cap: 1e6,
            gamma_tol: 1e-4,
            cut_tol: 1e-7,
            cut_cap: 500,
        }
    }
}

impl Tolerances {
    pub fn c_tol(&self, n: usize) -> f64 {
        self.c_tol_factor * (n as f64).sqrt()
    }
}
