//! Small dense optimizers used by the fits: a Nelder-Mead simplex for the
//! coarse search and Levenberg-Marquardt on residual vectors for refinement.
//! Jacobians are central differences; parameters should be scaled to O(1).

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt, TerminationReason};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u64,
}

struct Cost<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Cost<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let v = (self.0)(p);
        Ok(if v.is_finite() { v } else { f64::MAX })
    }
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of size `step`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: &[f64], max_iters: u64) -> Result<SimplexResult> {
    if x0.len() != step.len() || x0.is_empty() {
        return Err(Error::argument("simplex start and step lengths differ"));
    }
    let mut simplex = vec![x0.to_vec()];
    for (j, s) in step.iter().enumerate() {
        let mut v = x0.to_vec();
        v[j] += s;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .map_err(|e| Error::argument(e.to_string()))?;
    let res = Executor::new(Cost(f), solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|e| Error::NumericalOverflow(format!("simplex: {e}")))?;
    let state = res.state();
    let x = state.get_best_param().cloned().unwrap_or_else(|| x0.to_vec());
    Ok(SimplexResult { x, value: state.get_best_cost(), iterations: state.get_iter() })
}

/// Central-difference Jacobian of `f` at `x`, one row per residual.
pub fn numeric_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64]) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut p = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-6 * (1.0 + x[j].abs());
        p[j] = x[j] + h;
        let up = f(&p);
        p[j] = x[j] - h;
        let dn = f(&p);
        p[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (up[i] - dn[i]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Debug, Clone)]
pub struct LeastSquaresResult {
    pub x: Vec<f64>,
    /// `Σ r²` at `x`.
    pub cost: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: String,
}

struct Problem<F> {
    f: F,
    x: DVector<f64>,
}

impl<F: Fn(&[f64]) -> Vec<f64>> LeastSquaresProblem<f64, Dyn, Dyn> for Problem<F> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = (self.f)(self.x.as_slice());
        r.iter().all(|v| v.is_finite()).then(|| DVector::from_vec(r))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let j = numeric_jacobian(&self.f, self.x.as_slice());
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

/// Levenberg-Marquardt on the residual function `f`. `max_iters` bounds the
/// number of Jacobian evaluations.
pub fn least_squares<F: Fn(&[f64]) -> Vec<f64>>(f: F, x0: &[f64], max_iters: usize) -> LeastSquaresResult {
    let problem = Problem { f, x: DVector::from_column_slice(x0) };
    let (problem, report) = LevenbergMarquardt::new()
        .with_ftol(1e-10)
        .with_xtol(1e-8)
        .with_patience(max_iters)
        .minimize(problem);
    let x = problem.x.as_slice().to_vec();
    let cost = (problem.f)(&x).iter().map(|r| r * r).sum();
    LeastSquaresResult {
        x,
        cost,
        evaluations: report.number_of_evaluations,
        // precision-limited stops are treated as converged
        converged: report.termination.was_successful()
            || matches!(report.termination, TerminationReason::NoImprovementPossible(_)),
        termination: format!("{:?}", report.termination),
    }
}

/// `(JᵀJ)⁻¹`, or `None` when singular.
pub fn covariance(jac: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    (jac.transpose() * jac).try_inverse()
}
