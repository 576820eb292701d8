//! Trained output layer.
//!
//! Training folds each sequence's harvested states into two accumulators,
//! `A = Σ Ŷᵢ Xᵢᵀ` and `B = Σ Xᵢ Xᵢᵀ`, and solves once at the end. The fold
//! is associative, so sequences can be accumulated in batches and merged.

use std::fmt;

use rayon::prelude::*;

use crate::dataset::SequenceDataset;
use crate::error::{Error, Result};
use crate::numerics::{add_cross, add_gram, matmul, solve_spd, Matrix};
use crate::reservoir::{Reservoir, StateTrajectory, LANES};

pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const DEFAULT_LASSO_MAX_ITER: usize = 10_000;
pub const DEFAULT_LASSO_TOL: f64 = 1e-8;

/// Sequences folded into one partial accumulator by [`fit`].
pub const DEFAULT_BATCH: usize = LANES;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressionMethod {
    Ridge { lambda: f64 },
    Linear,
    Lasso { lambda: f64, max_iter: usize, tol: f64 },
}

impl Default for RegressionMethod {
    fn default() -> Self {
        RegressionMethod::Ridge { lambda: DEFAULT_LAMBDA }
    }
}

impl RegressionMethod {
    pub fn lasso(lambda: f64) -> Self {
        RegressionMethod::Lasso {
            lambda,
            max_iter: DEFAULT_LASSO_MAX_ITER,
            tol: DEFAULT_LASSO_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RegressionMethod::Ridge { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => Err(Error::invalid(
                format!("ridge lambda must be finite and >= 0, got {lambda}"),
            )),
            RegressionMethod::Lasso { lambda, max_iter, tol } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    Err(Error::invalid(format!(
                        "lasso lambda must be finite and > 0, got {lambda}"
                    )))
                } else if max_iter == 0 {
                    Err(Error::invalid("lasso max_iter must be >= 1"))
                } else if !(tol > 0.0 && tol.is_finite()) {
                    Err(Error::invalid(format!("lasso tolerance must be positive, got {tol}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegressionMethod::Ridge { .. } => "ridge",
            RegressionMethod::Linear => "linear",
            RegressionMethod::Lasso { .. } => "lasso",
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            RegressionMethod::Ridge { lambda } | RegressionMethod::Lasso { lambda, .. } => lambda,
            RegressionMethod::Linear => 0.0,
        }
    }
}

impl fmt::Display for RegressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressionMethod::Linear => f.write_str("linear"),
            m => write!(f, "{}({:e})", m.name(), m.lambda()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accumulators {
    a: Matrix,
    b: Matrix,
    samples_seen: u64,
}

impl Accumulators {
    pub fn new(reservoir_size: usize, output_dim: usize) -> Self {
        Accumulators {
            a: Matrix::zeros(output_dim, reservoir_size),
            b: Matrix::zeros(reservoir_size, reservoir_size),
            samples_seen: 0,
        }
    }

    pub fn from_parts(a: Matrix, b: Matrix, samples_seen: u64) -> Result<Self> {
        if !b.is_square() || a.cols() != b.rows() {
            return Err(Error::shape("Accumulators::from_parts", a.shape_str(), b.shape_str()));
        }
        Ok(Accumulators { a, b, samples_seen })
    }

    /// `A` (L × N).
    pub fn a(&self) -> &Matrix {
        &self.a
    }

    /// `B` (N × N).
    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn reservoir_size(&self) -> usize {
        self.b.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.a.rows()
    }

    /// Folds one trajectory and its aligned targets (L × T_effective).
    pub fn accumulate(&mut self, states: &StateTrajectory, targets: &Matrix) -> Result<()> {
        let x = states.states();
        if x.rows() != self.reservoir_size() || targets.rows() != self.output_dim() || targets.cols() != x.cols() {
            return Err(Error::shape(
                "accumulate",
                format!("states {} targets {}", x.shape_str(), targets.shape_str()),
                format!("states {}xT targets {}xT", self.reservoir_size(), self.output_dim()),
            ));
        }
        add_cross(&mut self.a, targets, x);
        add_gram(&mut self.b, x);
        self.samples_seen += x.cols() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulators) -> Result<()> {
        if self.a.shape() != other.a.shape() {
            return Err(Error::shape(
                "Accumulators::merge",
                self.a.shape_str(),
                other.a.shape_str(),
            ));
        }
        for (d, s) in self.a.as_mut_slice().iter_mut().zip(other.a.as_slice()) {
            *d += s;
        }
        for (d, s) in self.b.as_mut_slice().iter_mut().zip(other.b.as_slice()) {
            *d += s;
        }
        self.samples_seen += other.samples_seen;
        Ok(())
    }

    /// `alpha · source + (1 - alpha) · target`, entry by entry.
    pub fn blend(source: &Accumulators, target: &Accumulators, alpha: f64) -> Result<Accumulators> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("blend weight must be in [0, 1], got {alpha}")));
        }
        if source.a.shape() != target.a.shape() {
            return Err(Error::shape(
                "Accumulators::blend",
                source.a.shape_str(),
                target.a.shape_str(),
            ));
        }
        let mix = |s: &Matrix, t: &Matrix| {
            let data = s
                .as_slice()
                .iter()
                .zip(t.as_slice())
                .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                .collect();
            Matrix::from_raw(s.rows(), s.cols(), data)
        };
        Ok(Accumulators {
            a: mix(&source.a, &target.a),
            b: mix(&source.b, &target.b),
            samples_seen: source.samples_seen + target.samples_seen,
        })
    }

    pub fn solve(&self, method: RegressionMethod) -> Result<ReadoutModel> {
        method.validate()?;
        if self.samples_seen == 0 {
            return Err(Error::EmptyDataset);
        }
        let w_out = match method {
            RegressionMethod::Ridge { lambda } => self.solve_ridge(lambda)?,
            RegressionMethod::Linear => self.solve_ridge(0.0)?,
            RegressionMethod::Lasso { lambda, max_iter, tol } => self.solve_lasso(lambda, max_iter, tol)?,
        };
        ReadoutModel::new(w_out, method)
    }

    /// Solves `(B + λI) · W_outᵀ = Aᵀ`.
    fn solve_ridge(&self, lambda: f64) -> Result<Matrix> {
        let mut m = self.b.clone();
        for i in 0..m.rows() {
            let v = m.get(i, i) + lambda;
            m.set(i, i, v);
        }
        match solve_spd(&m, &self.a.transpose()) {
            Ok(wt) => Ok(wt.transpose()),
            Err(Error::NotPositiveDefinite { pivot, .. }) if lambda == 0.0 => Err(Error::RankDeficient { pivot }),
            Err(e) => Err(e),
        }
    }

    /// Cyclic coordinate descent on `w B wᵀ - 2 w·a + λ‖w‖₁` for each output row.
    fn solve_lasso(&self, lambda: f64, max_iter: usize, tol: f64) -> Result<Matrix> {
        let n = self.reservoir_size();
        let b = &self.b;
        let mut w_out = Matrix::zeros(self.output_dim(), n);
        for l in 0..self.output_dim() {
            let a = self.a.row(l);
            let mut w = vec![0.0; n];
            // r = B w, kept in sync with every coordinate update
            let mut r = vec![0.0; n];
            let mut converged = false;
            for _ in 0..max_iter {
                let mut max_change = 0.0f64;
                for j in 0..n {
                    let bjj = b.get(j, j);
                    let new = if bjj > 0.0 {
                        let rho = a[j] - (r[j] - bjj * w[j]);
                        soft_threshold(rho, lambda / 2.0) / bjj
                    } else {
                        0.0
                    };
                    let delta = new - w[j];
                    if delta != 0.0 {
                        for (rk, bkj) in r.iter_mut().zip(b.row(j)) {
                            *rk += delta * bkj;
                        }
                        w[j] = new;
                        max_change = max_change.max(delta.abs());
                    }
                }
                if max_change < tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Convergence {
                    what: "lasso coordinate descent",
                    iterations: max_iter,
                });
            }
            w_out.row_mut(l).copy_from_slice(&w);
        }
        Ok(w_out)
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Linear readout y(t) = W_out · x(t); the output activation is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    w_out: Matrix,
    method: RegressionMethod,
}

impl ReadoutModel {
    pub fn new(w_out: Matrix, method: RegressionMethod) -> Result<Self> {
        if w_out.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("readout solve"));
        }
        Ok(ReadoutModel { w_out, method })
    }

    pub fn w_out(&self) -> &Matrix {
        &self.w_out
    }

    pub fn method(&self) -> RegressionMethod {
        self.method
    }

    pub fn predict(&self, states: &StateTrajectory) -> Result<Matrix> {
        if states.states().rows() != self.w_out.cols() {
            return Err(Error::shape(
                "predict",
                format!("w_out {}", self.w_out.shape_str()),
                format!("states {}", states.states().shape_str()),
            ));
        }
        matmul(&self.w_out, states.states())
    }
}

fn check_dataset(reservoir: &Reservoir, dataset: &SequenceDataset) -> Result<()> {
    if dataset.input_dim() != reservoir.input_dim() || dataset.output_dim() != reservoir.output_dim() {
        return Err(Error::shape(
            "fit",
            format!("dataset K={} L={}", dataset.input_dim(), dataset.output_dim()),
            format!("reservoir K={} L={}", reservoir.input_dim(), reservoir.output_dim()),
        ));
    }
    Ok(())
}

fn accumulate_batch(
    reservoir: &Reservoir,
    dataset: &SequenceDataset,
    range: std::ops::Range<usize>,
) -> Result<Accumulators> {
    let washout = reservoir.config().washout;
    let teacher = reservoir.config().use_feedback;
    let drives: Vec<(&Matrix, Option<&Matrix>)> = range
        .clone()
        .map(|i| {
            let (u, y) = dataset.sequence(i);
            (u, teacher.then_some(y))
        })
        .collect();
    let trajectories = reservoir.harvest_many(&drives)?;
    let mut acc = Accumulators::new(reservoir.size(), reservoir.output_dim());
    for (i, traj) in range.zip(&trajectories) {
        let y = &dataset.targets()[i];
        acc.accumulate(traj, &y.columns(washout, y.cols()))?;
    }
    Ok(acc)
}

/// Harvests every sequence and folds it into accumulators, `batch_size`
/// sequences per partial sum. Partial sums are merged in sequence order, so
/// the result does not depend on the thread count.
pub fn accumulate_dataset(reservoir: &Reservoir, dataset: &SequenceDataset, batch_size: usize) -> Result<Accumulators> {
    check_dataset(reservoir, dataset)?;
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let n = dataset.len();
    let batches: Vec<std::ops::Range<usize>> = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    let wave = rayon::current_num_threads().max(1);
    let mut total = Accumulators::new(reservoir.size(), reservoir.output_dim());
    for chunk in batches.chunks(wave) {
        let partials: Vec<Accumulators> = chunk
            .par_iter()
            .map(|r| accumulate_batch(reservoir, dataset, r.clone()))
            .collect::<Result<_>>()?;
        for p in &partials {
            total.merge(p)?;
        }
    }
    Ok(total)
}

/// Trains the readout on every sequence of `dataset`.
pub fn fit(reservoir: &Reservoir, dataset: &SequenceDataset, method: RegressionMethod) -> Result<ReadoutModel> {
    fit_batched(reservoir, dataset, method, DEFAULT_BATCH)
}

pub fn fit_batched(
    reservoir: &Reservoir,
    dataset: &SequenceDataset,
    method: RegressionMethod,
    batch_size: usize,
) -> Result<ReadoutModel> {
    method.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    accumulate_dataset(reservoir, dataset, batch_size)?.solve(method)
}
