//! The fixed random reservoir: weight initialization, echo-state rescaling and
//! state harvesting.
//!
//! Sequences are driven through the reservoir in lockstep groups of
//! [`LANES`]; every lane performs exactly the same floating-point operations
//! as a lone sequence would, so grouping never changes a single bit of the
//! harvested states.

use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spectral_radius, Matrix, Vector, DEFAULT_RADIUS_TOL};
use crate::rng::{self, derive_seed, stream, tag};

/// Accepted deviation of the rescaled radius from its target.
pub const RADIUS_MATCH_TOL: f64 = 1e-4;

/// Number of sequences advanced together by the harvesting kernel.
pub const LANES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Uniform on [-1, 1].
    Random,
    /// Uniform on ±1/√cols.
    Xavier,
    /// Uniform on ±√6/√(rows + cols).
    NormalizedXavier,
    /// Gaussian with standard deviation √(2/cols).
    He,
}

impl InitMethod {
    pub const ALL: [InitMethod; 4] = [
        InitMethod::Random,
        InitMethod::Xavier,
        InitMethod::NormalizedXavier,
        InitMethod::He,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitMethod::Random => "random",
            InitMethod::Xavier => "xavier",
            InitMethod::NormalizedXavier => "normalized_xavier",
            InitMethod::He => "he",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        InitMethod::ALL.get(usize::from(c)).copied()
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(InitMethod::Random),
            "xavier" => Ok(InitMethod::Xavier),
            "normalized_xavier" | "glorot" => Ok(InitMethod::NormalizedXavier),
            "he" => Ok(InitMethod::He),
            other => Err(Error::Config(format!(
                "unknown init method '{other}' (expected random, xavier, normalized_xavier or he)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Tanh, Activation::Relu, Activation::Sigmoid];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Closed range of the activation's outputs.
    pub fn range(self) -> (f64, f64) {
        match self {
            Activation::Tanh => (-1.0, 1.0),
            Activation::Relu => (0.0, f64::INFINITY),
            Activation::Sigmoid => (0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Activation::ALL.get(usize::from(c)).copied()
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected tanh, relu or sigmoid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirConfig {
    pub input_dim: usize,
    pub reservoir_size: usize,
    pub output_dim: usize,
    pub init: InitMethod,
    /// Probability that a reservoir entry is non-zero.
    pub sparsity: f64,
    pub spectral_radius: f64,
    pub activation: Activation,
    pub use_feedback: bool,
    pub washout: usize,
    pub seed: u64,
    /// Keep the raw initializer radius (may exceed 1). Diagnostic use only.
    pub allow_unstable: bool,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            input_dim: 2,
            reservoir_size: 578,
            output_dim: 2,
            init: InitMethod::Xavier,
            sparsity: 1.0,
            spectral_radius: 0.5,
            activation: Activation::Tanh,
            use_feedback: false,
            washout: 0,
            seed: 0,
            allow_unstable: false,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.reservoir_size == 0 || self.output_dim == 0 {
            return Err(Error::invalid(format!(
                "reservoir dimensions must be >= 1 (K={}, N={}, L={})",
                self.input_dim, self.reservoir_size, self.output_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::invalid(format!(
                "sparsity must be in [0, 1], got {}",
                self.sparsity
            )));
        }
        let rho = self.spectral_radius;
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("spectral radius must be positive, got {rho}")));
        }
        if rho > 1.0 && !self.allow_unstable {
            return Err(Error::invalid(format!(
                "spectral radius {rho} violates the echo state condition (must be <= 1)"
            )));
        }
        Ok(())
    }
}

/// Draws a `rows × cols` weight matrix, then zeroes each entry independently
/// with probability `1 - sparsity`.
///
/// Values come from stream [`rng::stream::VALUES`] of `seed` and the sparsity
/// mask from stream [`rng::stream::MASK`], one draw per entry in row-major
/// order.
pub fn init_matrix(method: InitMethod, rows: usize, cols: usize, sparsity: f64, seed: u64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "weight matrix must be at least 1x1, got {rows}x{cols}"
        )));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::invalid(format!("sparsity must be in [0, 1], got {sparsity}")));
    }
    let mut values = stream(seed, rng::stream::VALUES);
    let mut mask = stream(seed, rng::stream::MASK);
    let mut draw: Box<dyn FnMut() -> f64> = match method {
        InitMethod::Random => Box::new(move || values.random_range(-1.0..=1.0)),
        InitMethod::Xavier => {
            let b = 1.0 / (cols as f64).sqrt();
            Box::new(move || values.random_range(-b..=b))
        }
        InitMethod::NormalizedXavier => {
            let b = 6f64.sqrt() / ((rows + cols) as f64).sqrt();
            Box::new(move || values.random_range(-b..=b))
        }
        InitMethod::He => {
            let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
            Box::new(move || normal.sample(&mut values))
        }
    };
    Ok(Matrix::from_fn(rows, cols, |_, _| {
        let v = draw();
        let keep: f64 = mask.random();
        if keep < sparsity {
            v
        } else {
            0.0
        }
    }))
}

/// Scales `w` so that its spectral radius equals `target`.
pub fn rescale_to_radius(w: &Matrix, target: f64, tol: f64) -> Result<Matrix> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::invalid(format!("target radius must be positive, got {target}")));
    }
    let rho = spectral_radius(w, tol)?;
    if rho == 0.0 {
        return Err(Error::ZeroSpectralRadius);
    }
    let out = w.scale(target / rho);
    let achieved = spectral_radius(&out, tol)?;
    if (achieved - target).abs() > tol.max(f64::EPSILON * 64.0) * target.max(1.0) {
        return Err(Error::Convergence {
            what: "spectral radius rescaling",
            iterations: 1,
        });
    }
    Ok(out)
}

/// Harvested echo states: column `c` holds x(t_offset + 1 + c).
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    states: Matrix,
    t_offset: usize,
}

impl StateTrajectory {
    pub fn new(states: Matrix, t_offset: usize) -> Self {
        StateTrajectory { states, t_offset }
    }

    pub fn states(&self) -> &Matrix {
        &self.states
    }

    pub fn t_offset(&self) -> usize {
        self.t_offset
    }

    pub fn len(&self) -> usize {
        self.states.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.cols() == 0
    }

    /// State vector at absolute time step `t` (1-based, `t > t_offset`).
    pub fn state_at(&self, t: usize) -> Vector {
        Vector::from_raw(self.states.column(t - self.t_offset - 1))
    }
}

/// Reservoir with frozen weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    config: ReservoirConfig,
    w_in: Matrix,
    w: Matrix,
    w_fb: Matrix,
    achieved_radius: f64,
}

impl Reservoir {
    pub fn build(config: ReservoirConfig) -> Result<Self> {
        config.validate()?;
        let (k, n, l) = (config.input_dim, config.reservoir_size, config.output_dim);
        let w_in = init_matrix(config.init, n, k, 1.0, derive_seed(config.seed, tag::W_IN))?;
        let raw = init_matrix(config.init, n, n, config.sparsity, derive_seed(config.seed, tag::W))?;
        let (w, achieved_radius) = if config.allow_unstable {
            let rho = spectral_radius(&raw, DEFAULT_RADIUS_TOL)?;
            (raw, rho)
        } else {
            let w = rescale_to_radius(&raw, config.spectral_radius, DEFAULT_RADIUS_TOL)?;
            let rho = spectral_radius(&w, DEFAULT_RADIUS_TOL)?;
            (w, rho)
        };
        let w_fb = if config.use_feedback {
            init_matrix(config.init, n, l, 1.0, derive_seed(config.seed, tag::W_FB))?
        } else {
            Matrix::zeros(n, l)
        };
        Ok(Reservoir {
            config,
            w_in,
            w,
            w_fb,
            achieved_radius,
        })
    }

    /// Reassembles a reservoir from stored weights, checking every shape.
    pub fn from_parts(
        config: ReservoirConfig,
        w_in: Matrix,
        w: Matrix,
        w_fb: Matrix,
        achieved_radius: f64,
    ) -> Result<Self> {
        config.validate()?;
        let (k, n, l) = (config.input_dim, config.reservoir_size, config.output_dim);
        for (name, m, want) in [("w_in", &w_in, (n, k)), ("w", &w, (n, n)), ("w_fb", &w_fb, (n, l))] {
            if m.shape() != want {
                return Err(Error::shape(
                    "Reservoir::from_parts",
                    format!("{name} {}", m.shape_str()),
                    format!("{}x{}", want.0, want.1),
                ));
            }
        }
        Ok(Reservoir {
            config,
            w_in,
            w,
            w_fb,
            achieved_radius,
        })
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn w_fb(&self) -> &Matrix {
        &self.w_fb
    }

    pub fn achieved_radius(&self) -> f64 {
        self.achieved_radius
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn size(&self) -> usize {
        self.config.reservoir_size
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// One step of x(t) = f(W_in·u(t) + W·x(t-1) + W_fb·y(t-1)).
    pub fn update_state(&self, x_prev: &Vector, u: &Vector, y_prev: &Vector) -> Result<Vector> {
        let (k, n, l) = (self.input_dim(), self.size(), self.output_dim());
        for (name, v, want) in [("x_prev", x_prev, n), ("u", u, k), ("y_prev", y_prev, l)] {
            if v.len() != want {
                return Err(Error::shape(
                    "update_state",
                    format!("{name} of length {}", v.len()),
                    format!("length {want}"),
                ));
            }
        }
        let (x, u, y) = (x_prev.as_slice(), u.as_slice(), y_prev.as_slice());
        let f = self.config.activation;
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for (w, xj) in self.w.row(i).iter().zip(x) {
                    acc += w * xj;
                }
                for (w, uk) in self.w_in.row(i).iter().zip(u) {
                    acc += w * uk;
                }
                if self.config.use_feedback {
                    for (w, yl) in self.w_fb.row(i).iter().zip(y) {
                        acc += w * yl;
                    }
                }
                f.apply(acc)
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reservoir state"));
        }
        Ok(Vector::from_raw(out))
    }

    fn check_drive(&self, inputs: &Matrix, teacher: Option<&Matrix>) -> Result<()> {
        if inputs.rows() != self.input_dim() {
            return Err(Error::shape(
                "harvest",
                format!("inputs {}", inputs.shape_str()),
                format!("{} input rows", self.input_dim()),
            ));
        }
        match (self.config.use_feedback, teacher) {
            (true, None) => Err(Error::invalid(
                "reservoir uses feedback; a teacher sequence is required",
            )),
            (false, Some(_)) => Err(Error::invalid(
                "reservoir has no feedback; teacher sequence must be omitted",
            )),
            (true, Some(t)) if t.shape() != (self.output_dim(), inputs.cols()) => Err(Error::shape(
                "harvest",
                format!("teacher {}", t.shape_str()),
                format!("{}x{}", self.output_dim(), inputs.cols()),
            )),
            _ => {
                let washout = self.config.washout;
                if inputs.cols() <= washout {
                    Err(Error::EmptyTrajectory {
                        len: inputs.cols(),
                        washout,
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Drives the reservoir from x(0) = 0 and returns the states after washout.
    ///
    /// Column `t-1` of `inputs` is u(t). With feedback enabled, y(t-1) is
    /// teacher-forced from column `t-2` of `teacher`, and y(0) = 0.
    pub fn harvest(&self, inputs: &Matrix, teacher: Option<&Matrix>) -> Result<StateTrajectory> {
        self.check_drive(inputs, teacher)?;
        let mut lanes = Lanes::new(self, None);
        Ok(lanes.harvest_group(&[(inputs, teacher)])?.pop().expect("one lane"))
    }

    /// Like [`Reservoir::harvest`] but starting from an arbitrary x(0).
    pub fn harvest_from(&self, x0: &Vector, inputs: &Matrix, teacher: Option<&Matrix>) -> Result<StateTrajectory> {
        if x0.len() != self.size() {
            return Err(Error::shape(
                "harvest_from",
                format!("x0 of length {}", x0.len()),
                format!("length {}", self.size()),
            ));
        }
        self.check_drive(inputs, teacher)?;
        let mut lanes = Lanes::new(self, Some(x0.as_slice()));
        Ok(lanes.harvest_group(&[(inputs, teacher)])?.pop().expect("one lane"))
    }

    /// Harvests many sequences, in parallel across lockstep groups. Output
    /// order matches input order and is identical to harvesting one by one.
    pub fn harvest_many(&self, drives: &[(&Matrix, Option<&Matrix>)]) -> Result<Vec<StateTrajectory>> {
        for (u, y) in drives {
            self.check_drive(u, *y)?;
        }
        let groups: Vec<Vec<StateTrajectory>> = drives
            .par_chunks(LANES)
            .map(|group| Lanes::new(self, None).harvest_group(group))
            .collect::<Result<_>>()?;
        Ok(groups.into_iter().flatten().collect())
    }
}

/// Lockstep state for up to [`LANES`] sequences; layout is `[unit * LANES + lane]`.
pub(crate) struct Lanes<'r> {
    res: &'r Reservoir,
    x: Vec<f64>,
    next: Vec<f64>,
    u: Vec<f64>,
    y: Vec<f64>,
}

impl<'r> Lanes<'r> {
    pub(crate) fn new(res: &'r Reservoir, x0: Option<&[f64]>) -> Self {
        let n = res.size();
        let mut x = vec![0.0; n * LANES];
        if let Some(x0) = x0 {
            for (j, v) in x0.iter().enumerate() {
                x[j * LANES..(j + 1) * LANES].fill(*v);
            }
        }
        Lanes {
            res,
            x,
            next: vec![0.0; n * LANES],
            u: vec![0.0; res.input_dim() * LANES],
            y: vec![0.0; res.output_dim() * LANES],
        }
    }

    pub(crate) fn set_input(&mut self, lane: usize, inputs: &Matrix, col: usize) {
        for k in 0..inputs.rows() {
            self.u[k * LANES + lane] = inputs.get(k, col);
        }
    }

    pub(crate) fn set_feedback(&mut self, lane: usize, values: impl Iterator<Item = f64>) {
        for (l, v) in values.enumerate() {
            self.y[l * LANES + lane] = v;
        }
    }

    pub(crate) fn state(&self, lane: usize, unit: usize) -> f64 {
        self.x[unit * LANES + lane]
    }

    pub(crate) fn step(&mut self) -> Result<()> {
        let res = self.res;
        let n = res.size();
        let f = res.config.activation;
        let feedback = res.config.use_feedback;
        for i in 0..n {
            let mut acc = [0.0f64; LANES];
            for (j, &wij) in res.w.row(i).iter().enumerate() {
                let xs = &self.x[j * LANES..(j + 1) * LANES];
                for b in 0..LANES {
                    acc[b] += wij * xs[b];
                }
            }
            for (k, &wik) in res.w_in.row(i).iter().enumerate() {
                let us = &self.u[k * LANES..(k + 1) * LANES];
                for b in 0..LANES {
                    acc[b] += wik * us[b];
                }
            }
            if feedback {
                for (l, &wil) in res.w_fb.row(i).iter().enumerate() {
                    let ys = &self.y[l * LANES..(l + 1) * LANES];
                    for b in 0..LANES {
                        acc[b] += wil * ys[b];
                    }
                }
            }
            let out = &mut self.next[i * LANES..(i + 1) * LANES];
            for b in 0..LANES {
                out[b] = f.apply(acc[b]);
            }
        }
        if self.next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reservoir state"));
        }
        std::mem::swap(&mut self.x, &mut self.next);
        Ok(())
    }

    /// Teacher-forced harvest of up to [`LANES`] pre-validated sequences.
    fn harvest_group(&mut self, group: &[(&Matrix, Option<&Matrix>)]) -> Result<Vec<StateTrajectory>> {
        debug_assert!(group.len() <= LANES);
        let n = self.res.size();
        let washout = self.res.config.washout;
        let max_len = group.iter().map(|(u, _)| u.cols()).max().unwrap_or(0);
        let mut out: Vec<Matrix> = group
            .iter()
            .map(|(u, _)| Matrix::zeros(n, u.cols() - washout))
            .collect();
        for t in 1..=max_len {
            for (b, (u, teacher)) in group.iter().enumerate() {
                if t > u.cols() {
                    continue;
                }
                self.set_input(b, u, t - 1);
                if let Some(y) = teacher {
                    if t >= 2 {
                        self.set_feedback(b, (0..y.rows()).map(|l| y.get(l, t - 2)));
                    }
                }
            }
            self.step()?;
            for (b, (u, _)) in group.iter().enumerate() {
                if t > washout && t <= u.cols() {
                    let c = t - washout - 1;
                    let m = &mut out[b];
                    for i in 0..n {
                        m.set(i, c, self.x[i * LANES + b]);
                    }
                }
            }
        }
        Ok(out.into_iter().map(|m| StateTrajectory::new(m, washout)).collect())
    }
}
