//! The optimizer family: RSGD, the adaptive row/column-scaled variants
//! (left-only, right-only, both), the fully vectorized variant, and the
//! variable-beta variant with its per-step weight enforcement.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::manifold::{project, retract, ManifoldPoint, Matrix, TangentVector};

pub type Vector = DVector<f64>;

/// Step sizes follow alpha_t = alpha0 / sqrt(t).
#[derive(Debug, Clone, Copy)]
pub struct StepSchedule {
    pub alpha0: f64,
}

impl StepSchedule {
    pub fn new(alpha0: f64) -> Result<Self> {
        if alpha0 <= 0.0 || !alpha0.is_finite() {
            return Err(Error::ConfigError(format!("alpha0 must be positive, got {alpha0}")));
        }
        Ok(Self { alpha0 })
    }
}

pub fn step_size(schedule: StepSchedule, t: u64) -> f64 {
    debug_assert!(t >= 1);
    schedule.alpha0 / (t as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasaMode {
    LeftOnly,
    RightOnly,
    Both,
    Vectorized,
}

#[derive(Debug, Clone, Copy)]
pub struct RasaConfig {
    pub mode: RasaMode,
    pub beta: f64,
    pub epsilon: f64,
    /// Exponents of the left/right scaling factors, constrained by 1/p + 1/q = 1/2.
    pub p: f64,
    pub q: f64,
}

impl RasaConfig {
    pub fn new(mode: RasaMode, beta: f64, epsilon: f64, p: f64, q: f64) -> Result<Self> {
        if !(0.0 < beta && beta < 1.0) {
            return Err(Error::ConfigError(format!("beta must lie in (0,1), got {beta}")));
        }
        if epsilon <= 0.0 {
            return Err(Error::ConfigError(format!("epsilon must be positive, got {epsilon}")));
        }
        if p <= 0.0 || q <= 0.0 || (1.0 / p + 1.0 / q - 0.5).abs() > 1e-12 {
            return Err(Error::ConfigError(format!(
                "exponents must satisfy 1/p + 1/q = 1/2 with p,q > 0, got p={p}, q={q}"
            )));
        }
        Ok(Self { mode, beta, epsilon, p, q })
    }

    pub fn with_defaults(mode: RasaMode, beta: f64) -> Result<Self> {
        Self::new(mode, beta, 1e-8, 4.0, 4.0)
    }
}

/// Row/column adaptive weights: l, l_hat of length n; r, r_hat of length r.
/// The hatted vectors are running elementwise maxima and never decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub t: u64,
    pub l: Vector,
    pub l_hat: Vector,
    pub r: Vector,
    pub r_hat: Vector,
}

impl AdaptiveState {
    pub fn zeros(n: usize, r: usize) -> Self {
        Self {
            t: 0,
            l: Vector::zeros(n),
            l_hat: Vector::zeros(n),
            r: Vector::zeros(r),
            r_hat: Vector::zeros(r),
        }
    }
}

/// Per-entry adaptive weights over vec(G), length n·r.
#[derive(Debug, Clone, PartialEq)]
pub struct VecAdaptiveState {
    pub t: u64,
    pub v: Vector,
    pub v_hat: Vector,
}

impl VecAdaptiveState {
    pub fn zeros(n: usize, r: usize) -> Self {
        Self {
            t: 0,
            v: Vector::zeros(n * r),
            v_hat: Vector::zeros(n * r),
        }
    }
}

/// State of the variable-beta variant: the running l/r averages plus the
/// explicitly materialized length-n·r running maximum (O(nr) memory).
#[derive(Debug, Clone, PartialEq)]
pub struct VarBetaState {
    pub t: u64,
    pub l: Vector,
    pub r: Vector,
    pub v_hat: Vector,
}

impl VarBetaState {
    pub fn zeros(n: usize, r: usize) -> Self {
        Self {
            t: 0,
            l: Vector::zeros(n),
            r: Vector::zeros(r),
            v_hat: Vector::zeros(n * r),
        }
    }
}

/// diag(GGᵀ)/r: per-row sums of squares divided by the column count.
pub fn row_weights(g: &Matrix) -> Vector {
    let r = g.ncols() as f64;
    Vector::from_iterator(g.nrows(), g.row_iter().map(|row| row.norm_squared() / r))
}

/// diag(GᵀG)/n: per-column sums of squares divided by the row count.
pub fn col_weights(g: &Matrix) -> Vector {
    let n = g.nrows() as f64;
    Vector::from_iterator(g.ncols(), g.column_iter().map(|col| col.norm_squared() / n))
}

/// One application of the exponential-average recursions and the running max.
pub fn rasa_update_weights(state: &AdaptiveState, g: &Matrix, beta: f64) -> AdaptiveState {
    let l = &state.l * beta + row_weights(g) * (1.0 - beta);
    let r = &state.r * beta + col_weights(g) * (1.0 - beta);
    let l_hat = state.l_hat.zip_map(&l, f64::max);
    let r_hat = state.r_hat.zip_map(&r, f64::max);
    AdaptiveState {
        t: state.t + 1,
        l,
        l_hat,
        r,
        r_hat,
    }
}

/// Scale G entrywise by the adaptive weights:
/// G_ij / ((l_hat_i + eps)^{1/p} · (r_hat_j + eps)^{1/q}).
///
/// LeftOnly suppresses the column factor (exactly 1); RightOnly the row factor.
pub fn adapt_gradient(g: &Matrix, l_hat: &Vector, r_hat: &Vector, cfg: &RasaConfig) -> Matrix {
    let left_exp = 1.0 / cfg.p;
    let right_exp = 1.0 / cfg.q;
    let left: Vec<f64> = match cfg.mode {
        RasaMode::RightOnly => vec![1.0; g.nrows()],
        _ => l_hat.iter().map(|&l| (l + cfg.epsilon).powf(left_exp)).collect(),
    };
    let right: Vec<f64> = match cfg.mode {
        RasaMode::LeftOnly => vec![1.0; g.ncols()],
        _ => r_hat.iter().map(|&r| (r + cfg.epsilon).powf(right_exp)).collect(),
    };
    Matrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] / (left[i] * right[j]))
}

fn scaled_step(
    x: &ManifoldPoint,
    scaled_grad: &Matrix,
    alpha: f64,
) -> Result<ManifoldPoint> {
    let xi = project(x, scaled_grad)?;
    let step = TangentVector {
        at: x.clone(),
        xi: &xi.xi * (-alpha),
    };
    retract(x, &step)
}

/// Plain Riemannian SGD: x ← R_x(−alpha·G).
pub fn rsgd_step(x: &ManifoldPoint, g: &TangentVector, alpha: f64) -> Result<ManifoldPoint> {
    if g.at != *x {
        return Err(Error::PointMismatch);
    }
    let step = TangentVector {
        at: x.clone(),
        xi: &g.xi * (-alpha),
    };
    retract(x, &step)
}

/// One full adaptive step: update weights with the incoming gradient, scale,
/// project, retract.
pub fn rasa_step(
    x: &ManifoldPoint,
    g: &TangentVector,
    state: &AdaptiveState,
    cfg: &RasaConfig,
    schedule: StepSchedule,
) -> Result<(ManifoldPoint, AdaptiveState)> {
    if g.at != *x {
        return Err(Error::PointMismatch);
    }
    let new_state = rasa_update_weights(state, &g.xi, cfg.beta);
    let alpha = step_size(schedule, new_state.t);
    let scaled = adapt_gradient(&g.xi, &new_state.l_hat, &new_state.r_hat, cfg);
    let next = scaled_step(x, &scaled, alpha)?;
    Ok((next, new_state))
}

fn vec_of(g: &Matrix) -> Vector {
    Vector::from_column_slice(g.as_slice())
}

fn unvec(v: &Vector, n: usize, r: usize) -> Matrix {
    Matrix::from_column_slice(n, r, v.as_slice())
}

/// Fully vectorized variant: a per-entry squared-gradient average of length n·r.
pub fn rasa_vec_step(
    x: &ManifoldPoint,
    g: &TangentVector,
    state: &VecAdaptiveState,
    cfg: &RasaConfig,
    schedule: StepSchedule,
) -> Result<(ManifoldPoint, VecAdaptiveState)> {
    if g.at != *x {
        return Err(Error::PointMismatch);
    }
    let gv = vec_of(&g.xi);
    let v = &state.v * cfg.beta + gv.component_mul(&gv) * (1.0 - cfg.beta);
    let v_hat = state.v_hat.zip_map(&v, f64::max);
    let t = state.t + 1;
    let alpha = step_size(schedule, t);
    let scaled_vec = gv.zip_map(&v_hat, |gi, vi| gi / (vi + cfg.epsilon).sqrt());
    let n = x.descriptor.n;
    let r = x.descriptor.r;
    let next = scaled_step(x, &unvec(&scaled_vec, n, r), alpha)?;
    Ok((next, VecAdaptiveState { t, v, v_hat }))
}

/// Raise (p, q) so that sqrt(p_i · q_j) ≥ G_ij² for every entry.
///
/// First pass raises p_i to the largest violating G_ij² across its row; the
/// second pass, in row-major order, raises q_j to G_ij² for entries still in
/// violation.
pub fn assumption2_enforce(p: &Vector, q: &Vector, g: &Matrix) -> (Vector, Vector) {
    let mut p_hat = p.clone();
    let mut q_hat = q.clone();
    let violated = |pi: f64, qj: f64, gij: f64| (pi * qj).sqrt() < gij * gij;
    for i in 0..g.nrows() {
        let mut worst: Option<f64> = None;
        for j in 0..g.ncols() {
            let gij = g[(i, j)];
            if violated(p_hat[i], q_hat[j], gij) {
                let g2 = gij * gij;
                worst = Some(worst.map_or(g2, |w: f64| w.max(g2)));
            }
        }
        if let Some(w) = worst {
            p_hat[i] = p_hat[i].max(w);
        }
    }
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let gij = g[(i, j)];
            if violated(p_hat[i], q_hat[j], gij) {
                q_hat[j] = q_hat[j].max(gij * gij);
            }
        }
    }
    (p_hat, q_hat)
}

/// Kronecker assembly v = r^{1/2} ⊗ l^{1/2}: entry (j·n + i) is sqrt(r_j·l_i),
/// matching column-major vec(G).
pub fn kron_sqrt(l: &Vector, r: &Vector) -> Vector {
    let n = l.len();
    Vector::from_iterator(
        n * r.len(),
        r.iter()
            .flat_map(|&rj| l.iter().map(move |&li| (rj.sqrt()) * (li.sqrt()))),
    )
}

/// Epsilon used by the variable-beta step when inverting sqrt(v_hat); same
/// stabilization constant as the fixed-beta default.
pub const VARBETA_EPSILON: f64 = 1e-8;

/// One step of the variable-beta variant: beta = 1 − 1/t, weight enforcement,
/// explicit length-n·r running maximum, and the vec-scaled update.
pub fn varbeta_step(
    x: &ManifoldPoint,
    g: &TangentVector,
    state: &VarBetaState,
    schedule: StepSchedule,
) -> Result<(ManifoldPoint, VarBetaState)> {
    if g.at != *x {
        return Err(Error::PointMismatch);
    }
    let t = state.t + 1;
    let beta = 1.0 - 1.0 / (t as f64);
    let p = row_weights(&g.xi);
    let q = col_weights(&g.xi);
    let (p_hat, q_hat) = assumption2_enforce(&p, &q, &g.xi);
    let l = &state.l * beta + p_hat * (1.0 - beta);
    let r = &state.r * beta + q_hat * (1.0 - beta);
    let v = kron_sqrt(&l, &r);
    let v_hat = state.v_hat.zip_map(&v, f64::max);
    let alpha = step_size(schedule, t);
    let gv = vec_of(&g.xi);
    let scaled_vec = gv.zip_map(&v_hat, |gi, vi| gi / (vi + VARBETA_EPSILON).sqrt());
    let n = x.descriptor.n;
    let rr = x.descriptor.r;
    let next = scaled_step(x, &unvec(&scaled_vec, n, rr), alpha)?;
    Ok((next, VarBetaState { t, l, r, v_hat }))
}
