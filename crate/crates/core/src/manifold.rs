//! Dense-matrix manifold primitives for the Stiefel and Grassmann manifolds.
//!
//! Points are n×r matrices with orthonormal columns. A Grassmann point is
//! stored through an orthonormal representative of its equivalence class;
//! two representatives related by a right orthogonal factor denote the same
//! subspace.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Frobenius tolerance for manifold membership and tangency checks.
pub const MEMBERSHIP_TOL: f64 = 1e-10;
/// Relative threshold on |R_ii| below which a QR argument is treated as rank-deficient.
pub const RANK_REL_TOL: f64 = 1e-12;

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    Stiefel,
    Grassmann,
}

/// St(r,n) or Gr(r,n): ambient rows `n`, frame columns `r`, with 1 ≤ r ≤ n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifoldDescriptor {
    pub kind: ManifoldKind,
    pub n: usize,
    pub r: usize,
}

impl ManifoldDescriptor {
    pub fn new(kind: ManifoldKind, n: usize, r: usize) -> Result<Self> {
        if r == 0 || r > n {
            return Err(Error::ConfigError(format!(
                "manifold requires 1 <= r <= n, got n={n}, r={r}"
            )));
        }
        Ok(Self { kind, n, r })
    }

    pub fn stiefel(n: usize, r: usize) -> Result<Self> {
        Self::new(ManifoldKind::Stiefel, n, r)
    }

    pub fn grassmann(n: usize, r: usize) -> Result<Self> {
        Self::new(ManifoldKind::Grassmann, n, r)
    }
}

/// A point on the manifold: an n×r matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub descriptor: ManifoldDescriptor,
    pub u: Matrix,
}

impl ManifoldPoint {
    pub fn new(descriptor: ManifoldDescriptor, u: Matrix) -> Result<Self> {
        if u.nrows() != descriptor.n || u.ncols() != descriptor.r {
            return Err(shape_err(descriptor.n, descriptor.r, &u));
        }
        let point = Self { descriptor, u };
        let defect = point.orthonormality_defect();
        if defect > MEMBERSHIP_TOL {
            return Err(Error::ConfigError(format!(
                "columns not orthonormal: ||U'U - I||_F = {defect:e}"
            )));
        }
        Ok(point)
    }

    /// ‖UᵀU − I_r‖_F.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.u.transpose() * &self.u;
        let id = Matrix::identity(self.descriptor.r, self.descriptor.r);
        (gram - id).norm()
    }

    pub fn is_feasible(&self) -> bool {
        self.orthonormality_defect() <= MEMBERSHIP_TOL
    }

    /// Subspace distance ‖U₁U₁ᵀ − U₂U₂ᵀ‖_F; the right notion of equality for
    /// Grassmann points, whose representatives differ by right O(r) action.
    pub fn subspace_distance(&self, other: &ManifoldPoint) -> f64 {
        let p1 = &self.u * self.u.transpose();
        let p2 = &other.u * other.u.transpose();
        (p1 - p2).norm()
    }
}

/// A tangent vector ξ at a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub at: ManifoldPoint,
    pub xi: Matrix,
}

impl TangentVector {
    /// Deviation from the tangent-space constraint of the base point's kind.
    pub fn tangency_defect(&self) -> f64 {
        let utxi = self.at.u.transpose() * &self.xi;
        match self.at.descriptor.kind {
            ManifoldKind::Stiefel => (&utxi + utxi.transpose()).norm(),
            ManifoldKind::Grassmann => utxi.norm(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.xi.norm()
    }
}

fn shape_err(n: usize, r: usize, got: &Matrix) -> Error {
    Error::ShapeMismatch {
        expected: format!("{n}x{r}"),
        got: format!("{}x{}", got.nrows(), got.ncols()),
    }
}

/// Orthonormal factor of a thin QR factorization, with the sign convention
/// diag(R) > 0 so the factor is unique.
pub fn qf(a: &Matrix) -> Result<Matrix> {
    let r_cols = a.ncols();
    let threshold = RANK_REL_TOL * a.norm();
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..r_cols {
        let diag = r[(j, j)];
        if diag.abs() < threshold {
            return Err(Error::RankDeficient {
                index: j,
                diag: diag.abs(),
                threshold,
            });
        }
        if diag < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// Orthogonal projection of an ambient matrix W onto the tangent space at x.
///
/// Stiefel: W − U sym(UᵀW). Grassmann: W − U(UᵀW).
pub fn project(x: &ManifoldPoint, w: &Matrix) -> Result<TangentVector> {
    let d = x.descriptor;
    if w.nrows() != d.n || w.ncols() != d.r {
        return Err(shape_err(d.n, d.r, w));
    }
    let utw = x.u.transpose() * w;
    let xi = match d.kind {
        ManifoldKind::Stiefel => {
            let sym = (&utw + utw.transpose()) * 0.5;
            w - &x.u * sym
        }
        ManifoldKind::Grassmann => w - &x.u * utw,
    };
    Ok(TangentVector { at: x.clone(), xi })
}

/// QR retraction R_x(ξ) = qf(x + ξ). Returns x unchanged for ξ = 0 so the
/// retraction is rigid at zero.
pub fn retract(x: &ManifoldPoint, xi: &TangentVector) -> Result<ManifoldPoint> {
    if xi.at != *x {
        return Err(Error::PointMismatch);
    }
    if xi.xi.iter().all(|&e| e == 0.0) {
        return Ok(x.clone());
    }
    let q = qf(&(&x.u + &xi.xi))?;
    Ok(ManifoldPoint {
        descriptor: x.descriptor,
        u: q,
    })
}

/// Riemannian metric ⟨ξ,η⟩ = trace(ξᵀη).
pub fn inner(xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
    if xi.at != eta.at {
        return Err(Error::PointMismatch);
    }
    Ok(xi.xi.dot(&eta.xi))
}

/// qf of a seeded i.i.d. standard-normal n×r matrix.
pub fn random_point(descriptor: ManifoldDescriptor, seed: u64) -> ManifoldPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = Matrix::from_fn(descriptor.n, descriptor.r, |_, _| {
            rng.sample(StandardNormal)
        });
        if let Ok(q) = qf(&a) {
            return ManifoldPoint { descriptor, u: q };
        }
        // Gaussian matrices are full-rank almost surely; redraw on the
        // measure-zero failure.
    }
}

/// Seeded standard-normal matrix, shared by the synthetic generators.
pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}
