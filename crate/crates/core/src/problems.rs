//! The three objectives: subspace PCA, ICA by joint diagonalization, and
//! low-rank matrix completion, each with mini-batch cost and Riemannian
//! stochastic gradient, plus a finite-difference directional check.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::manifold::{
    inner, project, retract, ManifoldDescriptor, ManifoldPoint, Matrix, TangentVector,
};

pub type Vector = DVector<f64>;

/// A mini-batch of column indices (PCA/MC) or matrix indices (ICA).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>, population: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::ConfigError("batch must be nonempty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= population) {
            return Err(Error::ConfigError(format!(
                "batch index {bad} out of range for population {population}"
            )));
        }
        Ok(Self { indices })
    }

    pub fn full(population: usize) -> Self {
        Self {
            indices: (0..population).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_point(manifold: &ManifoldDescriptor, x: &ManifoldPoint) -> Result<()> {
    if x.descriptor.n != manifold.n || x.descriptor.r != manifold.r {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", manifold.n, manifold.r),
            got: format!("{}x{}", x.descriptor.n, x.descriptor.r),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PCA

/// Data points as columns of an n×N matrix; minimize the negative explained
/// variance −(1/N) Σ zᵀUUᵀz.
#[derive(Debug, Clone)]
pub struct PcaProblem {
    pub z: Matrix,
    pub manifold: ManifoldDescriptor,
}

impl PcaProblem {
    pub fn new(z: Matrix, manifold: ManifoldDescriptor) -> Result<Self> {
        if z.ncols() == 0 {
            return Err(Error::ConfigError("PCA needs at least one data point".into()));
        }
        if z.nrows() != manifold.n {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows", manifold.n),
                got: format!("{} rows", z.nrows()),
            });
        }
        if z.iter().any(|e| !e.is_finite()) {
            return Err(Error::ConfigError("PCA data contains non-finite entries".into()));
        }
        Ok(Self { z, manifold })
    }

    pub fn num_points(&self) -> usize {
        self.z.ncols()
    }
}

pub fn pca_cost(p: &PcaProblem, x: &ManifoldPoint, batch: &Batch) -> Result<f64> {
    check_point(&p.manifold, x)?;
    let mut acc = 0.0;
    for &i in &batch.indices {
        let proj = x.u.transpose() * p.z.column(i);
        acc += proj.norm_squared();
    }
    Ok(-acc / batch.len() as f64)
}

pub fn pca_grad(p: &PcaProblem, x: &ManifoldPoint, batch: &Batch) -> Result<TangentVector> {
    check_point(&p.manifold, x)?;
    let mut egrad = Matrix::zeros(p.manifold.n, p.manifold.r);
    for &i in &batch.indices {
        let z = p.z.column(i);
        let ztu = z.transpose() * &x.u; // 1 x r
        egrad.gemm(-2.0 / batch.len() as f64, &z, &ztu, 1.0);
    }
    project(x, &egrad)
}

// ---------------------------------------------------------------------------
// ICA (joint diagonalization)

/// A family of symmetric n×n matrices; maximize the summed squared diagonals
/// of UᵀC_iU over the Stiefel manifold.
#[derive(Debug, Clone)]
pub struct IcaProblem {
    pub c: Vec<Matrix>,
    pub manifold: ManifoldDescriptor,
}

impl IcaProblem {
    pub fn new(c: Vec<Matrix>, manifold: ManifoldDescriptor) -> Result<Self> {
        Self::build(c, manifold, false)
    }

    /// Symmetrize-on-load variant for inputs with tolerance-level asymmetry.
    pub fn new_symmetrized(c: Vec<Matrix>, manifold: ManifoldDescriptor) -> Result<Self> {
        Self::build(c, manifold, true)
    }

    fn build(c: Vec<Matrix>, manifold: ManifoldDescriptor, symmetrize: bool) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::ConfigError("ICA needs at least one matrix".into()));
        }
        let mut out = Vec::with_capacity(c.len());
        for (idx, ci) in c.into_iter().enumerate() {
            if ci.nrows() != manifold.n || ci.ncols() != manifold.n {
                return Err(Error::ShapeMismatch {
                    expected: format!("{0}x{0}", manifold.n),
                    got: format!("{}x{} (matrix {idx})", ci.nrows(), ci.ncols()),
                });
            }
            let asym = (&ci - ci.transpose()).norm();
            if symmetrize {
                out.push((&ci + ci.transpose()) * 0.5);
            } else if asym > 1e-10 {
                return Err(Error::ConfigError(format!(
                    "matrix {idx} is not symmetric: ||C - C'||_F = {asym:e}"
                )));
            } else {
                out.push(ci);
            }
        }
        Ok(Self { c: out, manifold })
    }

    pub fn num_matrices(&self) -> usize {
        self.c.len()
    }
}

pub fn ica_cost(p: &IcaProblem, x: &ManifoldPoint, batch: &Batch) -> Result<f64> {
    check_point(&p.manifold, x)?;
    let mut acc = 0.0;
    for &i in &batch.indices {
        let cu = &p.c[i] * &x.u;
        for k in 0..p.manifold.r {
            let d = x.u.column(k).dot(&cu.column(k));
            acc += d * d;
        }
    }
    Ok(-acc / batch.len() as f64)
}

pub fn ica_grad(p: &IcaProblem, x: &ManifoldPoint, batch: &Batch) -> Result<TangentVector> {
    check_point(&p.manifold, x)?;
    let mut egrad = Matrix::zeros(p.manifold.n, p.manifold.r);
    let scale = -4.0 / batch.len() as f64;
    for &i in &batch.indices {
        let cu = &p.c[i] * &x.u;
        for k in 0..p.manifold.r {
            let d = x.u.column(k).dot(&cu.column(k));
            let mut col = egrad.column_mut(k);
            col.axpy(scale * d, &cu.column(k), 1.0);
        }
    }
    project(x, &egrad)
}

// ---------------------------------------------------------------------------
// Matrix completion

/// Observed entries of an n×N matrix stored per column, with a ridge term on
/// the inner per-column least squares.
#[derive(Debug, Clone)]
pub struct McProblem {
    /// Per-column observations: (row, value).
    pub cols: Vec<Vec<(usize, f64)>>,
    pub n: usize,
    pub lambda: f64,
    pub manifold: ManifoldDescriptor,
}

impl McProblem {
    pub fn new(
        triplets: &[(usize, usize, f64)],
        n: usize,
        num_cols: usize,
        lambda: f64,
        manifold: ManifoldDescriptor,
    ) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::ConfigError(format!("lambda must be nonnegative, got {lambda}")));
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_cols];
        let mut seen = std::collections::HashSet::new();
        for &(row, col, val) in triplets {
            if row >= n || col >= num_cols {
                return Err(Error::ConfigError(format!(
                    "observation ({row},{col}) out of range for {n}x{num_cols}"
                )));
            }
            if !seen.insert((row, col)) {
                return Err(Error::ConfigError(format!("duplicate observation ({row},{col})")));
            }
            cols[col].push((row, val));
        }
        Ok(Self { cols, n, lambda, manifold })
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }
}

/// Ridge-regularized least-squares coefficients for one column:
/// (U_ΩᵀU_Ω + λI) a = U_Ωᵀ z_Ω.
pub fn mc_solve_coefficients(p: &McProblem, x: &ManifoldPoint, i: usize) -> Result<Vector> {
    solve_coefficients_ridge(p, x, i, p.lambda)
}

fn solve_coefficients_ridge(
    p: &McProblem,
    x: &ManifoldPoint,
    i: usize,
    lambda: f64,
) -> Result<Vector> {
    check_point(&p.manifold, x)?;
    let obs = &p.cols[i];
    if obs.is_empty() {
        return Err(Error::EmptyColumn(i));
    }
    let r = p.manifold.r;
    let mut normal = Matrix::zeros(r, r);
    let mut rhs = Vector::zeros(r);
    for &(row, val) in obs {
        let u_row = x.u.row(row);
        for a in 0..r {
            rhs[a] += u_row[a] * val;
            for b in 0..r {
                normal[(a, b)] += u_row[a] * u_row[b];
            }
        }
    }
    for a in 0..r {
        normal[(a, a)] += lambda;
    }
    match normal.cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => Err(Error::SingularSystem),
    }
}

/// Least-squares coefficients (pseudo-inverse solution), used when scoring a
/// subspace: the minimum-norm fit to the observed entries without the
/// training-time ridge.
fn solve_coefficients_ls(p: &McProblem, x: &ManifoldPoint, i: usize) -> Result<Vector> {
    check_point(&p.manifold, x)?;
    let obs = &p.cols[i];
    if obs.is_empty() {
        return Err(Error::EmptyColumn(i));
    }
    let r = p.manifold.r;
    let mut u_omega = Matrix::zeros(obs.len(), r);
    let mut z_omega = Vector::zeros(obs.len());
    for (k, &(row, val)) in obs.iter().enumerate() {
        u_omega.row_mut(k).copy_from(&x.u.row(row));
        z_omega[k] = val;
    }
    u_omega
        .svd(true, true)
        .solve(&z_omega, 1e-12)
        .map_err(|_| Error::SingularSystem)
}

fn column_residual(
    p: &McProblem,
    x: &ManifoldPoint,
    i: usize,
) -> Result<(Vector, Vec<(usize, f64)>)> {
    let a = mc_solve_coefficients(p, x, i)?;
    let residuals = p.cols[i]
        .iter()
        .map(|&(row, val)| {
            let pred = x.u.row(row).transpose().dot(&a);
            (row, pred - val)
        })
        .collect();
    Ok((a, residuals))
}

pub fn mc_cost(p: &McProblem, x: &ManifoldPoint, batch: &Batch) -> Result<f64> {
    check_point(&p.manifold, x)?;
    let mut acc = 0.0;
    for &i in &batch.indices {
        let (_, residuals) = column_residual(p, x, i)?;
        acc += residuals.iter().map(|&(_, e)| e * e).sum::<f64>();
    }
    Ok(acc / batch.len() as f64)
}

pub fn mc_grad(p: &McProblem, x: &ManifoldPoint, batch: &Batch) -> Result<TangentVector> {
    check_point(&p.manifold, x)?;
    let r = p.manifold.r;
    let mut egrad = Matrix::zeros(p.n, r);
    let scale = 2.0 / batch.len() as f64;
    for &i in &batch.indices {
        let (a, residuals) = column_residual(p, x, i)?;
        for (row, e) in residuals {
            for k in 0..r {
                egrad[(row, k)] += scale * e * a[k];
            }
        }
    }
    project(x, &egrad)
}

/// Root mean squared prediction error over holdout triplets, with per-column
/// coefficients fit from the training observations only. The fit here is the
/// plain least-squares (pseudo-inverse) solution: the ridge weight shapes the
/// training objective, not the reported prediction quality. Columns without
/// any training data are skipped; their count is returned alongside the RMSE.
pub fn mc_rmse(
    p: &McProblem,
    x: &ManifoldPoint,
    holdout: &[(usize, usize, f64)],
) -> Result<(f64, usize)> {
    check_point(&p.manifold, x)?;
    let mut coeffs: Vec<Option<Vector>> = vec![None; p.num_cols()];
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut cold = 0usize;
    for &(row, col, val) in holdout {
        if col >= p.num_cols() || p.cols[col].is_empty() {
            cold += 1;
            continue;
        }
        if coeffs[col].is_none() {
            coeffs[col] = Some(solve_coefficients_ls(p, x, col)?);
        }
        let a = coeffs[col].as_ref().unwrap();
        let pred = x.u.row(row).transpose().dot(a);
        acc += (pred - val) * (pred - val);
        count += 1;
    }
    if count == 0 {
        return Err(Error::ColdColumn(holdout.first().map(|t| t.1).unwrap_or(0)));
    }
    Ok(((acc / count as f64).sqrt(), cold))
}

// ---------------------------------------------------------------------------
// Finite-difference checking

/// Central-difference check of a Riemannian gradient along one direction.
/// Returns |fd − ⟨grad, η⟩| / max(1, |fd|).
pub fn fd_directional_check<C>(
    cost: C,
    grad: &TangentVector,
    x: &ManifoldPoint,
    eta: &TangentVector,
    h: f64,
) -> Result<f64>
where
    C: Fn(&ManifoldPoint) -> Result<f64>,
{
    let plus = retract(
        x,
        &TangentVector {
            at: x.clone(),
            xi: &eta.xi * h,
        },
    )?;
    let minus = retract(
        x,
        &TangentVector {
            at: x.clone(),
            xi: &eta.xi * (-h),
        },
    )?;
    let fd = (cost(&plus)? - cost(&minus)?) / (2.0 * h);
    let dd = inner(grad, eta)?;
    Ok((fd - dd).abs() / fd.abs().max(1.0))
}
