//! Lowest eigenpairs of assembled Hamiltonians and grid extrapolation.
//!
//! The iterative solver is a thick-restart Lanczos method with full (two-pass)
//! reorthogonalization, run in the orthonormal coordinates of the stored
//! matrix. A dense solver serves as the reference for small problems.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::FockVector;
use crate::hamiltonian::{hermiticity_defect, SparseHermitian};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Largest dimension accepted by [`dense_eigenpairs`].
pub const DENSE_LIMIT: usize = 2000;

/// Default seed of the Lanczos start vector.
pub const DEFAULT_SEED: u64 = 42;

/// Knobs of the iterative eigensolver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Absolute residual bound `‖A x − E x‖` for unit `x`.
    pub tol: f64,
    /// Maximum number of restarts.
    pub max_restarts: usize,
    /// Krylov basis size; 0 picks a size from `k`.
    pub basis_size: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_restarts: 2000, basis_size: 0, seed: DEFAULT_SEED }
    }
}

/// Converged eigenpairs, ascending.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<FockVector>,
    /// `‖A x − E x‖` recomputed by a direct matrix-vector product.
    pub residuals: Vec<f64>,
    /// Matrix-vector products spent.
    pub iterations: usize,
}

/// `⟨a, b⟩` with four independent accumulators.
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let (mut re, mut im) = ([0.0; 4], [0.0; 4]);
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(ZERO, |acc, (x, y)| acc + x.conj() * y);
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            re[k] += x[k].re * y[k].re + x[k].im * y[k].im;
            im[k] += x[k].re * y[k].im - x[k].im * y[k].re;
        }
    }
    Complex64::new(re.iter().sum::<f64>(), im.iter().sum::<f64>()) + tail
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rows per block in the blocked passes over the Krylov basis.
const BLOCK: usize = 256;

/// Orthogonalizes `w` against `basis` by classical Gram-Schmidt applied twice;
/// returns the accumulated coefficients. The first update is fused with the
/// second projection, so the basis is streamed three times in row blocks.
fn orthogonalize(basis: &[Vec<Complex64>], w: &mut [Complex64]) -> Vec<Complex64> {
    let dim = w.len();
    let mut first = vec![ZERO; basis.len()];
    let mut second = vec![ZERO; basis.len()];
    for lo in (0..dim).step_by(BLOCK) {
        let hi = (lo + BLOCK).min(dim);
        for (c, v) in first.iter_mut().zip(basis) {
            *c += dot(&v[lo..hi], &w[lo..hi]);
        }
    }
    for lo in (0..dim).step_by(BLOCK) {
        let hi = (lo + BLOCK).min(dim);
        for (c, v) in first.iter().zip(basis) {
            axpy(-c, &v[lo..hi], &mut w[lo..hi]);
        }
        for (c, v) in second.iter_mut().zip(basis) {
            *c += dot(&v[lo..hi], &w[lo..hi]);
        }
    }
    for lo in (0..dim).step_by(BLOCK) {
        let hi = (lo + BLOCK).min(dim);
        for (c, v) in second.iter().zip(basis) {
            axpy(-c, &v[lo..hi], &mut w[lo..hi]);
        }
    }
    first.iter().zip(&second).map(|(a, b)| a + b).collect()
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let mut v: Vec<Complex64> =
        (0..dim).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|z| *z /= nv);
    v
}

/// Normalized `Σ_j y[(j, i)] basis[j]` for `i < count`, in one row-blocked pass over the basis.
fn ritz_vectors(basis: &[Vec<Complex64>], y: &DMatrix<Complex64>, count: usize) -> Vec<Vec<Complex64>> {
    let dim = basis[0].len();
    let mut out = vec![vec![ZERO; dim]; count];
    for lo in (0..dim).step_by(BLOCK) {
        let hi = (lo + BLOCK).min(dim);
        for (j, v) in basis.iter().enumerate() {
            let v = &v[lo..hi];
            for (i, x) in out.iter_mut().enumerate() {
                axpy(y[(j, i)], v, &mut x[lo..hi]);
            }
        }
    }
    for x in &mut out {
        let nx = norm(x);
        x.iter_mut().for_each(|z| *z /= nx);
    }
    out
}

/// Eigenvalues (ascending) and eigenvectors (columns) of the Hermitian part of `h`.
pub fn hermitian_eigen(h: &DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = h.nrows();
    let herm = faer::Mat::<Complex64>::from_fn(n, n, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5);
    let eig = herm
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::NoConvergence { iterations: 0, residual: f64::NAN })?;
    let (values, vectors) = (eig.S(), eig.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].re.total_cmp(&values[b].re));
    Ok((order.iter().map(|&i| values[i].re).collect(), DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])])))
}

/// Packs unit orthonormal-coordinate vectors into a result with post-hoc residuals.
fn finish(
    a: &SparseHermitian,
    values: Vec<f64>,
    vectors: Vec<Vec<Complex64>>,
    iterations: usize,
) -> Result<SpectralResult> {
    let mut residuals = Vec::with_capacity(values.len());
    let mut eigenvectors = Vec::with_capacity(values.len());
    let mut ax = vec![ZERO; a.dim()];
    for (x, &e) in vectors.iter().zip(&values) {
        a.apply(x, &mut ax);
        let rayleigh = dot(x, &ax);
        let scale = 1.0 + e.abs();
        if rayleigh.im.abs() > 1e-10 * scale {
            return Err(Error::InvalidParameter(format!(
                "Rayleigh quotient has imaginary part {:.3e}; matrix is not Hermitian",
                rayleigh.im
            )));
        }
        let r = ax.iter().zip(x).map(|(y, xi)| (y - xi * e).norm_sqr()).sum::<f64>().sqrt();
        residuals.push(r);
        eigenvectors.push(FockVector::from_orthonormal(a.space().clone(), x)?);
    }
    Ok(SpectralResult { eigenvalues: values, eigenvectors, residuals, iterations })
}

/// The `k` lowest eigenpairs by thick-restart Lanczos.
pub fn lowest_eigenpairs(a: &SparseHermitian, k: usize, opts: &SolverOptions) -> Result<SpectralResult> {
    let dim = a.dim();
    if k == 0 || k > dim {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= {dim}, got k={k}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let m = if opts.basis_size == 0 { (2 * k + 30).max(40) } else { opts.basis_size.max(k + 2) };
    let m = m.min(dim);
    let keep = (k + (m - k) / 2).min(m - 1).max(k.min(m - 1));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Vec<Complex64>> = vec![random_unit(dim, &mut rng)];
    // h[(i, j)] = <v_i, A v_j>; row m holds the coupling to the residual vector
    let mut h = DMatrix::from_element(m + 1, m, ZERO);
    let mut start = 0;
    let mut matvecs = 0;
    let mut w = vec![ZERO; dim];
    let mut worst = f64::INFINITY;

    for _restart in 0..=opts.max_restarts {
        let mut size = m;
        for j in start..m {
            a.apply(&basis[j], &mut w);
            matvecs += 1;
            let coeffs = orthogonalize(&basis, &mut w);
            for (i, c) in coeffs.iter().enumerate() {
                h[(i, j)] = *c;
            }
            let beta = norm(&w);
            let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
            if beta <= 1e-13 * scale {
                if basis.len() == dim {
                    // the basis spans the whole space: Ritz pairs are exact
                    size = j + 1;
                    h[(j + 1, j)] = ZERO;
                    break;
                }
                let mut fresh = random_unit(dim, &mut rng);
                orthogonalize(&basis, &mut fresh);
                let nf = norm(&fresh);
                fresh.iter_mut().for_each(|z| *z /= nf);
                h[(j + 1, j)] = ZERO;
                basis.push(fresh);
            } else {
                h[(j + 1, j)] = Complex64::new(beta, 0.0);
                w.iter_mut().for_each(|z| *z /= beta);
                basis.push(w.clone());
            }
        }

        let (theta, y) = hermitian_eigen(&h.view((0, 0), (size, size)).into_owned())?;
        let tail: Vec<Complex64> = (0..size).map(|j| h[(size, j)]).collect();
        let estimate = |i: usize| -> f64 { (0..size).fold(ZERO, |acc, j| acc + tail[j] * y[(j, i)]).norm() };
        worst = (0..k).map(estimate).fold(0.0, f64::max);

        if worst <= opts.tol || size < m {
            let vectors = ritz_vectors(&basis[..size], &y, k);
            let result = finish(a, theta[..k].to_vec(), vectors, matvecs)?;
            let post = result.residuals.iter().cloned().fold(0.0, f64::max);
            if post <= opts.tol {
                return Ok(result);
            }
            worst = post;
            if size < m {
                break;
            }
            // estimates and direct residuals disagree: keep iterating
        }

        // thick restart: keep the lowest Ritz vectors and the residual direction
        let kept = ritz_vectors(&basis[..size], &y, keep);
        let residual = basis.pop().unwrap();
        let coupling: Vec<Complex64> =
            (0..keep).map(|i| (0..size).fold(ZERO, |acc, j| acc + tail[j] * y[(j, i)])).collect();
        basis = kept;
        // re-orthogonalize the residual direction against the kept vectors for safety
        let mut r = residual;
        orthogonalize(&basis, &mut r);
        let nr = norm(&r);
        r.iter_mut().for_each(|z| *z /= nr);
        basis.push(r);
        h.fill(ZERO);
        for i in 0..keep {
            h[(i, i)] = Complex64::new(theta[i], 0.0);
            h[(keep, i)] = coupling[i];
        }
        start = keep;
    }
    Err(Error::NoConvergence { iterations: matvecs, residual: worst })
}

/// All eigenpairs by dense diagonalization, truncated to the lowest `k`.
pub fn dense_eigenpairs(a: &SparseHermitian, k: usize) -> Result<SpectralResult> {
    let dim = a.dim();
    if dim > DENSE_LIMIT {
        return Err(Error::InvalidParameter(format!(
            "dense diagonalization limited to dimension {DENSE_LIMIT}, got {dim}"
        )));
    }
    if k == 0 || k > dim {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= {dim}, got k={k}")));
    }
    let defect = hermiticity_defect(a);
    if defect > 1e-10 {
        return Err(Error::InvalidParameter(format!("matrix is not Hermitian (defect {defect:.3e})")));
    }
    let (values, vectors) = hermitian_eigen(&a.to_dense())?;
    let cols = (0..k).map(|i| vectors.column(i).iter().cloned().collect()).collect();
    finish(a, values[..k].to_vec(), cols, 0)
}

/// Convergence model for [`richardson_extrapolate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Order {
    /// `value(h) = L + c·h^p` with `p` given.
    Fixed { p: f64 },
    /// `p` solved from the three finest samples, then a fixed-order fit.
    Fitted,
    /// `value(h) = L + Σ c_i h^{p_i}`.
    Series { powers: Vec<f64> },
}

impl Default for Order {
    fn default() -> Self {
        Order::Fixed { p: 1.0 }
    }
}

/// Outcome of a grid extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: f64,
    /// Root-mean-square misfit of the least-squares model.
    pub residual: f64,
    /// Exponents used in the fit.
    pub powers: Vec<f64>,
    pub coefficients: Vec<f64>,
}

fn least_squares(samples: &[(f64, f64)], powers: &[f64]) -> Result<Extrapolation> {
    let n = samples.len();
    let cols = powers.len() + 1;
    if n < cols {
        return Err(Error::InvalidParameter(format!("{n} samples cannot determine {cols} unknowns")));
    }
    let design = DMatrix::from_fn(n, cols, |r, c| if c == 0 { 1.0 } else { samples[r].0.powf(powers[c - 1]) });
    let rhs = nalgebra::DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return Err(Error::InvalidParameter("degenerate sample set for extrapolation".into()));
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|e| Error::InvalidParameter(format!("least-squares solve failed: {e}")))?;
    let misfit = &design * &sol - rhs;
    Ok(Extrapolation {
        limit: sol[0],
        residual: (misfit.norm_squared() / n as f64).sqrt(),
        powers: powers.to_vec(),
        coefficients: sol.iter().skip(1).cloned().collect(),
    })
}

/// Order `p` such that `L + c h^p` passes through three samples.
fn fitted_order(s: &[(f64, f64)]) -> Result<f64> {
    let ratio = (s[0].1 - s[1].1) / (s[1].1 - s[2].1);
    if !ratio.is_finite() || s[1].1 == s[2].1 {
        return Err(Error::InvalidParameter("cannot fit an order to flat samples".into()));
    }
    let model = |p: f64| (s[0].0.powf(p) - s[1].0.powf(p)) / (s[1].0.powf(p) - s[2].0.powf(p));
    let (mut lo, mut hi) = (1e-3, 12.0);
    let f = |p: f64| model(p) - ratio;
    if f(lo).signum() == f(hi).signum() {
        return Err(Error::InvalidParameter(format!("no convergence order explains the sample ratio {ratio}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid).signum() == f(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Least-squares extrapolation of `value(h)` to `h → 0`.
pub fn richardson_extrapolate(samples: &[(f64, f64)], order: &Order) -> Result<Extrapolation> {
    if samples.len() < 3 {
        return Err(Error::InvalidParameter("extrapolation needs at least 3 samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::InvalidParameter("extrapolation samples need distinct h".into()));
        }
    }
    if sorted.iter().any(|s| !(s.0 > 0.0) || !s.1.is_finite()) {
        return Err(Error::InvalidParameter("extrapolation needs h > 0 and finite values".into()));
    }
    match order {
        Order::Fixed { p } => least_squares(&sorted, &[*p]),
        Order::Series { powers } => least_squares(&sorted, powers),
        Order::Fitted => {
            let p = fitted_order(&sorted[sorted.len() - 3..])?;
            least_squares(&sorted, &[p])
        }
    }
}
