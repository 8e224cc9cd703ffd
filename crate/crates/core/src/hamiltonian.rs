//! Sparse assembly of every Hamiltonian variant on the reduced Fock space.
//!
//! Matrices are stored in the coordinates `x = G^{1/2} v`, where `v` are the
//! reduced amplitudes of [`FockVector`] and `G` the diagonal Fock weights, so
//! that Hermiticity with respect to the discrete Fock inner product is plain
//! entrywise Hermiticity of the stored matrix.
//!
//! The boundary node of every coordinate is never an unknown. Its value is
//! eliminated through the interior–boundary condition,
//! `v^{(m)}(S ∪ {0}) = lower · v^{(m-1)}(S) + same · v^{(m)}(S ∪ {1})`,
//! and the boundary derivative is the one-sided difference
//! `(v^{(m)}(S ∪ {1}) − v^{(m)}(S ∪ {0})) / h`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{occupations, without_one, FockSpace, FockVector, ModelParams};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Tolerance of the Robin admissibility conditions.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Which interior–boundary condition links sector `n+1` to sector `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IbcSpec {
    /// `lim r ψ^{(n+1)} = −g/(2π√(n+1)) ψ^{(n)}`.
    Dirichlet,
    /// `lim ∂_r(r ψ^{(n+1)}) = g/(2π√(n+1)) ψ^{(n)}`.
    Neumann,
    /// `lim (α + β∂_r)(r ψ^{(n+1)}) = 2/√(n+1) ψ^{(n)}` with creation term
    /// `√(n+1) ∫dω (γ + δ∂_r)(r ψ^{(n+1)})`.
    Robin { alpha: Complex64, beta: Complex64, gamma: Complex64, delta: Complex64 },
}

impl IbcSpec {
    /// Robin coefficients that reproduce the Dirichlet-type condition.
    pub fn dirichlet_as_robin(g: f64) -> Self {
        IbcSpec::Robin { alpha: real(-4.0 * PI / g), beta: ZERO, gamma: ZERO, delta: real(g / (4.0 * PI)) }
    }

    /// Robin coefficients that reproduce the Neumann-type condition.
    pub fn neumann_as_robin(g: f64) -> Self {
        IbcSpec::Robin { alpha: ZERO, beta: real(4.0 * PI / g), gamma: real(g / (4.0 * PI)), delta: ZERO }
    }
}

/// UV-regularized variants of the point source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CutoffSpec {
    /// Emission and absorption on the sphere of the given radius.
    Shell { radius: f64 },
    /// Source smeared with a real radial charge density.
    Smeared { profile: SmearProfile },
}

/// Radial profile φ(r) of a smeared source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum SmearProfile {
    /// Normalized 3D Gaussian `(2πσ²)^{-3/2} exp(−r²/2σ²)`.
    Gaussian { sigma: f64 },
    /// Values at interior nodes `1..=M`.
    Sampled { values: Vec<Complex64> },
}

impl SmearProfile {
    pub fn gaussian(sigma: f64) -> Self {
        SmearProfile::Gaussian { sigma }
    }

    pub fn eval_gaussian(sigma: f64, r: f64) -> f64 {
        (2.0 * PI * sigma * sigma).powf(-1.5) * (-r * r / (2.0 * sigma * sigma)).exp()
    }
}

/// Per-condition outcome of the Robin admissibility test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobinReport {
    /// `Im(conj(α)γ)`.
    pub alpha_gamma_imag: f64,
    /// `Im(conj(β)δ)`.
    pub beta_delta_imag: f64,
    /// `conj(α)δ − conj(γ)β + 1`.
    pub determinant_residual: Complex64,
    pub alpha_gamma_real: bool,
    pub beta_delta_real: bool,
    pub determinant_ok: bool,
}

impl RobinReport {
    pub fn admissible(&self) -> bool {
        self.alpha_gamma_real && self.beta_delta_real && self.determinant_ok
    }
}

/// Checks `conj(α)γ ∈ ℝ`, `conj(β)δ ∈ ℝ` and `conj(α)δ − conj(γ)β = −1`.
pub fn robin_admissible(alpha: Complex64, beta: Complex64, gamma: Complex64, delta: Complex64) -> Result<RobinReport> {
    if alpha == ZERO && beta == ZERO {
        return Err(Error::InvalidParameter("Robin condition needs (α, β) ≠ (0, 0)".into()));
    }
    let ag = (alpha.conj() * gamma).im;
    let bd = (beta.conj() * delta).im;
    let det = alpha.conj() * delta - gamma.conj() * beta + ONE;
    Ok(RobinReport {
        alpha_gamma_imag: ag,
        beta_delta_imag: bd,
        determinant_residual: det,
        alpha_gamma_real: ag.abs() <= ADMISSIBILITY_TOL,
        beta_delta_real: bd.abs() <= ADMISSIBILITY_TOL,
        determinant_ok: det.norm() <= ADMISSIBILITY_TOL,
    })
}

/// Draws Robin coefficients that satisfy the admissibility conditions.
///
/// Every tenth draw has `β = 0` and every tenth (offset by one) has `α = 0`;
/// the rest share a common phase, `α = e^{iθ}a`, `β = e^{iθ}b`, with `γ` and `δ`
/// solved from the constraints. Draws with `|a − b/h|` small are rejected so the
/// boundary node stays eliminable on a grid of spacing `h`.
pub fn sample_admissible_robin<R: Rng>(rng: &mut R, index: usize, h: f64) -> IbcSpec {
    let magnitude = |rng: &mut R| -> f64 {
        let m = rng.gen_range(0.5..2.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    };
    let phase = |rng: &mut R| Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI));
    match index % 10 {
        0 => {
            let alpha = phase(rng) * magnitude(rng);
            let u = rng.gen_range(-2.0..2.0);
            IbcSpec::Robin { alpha, beta: ZERO, gamma: alpha * u / alpha.norm_sqr(), delta: -ONE / alpha.conj() }
        }
        1 => {
            let beta = phase(rng) * magnitude(rng);
            let w = rng.gen_range(-2.0..2.0);
            IbcSpec::Robin { alpha: ZERO, beta, gamma: ONE / beta.conj(), delta: beta * w / beta.norm_sqr() }
        }
        _ => loop {
            let rot = phase(rng);
            let (a, b) = (magnitude(rng), magnitude(rng));
            if (a - b / h).abs() < 0.1 * (a.abs() + b.abs() / h) {
                continue;
            }
            let (alpha, beta) = (rot * a, rot * b);
            let u = rng.gen_range(-2.0..2.0);
            let w = beta.norm_sqr() * (u / alpha.norm_sqr() - 1.0 / (a * b));
            break IbcSpec::Robin {
                alpha,
                beta,
                gamma: alpha * u / alpha.norm_sqr(),
                delta: beta * w / beta.norm_sqr(),
            };
        },
    }
}

/// Shifts `conj(α)δ − conj(γ)β` by `eps`, violating the determinant condition.
pub fn perturb_robin(spec: &IbcSpec, eps: f64) -> IbcSpec {
    match *spec {
        IbcSpec::Robin { alpha, beta, gamma, delta } => {
            if alpha != ZERO {
                IbcSpec::Robin { alpha, beta, gamma, delta: delta + eps / alpha.conj() }
            } else {
                IbcSpec::Robin { alpha, beta, gamma: gamma - eps / beta.conj(), delta }
            }
        }
        other => other,
    }
}

/// Elimination of the boundary node of sector `m`:
/// `v(S ∪ {0}) = lower · v^{(m-1)}(S) + same · v(S ∪ {1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryMap {
    pub lower: Complex64,
    pub same: Complex64,
}

/// How probability moves between sectors, used by flux diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    /// Through the constrained boundary node; entry `m` describes sector `m` (entry 0 unused).
    Boundary(Vec<BoundaryMap>),
    /// Through a bulk kernel (smeared source); no boundary flux.
    Bulk,
}

/// Hermitian (for admissible variants) sparse matrix in compressed-row form.
#[derive(Debug, Clone)]
pub struct SparseHermitian {
    space: Arc<FockSpace>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
    coupling: Coupling,
    label: String,
}

impl SparseHermitian {
    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn row(&self, i: usize) -> (&[u32], &[Complex64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => ZERO,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.dim()).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j as usize, v))
        })
    }

    /// `y = A x` in orthonormal coordinates.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        for (i, out) in y.iter_mut().enumerate() {
            let start = self.row_ptr[i];
            let end = self.row_ptr[i + 1];
            let mut acc = ZERO;
            for p in start..end {
                acc += self.vals[p] * x[self.cols[p] as usize];
            }
            *out = acc;
        }
    }

    /// `y = A^H x` in orthonormal coordinates.
    pub fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        for i in 0..self.dim() {
            let (cols, vals) = self.row(i);
            for (&j, v) in cols.iter().zip(vals) {
                y[j as usize] += v.conj() * x[i];
            }
        }
    }

    /// Applies the Hamiltonian to reduced amplitudes.
    pub fn apply_vector(&self, v: &FockVector) -> Result<FockVector> {
        if !(Arc::ptr_eq(v.space(), &self.space) || **v.space() == *self.space) {
            return Err(Error::ShapeMismatch("vector and matrix live on different spaces".into()));
        }
        let x = v.to_orthonormal();
        let mut y = vec![ZERO; self.dim()];
        self.apply(&x, &mut y);
        FockVector::from_orthonormal(self.space.clone(), &y)
    }

    /// `<v, A v>` in the Fock inner product.
    pub fn expectation(&self, v: &FockVector) -> Result<Complex64> {
        let hv = self.apply_vector(v)?;
        crate::fock::inner_product(v, &hv)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut dense = DMatrix::from_element(self.dim(), self.dim(), ZERO);
        for (i, j, v) in self.triplets() {
            dense[(i, j)] = v;
        }
        dense
    }

    /// Largest `|n − n'|` over nonzero blocks.
    pub fn max_sector_jump(&self) -> usize {
        self.triplets()
            .filter(|(_, _, v)| *v != ZERO)
            .map(|(i, j, _)| self.space.sector_of(i).abs_diff(self.space.sector_of(j)))
            .max()
            .unwrap_or(0)
    }

    /// True when no stored entry has an imaginary part.
    pub fn is_real(&self) -> bool {
        self.vals.iter().all(|v| v.im == 0.0)
    }
}

/// `max |A_ij − conj(A_ji)|` over stored entries.
pub fn hermiticity_defect(a: &SparseHermitian) -> f64 {
    a.triplets().map(|(i, j, v)| (v - a.get(j, i).conj()).norm()).fold(0.0, f64::max)
}

/// Triplet accumulator; duplicates are summed when compressed.
struct Coo {
    dim: usize,
    entries: Vec<(u32, u32, Complex64)>,
}

impl Coo {
    fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    fn push(&mut self, i: usize, j: usize, v: Complex64) {
        if v != ZERO {
            self.entries.push((i as u32, j as u32, v));
        }
    }

    /// Adds `coef · |Σ a_p x_p|²` to the Hermitian form.
    fn add_square(&mut self, coef: f64, terms: &[(usize, Complex64)]) {
        for &(p, a) in terms {
            for &(q, b) in terms {
                self.push(p, q, a.conj() * b * coef);
            }
        }
    }

    /// Compresses with entries rescaled by `scale(i, j)`.
    fn into_csr<F: Fn(usize, usize) -> f64>(mut self, scale: F) -> (Vec<usize>, Vec<u32>, Vec<Complex64>) {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.dim + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(u32, u32)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i as usize + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        for i in 0..self.dim {
            for p in row_ptr[i]..row_ptr[i + 1] {
                vals[p] *= scale(i, cols[p] as usize);
            }
        }
        (row_ptr, cols, vals)
    }
}

fn check_model(model: &ModelParams, space: &FockSpace) -> Result<()> {
    model.validate()?;
    if model.n_max != space.n_max() {
        return Err(Error::ShapeMismatch(format!(
            "model has n_max={} but the basis list has {} sectors",
            model.n_max,
            space.n_max() + 1
        )));
    }
    Ok(())
}

/// Dirichlet-type IBC matrix from the discrete quadratic form
///
/// ```text
/// Q(v) = Σ_m [ Σ_coords Σ_{k=0}^{M} (h/2) |(v_{k+1} − v_k)/h|² + m E0 ‖v^{(m)}‖² ]
/// ```
///
/// with the node-0 amplitude replaced by `boundary_ratio · v^{(m-1)}` and the far
/// wall set to zero. The creation and annihilation terms appear as the cross
/// terms of the substituted boundary differences.
fn assemble_dirichlet_form(model: &ModelParams, space: &Arc<FockSpace>, label: &str) -> Result<SparseHermitian> {
    check_model(model, space)?;
    let h = space.grid().h;
    let gram = space.gram();
    let mut coo = Coo::new(space.dim());
    let mut scratch = Vec::new();
    let mut maps = vec![BoundaryMap { lower: ZERO, same: ZERO }];

    for m in 1..=space.n_max() {
        let c = real(model.boundary_ratio(m - 1));
        maps.push(BoundaryMap { lower: c, same: ZERO });
        let upper = space.sector(m);
        let lower = space.sector(m - 1);
        let top = upper.nodes() as u32;
        let (lo_off, up_off) = (space.offset(m - 1), space.offset(m));
        for (si, rest) in lower.iter().enumerate() {
            if rest.iter().any(|&a| a > top) {
                continue;
            }
            let coef = m as f64 * h.powi(m as i32 - 2) * lower.weight(si) / 2.0;
            let node = |k: u32, scratch: &mut Vec<u32>| -> Option<(usize, Complex64)> {
                if k == 0 {
                    Some((lo_off + si, c))
                } else if k > top {
                    None
                } else {
                    upper.index_with(rest, k, scratch).map(|t| (up_off + t, ONE))
                }
            };
            for k in 0..=top {
                let mut terms: [(usize, Complex64); 2] = [(0, ZERO); 2];
                let mut len = 0;
                if let Some((p, a)) = node(k + 1, &mut scratch) {
                    terms[len] = (p, a);
                    len += 1;
                }
                if let Some((p, a)) = node(k, &mut scratch) {
                    terms[len] = (p, -a);
                    len += 1;
                }
                coo.add_square(coef, &terms[..len]);
            }
        }
    }
    for n in 1..=space.n_max() {
        for i in space.sector_range(n) {
            coo.push(i, i, real(n as f64 * model.e0 * gram[i]));
        }
    }

    let (row_ptr, cols, vals) = coo.into_csr(|i, j| 1.0 / (gram[i] * gram[j]).sqrt());
    Ok(SparseHermitian {
        space: space.clone(),
        row_ptr,
        cols,
        vals,
        coupling: Coupling::Boundary(maps),
        label: label.into(),
    })
}

/// Boundary treatment of one sector pair in the operator route.
#[derive(Debug, Clone, Copy)]
struct BoundaryCoupling {
    map: BoundaryMap,
    /// Coefficient of `v(S ∪ {0})` in `(Hv)^{(m-1)}(S)`.
    value: Complex64,
    /// Coefficient of the boundary derivative in `(Hv)^{(m-1)}(S)`.
    slope: Complex64,
}

/// Builds `H` row by row in amplitude coordinates and symmetrizes with the Fock weights.
fn assemble_boundary_operator(
    model: &ModelParams,
    space: &Arc<FockSpace>,
    couplings: &[BoundaryCoupling],
    label: &str,
) -> SparseHermitian {
    let h = space.grid().h;
    let kin = 0.5 / (h * h);
    let mut coo = Coo::new(space.dim());
    let mut scratch = Vec::new();
    let mut rest = Vec::new();

    for m in 0..=space.n_max() {
        let basis = space.sector(m);
        let off = space.offset(m);
        let top = basis.nodes() as u32;
        for (ti, entry) in basis.iter().enumerate() {
            let row = off + ti;
            let mut diag = real(m as f64 * model.e0);
            for (k, mult) in occupations(entry) {
                let mu = mult as f64;
                diag += 2.0 * kin * mu;
                if k < top {
                    let j = basis.index_replacing(entry, k, k + 1, &mut scratch).unwrap();
                    coo.push(row, off + j, real(-kin * mu));
                }
                if k > 1 {
                    let j = basis.index_replacing(entry, k, k - 1, &mut scratch).unwrap();
                    coo.push(row, off + j, real(-kin * mu));
                } else {
                    // neighbor is the boundary node: substitute the IBC
                    let bc = couplings[m].map;
                    without_one(entry, 1, &mut rest);
                    let s = space.sector(m - 1).index_of(&rest).unwrap();
                    coo.push(row, space.offset(m - 1) + s, -kin * mu * bc.lower);
                    diag += -kin * mu * bc.same;
                }
            }
            coo.push(row, row, diag);

            if m < space.n_max() {
                let upper = space.sector(m + 1);
                if entry.iter().all(|&a| a as usize <= upper.nodes()) {
                    let bc = couplings[m + 1];
                    let t = upper.index_with(entry, 1, &mut scratch).unwrap();
                    // value·v0 + slope·(v1 − v0)/h with v0 = lower·v^{(m)} + same·v1
                    let on_v0 = bc.value - bc.slope / h;
                    coo.push(row, row, on_v0 * bc.map.lower);
                    coo.push(row, space.offset(m + 1) + t, on_v0 * bc.map.same + bc.slope / h);
                }
            }
        }
    }

    let gram = space.gram();
    let (row_ptr, cols, vals) = coo.into_csr(|i, j| (gram[i] / gram[j]).sqrt());
    SparseHermitian {
        space: space.clone(),
        row_ptr,
        cols,
        vals,
        coupling: Coupling::Boundary(couplings.iter().map(|c| c.map).collect()),
        label: label.into(),
    }
}

fn robin_couplings(
    model: &ModelParams,
    space: &FockSpace,
    alpha: Complex64,
    beta: Complex64,
    gamma: Complex64,
    delta: Complex64,
) -> Result<Vec<BoundaryCoupling>> {
    let h = space.grid().h;
    let mut out = vec![BoundaryCoupling { map: BoundaryMap { lower: ZERO, same: ZERO }, value: ZERO, slope: ZERO }];
    let pivot = alpha - beta / h;
    if pivot.norm() < 1e-14 * (alpha.norm() + beta.norm() / h) {
        return Err(Error::InvalidParameter(
            "α − β/h vanishes: the boundary node cannot be eliminated on this grid".into(),
        ));
    }
    let _ = model;
    for m in 1..=space.n_max() {
        let mf = m as f64;
        // reduced IBC right-hand side and creation prefactor for sector m-1 → m
        let rhs = 4.0 * PI.sqrt() / mf.sqrt();
        let pre = 2.0 * PI.sqrt() * mf.sqrt();
        out.push(BoundaryCoupling {
            map: BoundaryMap { lower: rhs / pivot, same: -(beta / h) / pivot },
            value: gamma * pre,
            slope: delta * pre,
        });
    }
    Ok(out)
}

/// Neumann-type IBC written out directly: `v(S ∪ {0}) = v(S ∪ {1}) − h·(g/√(πm))·v^{(m-1)}(S)`
/// and the creation term `g√m/(2√π) · v(S ∪ {0})`.
fn assemble_neumann(model: &ModelParams, space: &Arc<FockSpace>) -> SparseHermitian {
    let h = space.grid().h;
    let kin = 0.5 / (h * h);
    let g = model.g;
    let mut coo = Coo::new(space.dim());
    let mut scratch = Vec::new();
    let mut rest = Vec::new();
    let mut maps = vec![BoundaryMap { lower: ZERO, same: ZERO }];
    for m in 1..=space.n_max() {
        let slope = g / (PI * m as f64).sqrt();
        maps.push(BoundaryMap { lower: real(-h * slope), same: ONE });
    }

    for m in 0..=space.n_max() {
        let basis = space.sector(m);
        let off = space.offset(m);
        let top = basis.nodes() as u32;
        for (ti, entry) in basis.iter().enumerate() {
            let row = off + ti;
            let mut diag = m as f64 * model.e0;
            for (k, mult) in occupations(entry) {
                let mu = mult as f64;
                if k < top {
                    let j = basis.index_replacing(entry, k, k + 1, &mut scratch).unwrap();
                    coo.push(row, off + j, real(-kin * mu));
                }
                if k > 1 {
                    diag += 2.0 * kin * mu;
                    let j = basis.index_replacing(entry, k, k - 1, &mut scratch).unwrap();
                    coo.push(row, off + j, real(-kin * mu));
                } else {
                    // −(v2 − 2v1 + v0)/2h² with v0 = v1 − h·slope·v^{(m-1)}
                    diag += kin * mu;
                    let slope = g / (PI * m as f64).sqrt();
                    without_one(entry, 1, &mut rest);
                    let s = space.sector(m - 1).index_of(&rest).unwrap();
                    coo.push(row, space.offset(m - 1) + s, real(kin * mu * h * slope));
                }
            }
            if m < space.n_max() {
                let upper = space.sector(m + 1);
                if entry.iter().all(|&a| a as usize <= upper.nodes()) {
                    let mf = (m + 1) as f64;
                    let pre = g * mf.sqrt() / (2.0 * PI.sqrt());
                    let slope = g / (PI * mf).sqrt();
                    let t = upper.index_with(entry, 1, &mut scratch).unwrap();
                    coo.push(row, space.offset(m + 1) + t, real(pre));
                    diag -= pre * h * slope;
                }
            }
            coo.push(row, row, real(diag));
        }
    }

    let gram = space.gram();
    let (row_ptr, cols, vals) = coo.into_csr(|i, j| (gram[i] / gram[j]).sqrt());
    SparseHermitian {
        space: space.clone(),
        row_ptr,
        cols,
        vals,
        coupling: Coupling::Boundary(maps),
        label: "neumann".into(),
    }
}

fn check_point_grid(space: &FockSpace) -> Result<()> {
    if space.grid().r_min != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "point-source assembly needs r_min = 0, got {}",
            space.grid().r_min
        )));
    }
    Ok(())
}

/// IBC Hamiltonian of the requested kind. Robin coefficients must be admissible.
pub fn assemble_ibc(model: &ModelParams, spec: &IbcSpec, space: &Arc<FockSpace>) -> Result<SparseHermitian> {
    check_point_grid(space)?;
    check_model(model, space)?;
    match *spec {
        IbcSpec::Dirichlet => assemble_dirichlet_form(model, space, "dirichlet"),
        IbcSpec::Neumann => Ok(assemble_neumann(model, space)),
        IbcSpec::Robin { alpha, beta, gamma, delta } => {
            let report = robin_admissible(alpha, beta, gamma, delta)?;
            if !report.admissible() {
                return Err(Error::Inadmissible(format!("{report:?}")));
            }
            assemble_robin_unchecked(model, alpha, beta, gamma, delta, space)
        }
    }
}

/// Robin assembly without the admissibility gate, for auditing what goes wrong
/// when the conditions are violated.
pub fn assemble_robin_unchecked(
    model: &ModelParams,
    alpha: Complex64,
    beta: Complex64,
    gamma: Complex64,
    delta: Complex64,
    space: &Arc<FockSpace>,
) -> Result<SparseHermitian> {
    check_point_grid(space)?;
    check_model(model, space)?;
    robin_admissible(alpha, beta, gamma, delta)?;
    let couplings = robin_couplings(model, space, alpha, beta, gamma, delta)?;
    Ok(assemble_boundary_operator(model, space, &couplings, "robin"))
}

/// Dirichlet-type IBC imposed on the sphere of radius `radius`; the grid must start there.
pub fn assemble_shell(model: &ModelParams, radius: f64, space: &Arc<FockSpace>) -> Result<SparseHermitian> {
    let grid = space.grid();
    if !(radius >= grid.h * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!("shell radius {radius} is below the grid spacing {}", grid.h)));
    }
    if (grid.r_min - radius).abs() > 1e-12 * radius.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "shell grid must start at the shell (r_min={}, radius={radius})",
            grid.r_min
        )));
    }
    assemble_dirichlet_form(model, space, "shell")
}

/// Reduced smearing kernel `√(4π) r_k φ(r_k)` at interior nodes.
pub fn smearing_kernel(profile: &SmearProfile, space: &FockSpace) -> Result<Vec<f64>> {
    let grid = space.grid();
    let m = grid.nodes;
    let phi: Vec<Complex64> = match profile {
        SmearProfile::Gaussian { sigma } => {
            if !(*sigma > 0.0) {
                return Err(Error::InvalidParameter(format!("smearing width σ={sigma} must be positive")));
            }
            (1..=m).map(|k| real(SmearProfile::eval_gaussian(*sigma, grid.position(k)))).collect()
        }
        SmearProfile::Sampled { values } => {
            if values.len() != m {
                return Err(Error::ShapeMismatch(format!("{} profile samples for {m} grid nodes", values.len())));
            }
            values.clone()
        }
    };
    if phi.iter().any(|p| p.im != 0.0) {
        return Err(Error::InvalidParameter("smearing profile must be real".into()));
    }
    if phi.iter().any(|p| !p.re.is_finite()) {
        return Err(Error::InvalidParameter("smearing profile must be finite".into()));
    }
    Ok(phi.iter().enumerate().map(|(i, p)| (4.0 * PI).sqrt() * grid.position(i + 1) * p.re).collect())
}

/// Cutoff Hamiltonian `H_φ` with a smeared source; the radial amplitude vanishes at r = 0.
pub fn assemble_smeared(
    model: &ModelParams,
    profile: &SmearProfile,
    space: &Arc<FockSpace>,
) -> Result<SparseHermitian> {
    check_point_grid(space)?;
    check_model(model, space)?;
    let kernel = smearing_kernel(profile, space)?;
    let h = space.grid().h;
    let kin = 0.5 / (h * h);
    let g = model.g;
    let mut coo = Coo::new(space.dim());
    let mut scratch = Vec::new();
    let mut rest = Vec::new();

    for m in 0..=space.n_max() {
        let basis = space.sector(m);
        let off = space.offset(m);
        let top = basis.nodes() as u32;
        for (ti, entry) in basis.iter().enumerate() {
            let row = off + ti;
            let mut diag = m as f64 * model.e0;
            for (k, mult) in occupations(entry) {
                let mu = mult as f64;
                diag += 2.0 * kin * mu;
                if k < top {
                    let j = basis.index_replacing(entry, k, k + 1, &mut scratch).unwrap();
                    coo.push(row, off + j, real(-kin * mu));
                }
                if k > 1 {
                    let j = basis.index_replacing(entry, k, k - 1, &mut scratch).unwrap();
                    coo.push(row, off + j, real(-kin * mu));
                }
                // annihilation: (g/√m) Σ_j f(r_j) v^{(m-1)}(without j)
                without_one(entry, k, &mut rest);
                let s = space.sector(m - 1).index_of(&rest).unwrap();
                let amp = g / (m as f64).sqrt() * mu * kernel[k as usize - 1];
                coo.push(row, space.offset(m - 1) + s, real(amp));
            }
            coo.push(row, row, real(diag));

            if m < space.n_max() {
                let upper = space.sector(m + 1);
                if entry.iter().all(|&a| a as usize <= upper.nodes()) {
                    // creation: g√(m+1) Σ_k h f_k v^{(m+1)}(T ∪ {k})
                    let pre = g * ((m + 1) as f64).sqrt() * h;
                    for k in 1..=upper.nodes() as u32 {
                        let t = upper.index_with(entry, k, &mut scratch).unwrap();
                        coo.push(row, space.offset(m + 1) + t, real(pre * kernel[k as usize - 1]));
                    }
                }
            }
        }
    }

    let gram = space.gram();
    let (row_ptr, cols, vals) = coo.into_csr(|i, j| (gram[i] / gram[j]).sqrt());
    Ok(SparseHermitian { space: space.clone(), row_ptr, cols, vals, coupling: Coupling::Bulk, label: "smeared".into() })
}

/// Assembles whichever cutoff variant `cutoff` names.
pub fn assemble_cutoff(model: &ModelParams, cutoff: &CutoffSpec, space: &Arc<FockSpace>) -> Result<SparseHermitian> {
    match cutoff {
        CutoffSpec::Shell { radius } => assemble_shell(model, *radius, space),
        CutoffSpec::Smeared { profile } => assemble_smeared(model, profile, space),
    }
}
