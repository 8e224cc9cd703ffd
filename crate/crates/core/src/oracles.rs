//! Closed-form reference values: the dressed single-source ground state, the
//! multi-source ground energy with its Yukawa pair term, the van Hove
//! self-energy of a smeared source, and an analytic residual check of the
//! multi-source ground state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::ModelParams;

/// Closest allowed approach of a sample point to a source.
pub const MIN_CENTER_DISTANCE: f64 = 1e-8;

/// Ground-state data of a single point source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub e_min: f64,
    /// Mean boson number of the Poisson distribution.
    pub lambda_mean: f64,
    pub kappa: f64,
    /// Vacuum amplitude of the normalized ground state.
    pub n_norm: f64,
}

impl GroundTruth {
    /// Poisson ratio `P(n)/P(0) = λⁿ/n!`.
    pub fn poisson_ratio(&self, n: usize) -> f64 {
        (1..=n).fold(1.0, |acc, k| acc * self.lambda_mean / k as f64)
    }
}

fn require_positive_e0(model: &ModelParams) -> Result<()> {
    if !(model.e0 > 0.0) || !model.e0.is_finite() {
        return Err(Error::InvalidParameter(format!("E0 must be positive, got {}", model.e0)));
    }
    if !model.g.is_finite() {
        return Err(Error::InvalidParameter(format!("coupling must be finite, got {}", model.g)));
    }
    Ok(())
}

/// `E_min = g²√(2E0)/(2π)`, `λ = g²/(2π√(2E0))`, `N = exp(−λ/2)`.
pub fn exact_ground(model: &ModelParams) -> Result<GroundTruth> {
    require_positive_e0(model)?;
    let kappa = (2.0 * model.e0).sqrt();
    let g2 = model.g * model.g;
    let lambda_mean = g2 / (2.0 * PI * kappa);
    Ok(GroundTruth { e_min: g2 * kappa / (2.0 * PI), lambda_mean, kappa, n_norm: (-g2 / (4.0 * PI * kappa)).exp() })
}

/// Constant `g²√E0/(4π)` of the cutoff-removal statement.
pub fn renorm_constant(model: &ModelParams) -> f64 {
    model.g * model.g * model.e0.sqrt() / (4.0 * PI)
}

/// Fixed source positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    positions: Vec<[f64; 3]>,
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl CenterSet {
    pub fn new(positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("need at least one source".into()));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("source positions must be finite".into()));
        }
        for i in 0..positions.len() {
            for j in 0..i {
                if distance(&positions[i], &positions[j]) == 0.0 {
                    return Err(Error::InvalidParameter(format!("sources {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { positions })
    }

    /// Two sources on the z axis at distance `r`.
    pub fn pair(r: f64) -> Result<Self> {
        Self::new(vec![[0.0, 0.0, 0.0], [0.0, 0.0, r]])
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn translated(&self, shift: [f64; 3]) -> Self {
        let positions = self.positions.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        Self { positions }
    }
}

/// `E_min = (g²/π)[Nκ/2 − Σ_{i<j} e^{−κR_ij}/R_ij]`.
pub fn two_center_ground(model: &ModelParams, centers: &CenterSet) -> Result<f64> {
    require_positive_e0(model)?;
    let kappa = model.kappa();
    let p = centers.positions();
    let mut pair_sum = 0.0;
    for i in 0..p.len() {
        for j in 0..i {
            let r = distance(&p[i], &p[j]);
            pair_sum += (-kappa * r).exp() / r;
        }
    }
    Ok(model.g * model.g / PI * (p.len() as f64 * kappa / 2.0 - pair_sum))
}

/// `V(R) = −(g²/π) e^{−κR}/R`, the separation-dependent part of the two-source energy.
pub fn yukawa_pair_potential(model: &ModelParams, r: f64) -> Result<f64> {
    require_positive_e0(model)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("separation must be positive, got {r}")));
    }
    Ok(-model.g * model.g / PI * (-model.kappa() * r).exp() / r)
}

/// Decay rate `λ` from a least-squares fit of `ln(−V·R) = c − λR`.
pub fn fit_decay_rate(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter("decay fit needs at least two samples".into()));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(r, v)| {
            let y = -v * r;
            if !(r > 0.0) || !(y > 0.0) {
                return Err(Error::InvalidParameter(format!("sample ({r}, {v}) is not an attractive decay")));
            }
            Ok((r, y.ln()))
        })
        .collect::<Result<_>>()?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("decay fit needs distinct separations".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(-sxy / sxx)
}

/// Separate maxima of the two residuals checked by [`ibc_residual_multicenter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MulticenterResidual {
    /// Boundary-condition mismatch at the sources.
    pub ibc: f64,
    /// Interior eigen-equation mismatch.
    pub eigen: f64,
}

impl MulticenterResidual {
    pub fn max(&self) -> f64 {
        self.ibc.max(self.eigen)
    }
}

/// Yukawa orbital `u(ρ) = e^{−κρ}/ρ` with `u'` and `u''`.
fn yukawa_orbital(kappa: f64, rho: f64) -> (f64, f64, f64) {
    let e = (-kappa * rho).exp();
    let u = e / rho;
    let du = -e * (kappa * rho + 1.0) / (rho * rho);
    let d2u = e * (kappa * kappa * rho * rho + 2.0 * kappa * rho + 2.0) / rho.powi(3);
    (u, du, d2u)
}

/// Checks the closed-form multi-source ground state
/// `ψ⁽ⁿ⁾ = c_n ∏_j Σ_i e^{−κ|y_j−x_i|}/|y_j−x_i|` against
/// (a) the boundary condition `lim r ψ⁽ⁿ⁺¹⁾(yⁿ, x_i + rω) = −g/(2π√(n+1)) ψ⁽ⁿ⁾(yⁿ)` and
/// (b) the eigen-equation away from the sources with eigenvalue [`two_center_ground`].
///
/// Each sample supplies up to `n_max` points; sector `n` uses the first `n`.
/// Residuals are absolute, in the normalization `c_0 = 1`.
pub fn ibc_residual_multicenter(
    model: &ModelParams,
    centers: &CenterSet,
    samples: &[Vec<[f64; 3]>],
    n_max: usize,
) -> Result<MulticenterResidual> {
    require_positive_e0(model)?;
    let kappa = model.kappa();
    let g = model.g;
    let x = centers.positions();
    let energy = two_center_ground(model, centers)?;

    // Limits at each source of r·F(x_i + rω) (value) and ∂_r(r·F) (slope).
    let limits: Vec<(f64, f64)> = (0..x.len())
        .map(|i| {
            let others: f64 =
                (0..x.len()).filter(|&l| l != i).map(|l| yukawa_orbital(kappa, distance(&x[i], &x[l])).0).sum();
            // r·e^{−κr}/r → 1 with slope −κ; the other orbitals contribute r·F_l → 0, slope F_l(x_i)
            (1.0, -kappa + others)
        })
        .collect();

    // Coefficients from the boundary condition: c_{n+1} · value = −g/(2π√(n+1)) c_n.
    let mut c = vec![1.0];
    for n in 0..=n_max {
        let value = limits[0].0;
        c.push(-g / (2.0 * PI * ((n + 1) as f64).sqrt()) * c[n] / value);
    }

    let mut worst = MulticenterResidual { ibc: 0.0, eigen: 0.0 };
    for sample in samples {
        if sample.len() < n_max {
            return Err(Error::InvalidParameter(format!(
                "sample has {} points but sectors up to {n_max} are checked",
                sample.len()
            )));
        }
        let mut orbital = Vec::with_capacity(n_max);
        let mut kinetic = Vec::with_capacity(n_max);
        for y in &sample[..n_max] {
            let mut f = 0.0;
            let mut lap = 0.0;
            for xi in x {
                let rho = distance(y, xi);
                if rho < MIN_CENTER_DISTANCE {
                    return Err(Error::InvalidParameter(format!(
                        "sample point lies within {MIN_CENTER_DISTANCE:e} of a source"
                    )));
                }
                let (u, du, d2u) = yukawa_orbital(kappa, rho);
                f += u;
                lap += d2u + 2.0 * du / rho;
            }
            orbital.push(f);
            kinetic.push(-0.5 * lap);
        }
        for n in 0..=n_max {
            let prod: f64 = orbital[..n].iter().product();
            let psi = c[n] * prod;
            // (a) each source, one more boson placed on it
            if n < n_max {
                for &(value, _) in &limits {
                    let lhs = c[n + 1] * prod * value;
                    let rhs = -g / (2.0 * PI * ((n + 1) as f64).sqrt()) * psi;
                    worst.ibc = worst.ibc.max((lhs - rhs).abs());
                }
            }
            // (b) kinetic + nE0 + creation − E
            let mut h_psi = n as f64 * model.e0 * psi;
            for j in 0..n {
                let others: f64 = (0..n).filter(|&l| l != j).map(|l| orbital[l]).product();
                h_psi += c[n] * kinetic[j] * others;
            }
            let creation_sum: f64 = limits.iter().map(|l| l.1).sum();
            h_psi += g * ((n + 1) as f64).sqrt() / (4.0 * PI) * 4.0 * PI * c[n + 1] * prod * creation_sum;
            worst.eigen = worst.eigen.max((h_psi - energy * psi).abs());
        }
    }
    Ok(worst)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.000000000000000000000000000000000,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const GAUSS_WEIGHTS: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_64, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Kronrod-15 estimate and its difference from the embedded Gauss-7 rule.
fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(mid);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = half * GK_NODES[i];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Globally adaptive Gauss–Kronrod quadrature on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    let mut intervals = vec![(a, b, gauss_kronrod(&f, a, b))];
    for _ in 0..5000 {
        let total: f64 = intervals.iter().map(|iv| iv.2 .0).sum();
        let error: f64 = intervals.iter().map(|iv| iv.2 .1).sum();
        if error <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let (worst, _) = intervals.iter().enumerate().max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1)).unwrap();
        let (lo, hi, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        intervals.push((lo, mid, gauss_kronrod(&f, lo, mid)));
        intervals.push((mid, hi, gauss_kronrod(&f, mid, hi)));
    }
    let error: f64 = intervals.iter().map(|iv| iv.2 .1).sum();
    Err(Error::Quadrature(format!("error estimate {error:.3e} after 5000 subdivisions")))
}

/// Coherent-state ground energy of a source smeared with the normalized Gaussian
/// of width `σ`: `E_φ = −g² ∫d³k |φ̂(k)|²/(k²/2 + E0)` with the unitary transform
/// `φ̂(k) = (2π)^{−3/2} ∫d³y e^{−ik·y} φ(y)`, so `|φ̂(k)|² = (2π)^{−3} e^{−σ²k²}`.
pub fn van_hove_self_energy(model: &ModelParams, sigma: f64) -> Result<f64> {
    require_positive_e0(model)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("smearing width must be positive, got {sigma}")));
    }
    if model.g == 0.0 {
        return Ok(0.0);
    }
    let e0 = model.e0;
    let integrand = |k: f64| k * k * (-sigma * sigma * k * k).exp() / (0.5 * k * k + e0);
    // e^{−σ²k²} < e^{−900} past k = 30/σ
    let upper = 30.0 / sigma;
    let value = integrate(integrand, 0.0, upper, 1e-15, 1e-13)?;
    Ok(-model.g * model.g / (2.0 * PI * PI) * value)
}
