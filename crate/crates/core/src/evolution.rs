//! Crank–Nicolson time stepping and the probability-balance diagnostics.
//!
//! The boundary flux `Φ_m` counts the probability per unit time that sector
//! `m−1` gains from sector `m`. Sector weights then obey
//! `dP_n/dt = Φ_{n+1} − Φ_n`, which [`flux_balance_residual`] checks with
//! centered differences along a trajectory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{sector_weights, without_one, FockVector, SectorWeights};
use crate::hamiltonian::{Coupling, SparseHermitian};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Knobs of the implicit stepper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionOptions {
    /// Relative residual of each linear solve.
    pub solver_tol: f64,
    pub max_iterations: usize,
    /// Keep a full state every this many steps (0: only the first and last).
    pub keep_every: usize,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { solver_tol: 1e-14, max_iterations: 5000, keep_every: 0 }
    }
}

/// Diagnostics recorded after every step, plus a sparse set of full states.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub weights: Vec<SectorWeights>,
    /// `fluxes[s][m−1] = Φ_m` at record `s`.
    pub fluxes: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// Full states with their record index.
    pub states: Vec<(usize, FockVector)>,
    /// Inner iterations summed over all linear solves.
    pub solver_iterations: usize,
}

impl Trajectory {
    pub fn norms_sqr(&self) -> Vec<f64> {
        self.weights.iter().map(SectorWeights::total).collect()
    }

    pub fn final_state(&self) -> &FockVector {
        &self.states.last().unwrap().1
    }

    pub fn max_norm_drift(&self) -> f64 {
        let norms = self.norms_sqr();
        norms.iter().map(|n| (n - norms[0]).abs()).fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        self.energies.iter().map(|e| (e - self.energies[0]).abs()).fold(0.0, f64::max)
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `out = x + c·A x`.
fn apply_shifted(a: &SparseHermitian, c: Complex64, x: &[Complex64], out: &mut [Complex64]) {
    a.apply(x, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi + c * *o;
    }
}

/// `out = x + conj(c)·A^H x`.
fn apply_shifted_adjoint(a: &SparseHermitian, c: Complex64, x: &[Complex64], out: &mut [Complex64]) {
    a.apply_adjoint(x, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi + c.conj() * *o;
    }
}

/// Solves `(I + c·A) y = b` by conjugate gradients on the normal equations,
/// starting from `y`. Returns the iteration count.
pub fn solve_shifted(
    a: &SparseHermitian,
    c: Complex64,
    b: &[Complex64],
    y: &mut [Complex64],
    tol: f64,
    max_iterations: usize,
) -> Result<usize> {
    let dim = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        y.iter_mut().for_each(|z| *z = ZERO);
        return Ok(0);
    }
    let mut r = vec![ZERO; dim];
    apply_shifted(a, c, y, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![ZERO; dim];
    apply_shifted_adjoint(a, c, &r, &mut z);
    let mut p = z.clone();
    let mut w = vec![ZERO; dim];
    let mut zz = dot(&z, &z).re;
    let mut rel = norm(&r) / bnorm;
    for it in 0..max_iterations {
        if rel <= tol {
            return Ok(it);
        }
        apply_shifted(a, c, &p, &mut w);
        let ww = dot(&w, &w).re;
        if ww == 0.0 {
            break;
        }
        let alpha = zz / ww;
        for i in 0..dim {
            y[i] += p[i] * alpha;
            r[i] -= w[i] * alpha;
        }
        rel = norm(&r) / bnorm;
        apply_shifted_adjoint(a, c, &r, &mut z);
        let zz_new = dot(&z, &z).re;
        let beta = zz_new / zz;
        zz = zz_new;
        for i in 0..dim {
            p[i] = z[i] + p[i] * beta;
        }
    }
    if rel <= tol {
        return Ok(max_iterations);
    }
    Err(Error::LinearSolve { iterations: max_iterations, residual: rel })
}

/// Gain of sector `m−1` from sector `m`, for `m = 1..=N`, read off the off-diagonal blocks:
/// `Φ_m = 2 Im <x_{m−1}, A_{m−1,m} x_m>`.
pub fn block_transfer(a: &SparseHermitian, v: &FockVector) -> Result<Vec<f64>> {
    check_space(a, v)?;
    let space = a.space();
    let x = v.to_orthonormal();
    let mut out = vec![0.0; space.n_max()];
    for m in 1..=space.n_max() {
        let upper = space.sector_range(m);
        let mut acc = ZERO;
        for i in space.sector_range(m - 1) {
            let (cols, vals) = a.row(i);
            for (&j, val) in cols.iter().zip(vals) {
                if upper.contains(&(j as usize)) {
                    acc += x[i].conj() * val * x[j as usize];
                }
            }
        }
        out[m - 1] = 2.0 * acc.im;
    }
    Ok(out)
}

/// Flux through the constrained boundary node of each sector, from the same
/// one-sided stencil used in the assembly:
/// `Φ_m = −m h^{m−1} Σ_S w(S) Im[conj(v_0) (v_1 − v_0)/h]`.
/// Bulk-coupled Hamiltonians fall back to [`block_transfer`].
pub fn boundary_flux(a: &SparseHermitian, v: &FockVector) -> Result<Vec<f64>> {
    check_space(a, v)?;
    let maps = match a.coupling() {
        Coupling::Boundary(maps) => maps,
        Coupling::Bulk => return block_transfer(a, v),
    };
    let space = a.space();
    let h = space.grid().h;
    let mut out = vec![0.0; space.n_max()];
    let mut rest = Vec::new();
    for m in 1..=space.n_max() {
        let upper = space.sector(m);
        let lower = space.sector(m - 1);
        let (vu, vl) = (v.sector(m), v.sector(m - 1));
        let map = maps[m];
        let mut acc = 0.0;
        for (ti, entry) in upper.iter().enumerate() {
            if entry[0] != 1 {
                continue;
            }
            // entries S ∪ {1}: visit each S once
            without_one(entry, 1, &mut rest);
            let si = lower.index_of(&rest).unwrap();
            let v1 = vu[ti];
            let v0 = map.lower * vl[si] + map.same * v1;
            acc += lower.weight(si) * (v0.conj() * (v1 - v0) / h).im;
        }
        out[m - 1] = -(m as f64) * h.powi(m as i32 - 1) * acc;
    }
    Ok(out)
}

fn check_space(a: &SparseHermitian, v: &FockVector) -> Result<()> {
    if **a.space() != **v.space() {
        return Err(Error::ShapeMismatch("state and Hamiltonian live on different spaces".into()));
    }
    Ok(())
}

/// Crank–Nicolson propagation: `(I + iτA) x_{t+dt} = (I − iτA) x_t`, `τ = dt/2`.
pub fn propagate(
    a: &SparseHermitian,
    v0: &FockVector,
    dt: f64,
    steps: usize,
    opts: &EvolutionOptions,
) -> Result<Trajectory> {
    check_space(a, v0)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if v0.norm() == 0.0 {
        return Err(Error::InvalidParameter("initial state is zero".into()));
    }
    let space = a.space().clone();
    let dim = a.dim();
    let c = Complex64::new(0.0, dt / 2.0);
    let mut x = v0.to_orthonormal();
    let mut ax = vec![ZERO; dim];
    let mut rhs = vec![ZERO; dim];

    let mut traj = Trajectory {
        dt,
        times: Vec::with_capacity(steps + 1),
        weights: Vec::with_capacity(steps + 1),
        fluxes: Vec::with_capacity(steps + 1),
        energies: Vec::with_capacity(steps + 1),
        states: Vec::new(),
        solver_iterations: 0,
    };
    let record = |step: usize, x: &[Complex64], ax: &mut [Complex64], traj: &mut Trajectory| -> Result<()> {
        let v = FockVector::from_orthonormal(space.clone(), x)?;
        a.apply(x, ax);
        traj.times.push(step as f64 * dt);
        traj.weights.push(sector_weights(&v));
        traj.fluxes.push(boundary_flux(a, &v)?);
        traj.energies.push(dot(x, ax).re);
        let keep = step == 0 || step == steps || (opts.keep_every > 0 && step.is_multiple_of(opts.keep_every));
        if keep {
            traj.states.push((step, v));
        }
        Ok(())
    };

    record(0, &x, &mut ax, &mut traj)?;
    for step in 1..=steps {
        // ax holds A x_t from the last record
        for i in 0..dim {
            rhs[i] = x[i] - c * ax[i];
        }
        let its = solve_shifted(a, c, &rhs, &mut x, opts.solver_tol, opts.max_iterations)?;
        traj.solver_iterations += its;
        record(step, &x, &mut ax, &mut traj)?;
    }
    Ok(traj)
}

/// Applies `(I + (tau/stages)·A)^{−stages}`, a smoothing low-pass filter that
/// suppresses grid-scale components, then renormalizes.
pub fn smoothed(a: &SparseHermitian, v: &FockVector, tau: f64, stages: usize, tol: f64) -> Result<FockVector> {
    check_space(a, v)?;
    if !(tau >= 0.0) || stages == 0 {
        return Err(Error::InvalidParameter("smoothing needs tau >= 0 and at least one stage".into()));
    }
    let c = Complex64::new(tau / stages as f64, 0.0);
    let mut x = v.to_orthonormal();
    for _ in 0..stages {
        let b = x.clone();
        solve_shifted(a, c, &b, &mut x, tol, 20_000)?;
    }
    let mut out = FockVector::from_orthonormal(a.space().clone(), &x)?;
    out.normalize();
    Ok(out)
}

/// Balance residuals `|dP_n/dt − (Φ_{n+1} − Φ_n)|` for `n = 0..N−1` at interior records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceResidual {
    pub times: Vec<f64>,
    /// `residual[n][s]` at `times[s]`.
    pub residual: Vec<Vec<f64>>,
    /// `Σ_n` of the signed transfers at each interior record.
    pub transfer_sum: Vec<f64>,
}

impl BalanceResidual {
    pub fn max(&self) -> f64 {
        self.residual.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Compares centered-difference sector-weight derivatives against the fluxes.
pub fn flux_balance_residual(traj: &Trajectory) -> Result<BalanceResidual> {
    let count = traj.times.len();
    if count < 3 {
        return Err(Error::InvalidParameter("flux balance needs at least 3 records".into()));
    }
    let n_max = traj.fluxes[0].len();
    let phi = |s: usize, m: usize| -> f64 {
        if m == 0 || m > n_max {
            0.0
        } else {
            traj.fluxes[s][m - 1]
        }
    };
    let mut residual = vec![Vec::with_capacity(count - 2); n_max];
    let mut times = Vec::with_capacity(count - 2);
    let mut transfer_sum = Vec::with_capacity(count - 2);
    for s in 1..count - 1 {
        let span = traj.times[s + 1] - traj.times[s - 1];
        times.push(traj.times[s]);
        let mut sum = 0.0;
        for n in 0..=n_max {
            let transfer = phi(s, n + 1) - phi(s, n);
            sum += transfer;
            if n < n_max {
                let derivative = (traj.weights[s + 1].get(n) - traj.weights[s - 1].get(n)) / span;
                residual[n].push((derivative - transfer).abs());
            }
        }
        transfer_sum.push(sum);
    }
    Ok(BalanceResidual { times, residual, transfer_sum })
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `t, norm², P(0..N), flux(1..N), residual(0..N−1)`; residual cells at the
/// first and last record are left empty.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let n_max = traj.fluxes[0].len();
    let balance = if traj.times.len() >= 3 { Some(flux_balance_residual(traj)?) } else { None };
    let mut out = String::new();
    out.push_str("t,norm2");
    for n in 0..=n_max {
        write!(out, ",P{n}").unwrap();
    }
    for m in 1..=n_max {
        write!(out, ",flux{m}").unwrap();
    }
    for n in 0..n_max {
        write!(out, ",residual{n}").unwrap();
    }
    out.push('\n');
    for s in 0..traj.times.len() {
        out.push_str(&sci(traj.times[s]));
        write!(out, ",{}", sci(traj.weights[s].total())).unwrap();
        for n in 0..=n_max {
            write!(out, ",{}", sci(traj.weights[s].get(n))).unwrap();
        }
        for f in &traj.fluxes[s] {
            write!(out, ",{}", sci(*f)).unwrap();
        }
        for n in 0..n_max {
            let cell = match &balance {
                Some(b) if s >= 1 && s + 1 < traj.times.len() => sci(b.residual[n][s - 1]),
                _ => String::new(),
            };
            write!(out, ",{cell}").unwrap();
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{FockSpace, ModelParams, RadialGrid};
    use crate::hamiltonian::{assemble_ibc, assemble_smeared, IbcSpec, SmearProfile};
    use std::sync::Arc;

    fn setup(g: f64, n_max: usize) -> (SparseHermitian, Arc<FockSpace>) {
        let model = ModelParams::new(g, 1.0, n_max).unwrap();
        let space = FockSpace::new(RadialGrid::new(0.25, 12, 0.0).unwrap(), n_max).unwrap();
        (assemble_ibc(&model, &IbcSpec::Dirichlet, &space).unwrap(), space)
    }

    #[test]
    fn shifted_solve_reaches_tolerance() {
        let (a, space) = setup(1.0, 2);
        let b: Vec<Complex64> = (0..space.dim()).map(|i| Complex64::new((i as f64).sin(), 0.3)).collect();
        let c = Complex64::new(0.0, 0.05);
        let mut y = vec![ZERO; space.dim()];
        solve_shifted(&a, c, &b, &mut y, 1e-13, 1000).unwrap();
        let mut check = vec![ZERO; space.dim()];
        apply_shifted(&a, c, &y, &mut check);
        let err: f64 = check.iter().zip(&b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-12 * norm(&b));
    }

    #[test]
    fn stencil_flux_equals_block_transfer() {
        let (a, space) = setup(1.0, 3);
        let coeffs = (0..space.dim()).map(|i| Complex64::new((0.7 * i as f64).cos(), (1.3 * i as f64).sin())).collect();
        let v = FockVector::from_coefficients(space, coeffs).unwrap();
        let stencil = boundary_flux(&a, &v).unwrap();
        let block = block_transfer(&a, &v).unwrap();
        for (s, b) in stencil.iter().zip(&block) {
            assert!((s - b).abs() <= 1e-10 * (1.0 + b.abs()), "{s} vs {b}");
        }
    }

    #[test]
    fn neumann_stencil_flux_equals_block_transfer() {
        let model = ModelParams::new(0.9, 1.0, 2).unwrap();
        let space = FockSpace::new(RadialGrid::new(0.2, 9, 0.0).unwrap(), 2).unwrap();
        let a = assemble_ibc(&model, &IbcSpec::Neumann, &space).unwrap();
        let coeffs = (0..space.dim()).map(|i| Complex64::new(1.0 / (1.0 + i as f64), (i as f64).cos())).collect();
        let v = FockVector::from_coefficients(space, coeffs).unwrap();
        let stencil = boundary_flux(&a, &v).unwrap();
        let block = block_transfer(&a, &v).unwrap();
        for (s, b) in stencil.iter().zip(&block) {
            assert!((s - b).abs() <= 1e-10 * (1.0 + b.abs()), "{s} vs {b}");
        }
    }

    #[test]
    fn free_evolution_has_no_flux() {
        let (a, space) = setup(0.0, 2);
        let v = crate::fock::product_state_from_profile(
            space,
            |r| (-(r - 1.5).powi(2)).exp(),
            &[ZERO, Complex64::new(1.0, 0.0), ZERO],
        )
        .unwrap();
        let traj = propagate(&a, &v, 0.01, 50, &EvolutionOptions::default()).unwrap();
        assert!(traj.max_norm_drift() <= 1e-12);
        let bal = flux_balance_residual(&traj).unwrap();
        assert!(bal.max() <= 1e-10);
    }

    #[test]
    fn vacuum_feeds_the_one_boson_sector() {
        let (a, space) = setup(1.0, 2);
        let traj = propagate(&a, &FockVector::vacuum(space), 0.01, 20, &EvolutionOptions::default()).unwrap();
        assert!(traj.weights[20].get(1) > 0.0);
        assert!(traj.max_norm_drift() <= 1e-12);
        let bal = flux_balance_residual(&traj).unwrap();
        assert!(bal.transfer_sum.iter().all(|s| s.abs() <= 1e-12));
    }

    #[test]
    fn smeared_flux_uses_block_transfer() {
        let model = ModelParams::new(1.0, 1.0, 2).unwrap();
        let space = FockSpace::new(RadialGrid::new(0.25, 10, 0.0).unwrap(), 2).unwrap();
        let a = assemble_smeared(&model, &SmearProfile::gaussian(0.5), &space).unwrap();
        let v = FockVector::vacuum(space);
        assert_eq!(boundary_flux(&a, &v).unwrap(), block_transfer(&a, &v).unwrap());
    }

    #[test]
    fn short_trajectories_are_rejected_by_balance() {
        let (a, space) = setup(1.0, 1);
        let traj = propagate(&a, &FockVector::vacuum(space), 0.01, 1, &EvolutionOptions::default()).unwrap();
        assert!(flux_balance_residual(&traj).is_err());
    }

    #[test]
    fn csv_has_expected_columns() {
        let (a, space) = setup(1.0, 2);
        let traj = propagate(&a, &FockVector::vacuum(space), 0.01, 3, &EvolutionOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&traj, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,norm2,P0,P1,P2,flux1,flux2,residual0,residual1");
        assert_eq!(lines.count(), 4);
    }
}
