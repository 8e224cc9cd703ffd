//! Dense oracle built on ordered coordinate tuples, shared by the test targets.
//!
//! The oracle never uses multisets, Fock weights or multiplicities: it works on
//! every ordered tuple in `{1..M}^n`, counts orderings by enumeration, and writes
//! the discrete operator (or quadratic form) coordinate by coordinate.

#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ibc_core::fock::{FockSpace, ModelParams, RadialGrid};
use ibc_core::hamiltonian::{IbcSpec, SparseHermitian};
use nalgebra::DMatrix;
use num_complex::Complex64;

pub type Functional = Vec<(usize, Complex64)>;

pub fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// All ordered tuples of length `n` over `1..=m`.
pub fn tuples(n: usize, m: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|t| {
                (1..=m).map(move |k| {
                    let mut t = t.clone();
                    t.push(k);
                    t
                })
            })
            .collect();
    }
    out
}

pub struct Oracle {
    pub space: Arc<FockSpace>,
    pub h: f64,
    pub m: u32,
    pub index: HashMap<Vec<u32>, usize>,
    /// `h^n ×` number of ordered tuples sharing the multiset.
    pub gram: Vec<f64>,
}

impl Oracle {
    pub fn new(space: &Arc<FockSpace>) -> Self {
        let m = space.grid().nodes as u32;
        let h = space.grid().h;
        let mut index = HashMap::new();
        for n in 0..=space.n_max() {
            for (i, entry) in space.sector(n).iter().enumerate() {
                index.insert(entry.to_vec(), space.offset(n) + i);
            }
        }
        let mut gram = vec![0.0; space.dim()];
        for n in 0..=space.n_max() {
            for t in tuples(n, m) {
                gram[index[&sorted(&t)]] += h.powi(n as i32);
            }
        }
        Self { space: space.clone(), h, m, index, gram }
    }

    /// `v(T)` for an interior tuple, as a functional of the orthonormal coordinates.
    pub fn interior(&self, t: &[u32]) -> Functional {
        let i = self.index[&sorted(t)];
        vec![(i, c(1.0 / self.gram[i].sqrt()))]
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }
}

pub fn sorted(t: &[u32]) -> Vec<u32> {
    let mut s = t.to_vec();
    s.sort_unstable();
    s
}

pub fn scaled(f: &Functional, a: Complex64) -> Functional {
    f.iter().map(|&(i, v)| (i, v * a)).collect()
}

pub fn add(mut f: Functional, g: Functional) -> Functional {
    f.extend(g);
    f
}

pub fn without(t: &[u32], j: usize) -> Vec<u32> {
    let mut r = t.to_vec();
    r.remove(j);
    r
}

pub fn with_at(t: &[u32], j: usize, k: u32) -> Vec<u32> {
    let mut r = t.to_vec();
    r[j] = k;
    r
}

/// Dirichlet-type form: `Σ_j h^{n−1} Σ_rest Σ_{k=0}^{M} |Δ_j v|²/(2h) + n E0 h^n Σ |v|²`,
/// with `v(…0…) = −g/(√π√n) v^{(n−1)}(rest)` and `v(…M+1…) = 0`.
pub fn dirichlet_form(o: &Oracle, model: &ModelParams) -> DMatrix<Complex64> {
    let mut a = DMatrix::from_element(o.dim(), o.dim(), c(0.0));
    let value = |t: &[u32]| -> Functional {
        if t.contains(&(o.m + 1)) {
            return Vec::new();
        }
        match t.iter().position(|&k| k == 0) {
            Some(j) => {
                let n = t.len() as f64;
                scaled(&o.interior(&without(t, j)), c(-model.g / (PI.sqrt() * n.sqrt())))
            }
            None => o.interior(t),
        }
    };
    for n in 1..=model.n_max {
        let coef = o.h.powi(n as i32 - 1) / (2.0 * o.h);
        for j in 0..n {
            for rest in tuples(n - 1, o.m) {
                for k in 0..=o.m {
                    let mut lo = rest.clone();
                    lo.insert(j, k);
                    let hi = with_at(&lo, j, k + 1);
                    let diff = add(value(&hi), scaled(&value(&lo), c(-1.0)));
                    for &(p, x) in &diff {
                        for &(q, y) in &diff {
                            a[(p, q)] += x.conj() * y * coef;
                        }
                    }
                }
            }
        }
        for i in o.space.sector_range(n) {
            a[(i, i)] += c(n as f64 * model.e0);
        }
    }
    a
}

/// Boundary rule `v(T with 0 at j) = lower_n · v^{(n−1)}(T∖j) + same_n · v(T with 1 at j)`
/// and creation rule `value·v0 + slope·(v1 − v0)/h` into sector `n`.
pub struct BoundaryRule {
    pub lower: Box<dyn Fn(usize) -> Complex64>,
    pub same: Box<dyn Fn(usize) -> Complex64>,
    pub value: Box<dyn Fn(usize) -> Complex64>,
    pub slope: Box<dyn Fn(usize) -> Complex64>,
}

/// Operator route: `(Hv)(T)` on every ordered tuple, then `A(S, ·) = √G_S (Hv)(T)`.
/// Rows from different orderings of the same multiset must agree.
pub fn operator_matrix(o: &Oracle, model: &ModelParams, row: &dyn Fn(&[u32]) -> Functional) -> DMatrix<Complex64> {
    let mut a = DMatrix::from_element(o.dim(), o.dim(), c(0.0));
    let mut seen = vec![false; o.dim()];
    for n in 0..=model.n_max {
        for t in tuples(n, o.m) {
            let i = o.index[&sorted(&t)];
            let mut r = DMatrix::from_element(1, o.dim(), c(0.0));
            for (q, v) in row(&t) {
                r[(0, q)] += v * o.gram[i].sqrt();
            }
            if seen[i] {
                let diff = (a.row(i) - r.row(0)).camax();
                assert!(diff < 1e-9, "row {i} depends on the ordering of {t:?}: {diff}");
            } else {
                a.set_row(i, &r.row(0));
                seen[i] = true;
            }
        }
    }
    a
}

pub fn boundary_row(o: &Oracle, model: &ModelParams, rule: &BoundaryRule, t: &[u32]) -> Functional {
    let n = t.len();
    let kin = 0.5 / (o.h * o.h);
    let value = |u: &[u32]| -> Functional {
        if u.contains(&(o.m + 1)) {
            return Vec::new();
        }
        match u.iter().position(|&k| k == 0) {
            Some(j) => {
                let m = u.len();
                add(
                    scaled(&o.interior(&without(u, j)), (rule.lower)(m)),
                    scaled(&o.interior(&with_at(u, j, 1)), (rule.same)(m)),
                )
            }
            None => o.interior(u),
        }
    };
    let mut f = scaled(&o.interior(t), c(n as f64 * model.e0));
    for j in 0..n {
        f = add(f, scaled(&value(&with_at(t, j, t[j] + 1)), c(-kin)));
        f = add(f, scaled(&o.interior(t), c(2.0 * kin)));
        f = add(f, scaled(&value(&with_at(t, j, t[j] - 1)), c(-kin)));
    }
    if n < model.n_max {
        let mut up0 = t.to_vec();
        up0.insert(0, 0);
        let up1 = with_at(&up0, 0, 1);
        let v0 = value(&up0);
        let v1 = o.interior(&up1);
        let m = n + 1;
        f = add(f, scaled(&v0, (rule.value)(m) - (rule.slope)(m) / o.h));
        f = add(f, scaled(&v1, (rule.slope)(m) / o.h));
    }
    f
}

pub fn smeared_row(o: &Oracle, model: &ModelParams, sigma: f64, t: &[u32]) -> Functional {
    let n = t.len();
    let kin = 0.5 / (o.h * o.h);
    let f_k = |k: u32| {
        let r = k as f64 * o.h;
        (4.0 * PI).sqrt() * r * (2.0 * PI * sigma * sigma).powf(-1.5) * (-r * r / (2.0 * sigma * sigma)).exp()
    };
    let value = |u: &[u32]| -> Functional {
        if u.contains(&0) || u.contains(&(o.m + 1)) {
            Vec::new()
        } else {
            o.interior(u)
        }
    };
    let mut f = scaled(&o.interior(t), c(n as f64 * model.e0 + 2.0 * kin * n as f64));
    for j in 0..n {
        f = add(f, scaled(&value(&with_at(t, j, t[j] + 1)), c(-kin)));
        f = add(f, scaled(&value(&with_at(t, j, t[j] - 1)), c(-kin)));
        f = add(f, scaled(&o.interior(&without(t, j)), c(model.g / (n as f64).sqrt() * f_k(t[j]))));
    }
    if n < model.n_max {
        for k in 1..=o.m {
            let mut up = t.to_vec();
            up.push(k);
            f = add(f, scaled(&o.interior(&up), c(model.g * ((n + 1) as f64).sqrt() * o.h * f_k(k))));
        }
    }
    f
}

/// Largest absolute entrywise difference.
pub fn max_difference(a: &SparseHermitian, oracle: &DMatrix<Complex64>) -> f64 {
    (a.to_dense() - oracle).camax()
}

pub fn setup(nodes: usize, n_max: usize, g: f64) -> (ModelParams, Arc<FockSpace>) {
    let model = ModelParams::new(g, 1.3, n_max).unwrap();
    let space = FockSpace::new(RadialGrid::new(0.2, nodes, 0.0).unwrap(), n_max).unwrap();
    (model, space)
}

/// Dirichlet-type condition written as a boundary rule: no same-sector term,
/// creation through the boundary slope.
pub fn dirichlet_rule(g: f64) -> BoundaryRule {
    BoundaryRule {
        lower: Box::new(move |m| c(-g / (PI.sqrt() * (m as f64).sqrt()))),
        same: Box::new(|_| c(0.0)),
        value: Box::new(|_| c(0.0)),
        // creation: (g/4π)·2√π√m times the boundary slope
        slope: Box::new(move |m| c(g / (4.0 * PI) * 2.0 * PI.sqrt() * (m as f64).sqrt())),
    }
}

pub fn neumann_rule(g: f64, h: f64) -> BoundaryRule {
    BoundaryRule {
        lower: Box::new(move |m| c(-h * g / (PI * m as f64).sqrt())),
        same: Box::new(|_| c(1.0)),
        value: Box::new(move |m| c(g * (m as f64).sqrt() / (2.0 * PI.sqrt()))),
        slope: Box::new(|_| c(0.0)),
    }
}

pub fn robin_rule(spec: &IbcSpec, h: f64) -> BoundaryRule {
    let IbcSpec::Robin { alpha, beta, gamma, delta } = *spec else { panic!("not a Robin condition") };
    let pivot = alpha - beta / h;
    BoundaryRule {
        lower: Box::new(move |m| c(4.0 * PI.sqrt() / (m as f64).sqrt()) / pivot),
        same: Box::new(move |_| -(beta / h) / pivot),
        value: Box::new(move |m| gamma * 2.0 * PI.sqrt() * (m as f64).sqrt()),
        slope: Box::new(move |m| delta * 2.0 * PI.sqrt() * (m as f64).sqrt()),
    }
}
