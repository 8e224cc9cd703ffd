//! Radially reduced bosonic Fock space around a fixed source at the origin.
//!
//! Only states that are spherically symmetric in every boson coordinate are
//! represented. Sector `n` stores the reduced amplitude
//!
//! ```text
//! v(r_1, ..., r_n) = (4π)^{n/2} r_1 ··· r_n ψ(r_1, ..., r_n)
//! ```
//!
//! sampled at the interior nodes of a uniform half-line grid, so that the Fock
//! norm becomes a plain product-measure sum `Σ_n h^n Σ_tuples |v|²`. Because the
//! amplitude is permutation symmetric, each sector is stored once per sorted
//! multiset of node indices, carrying the multinomial weight `n!/∏ occ!` that
//! counts the ordered tuples it stands for.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sector a basis may enumerate unless a caller asks otherwise.
pub const DEFAULT_MAX_SECTOR_SIZE: usize = 5_000_000;

/// Coupling and rest energy of the fixed-source model, in units where ħ = m_y = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Coupling constant g.
    pub g: f64,
    /// Energy E0 needed to create one boson.
    pub e0: f64,
    /// Largest boson number kept in the truncated Fock space.
    pub n_max: usize,
}

impl ModelParams {
    pub fn new(g: f64, e0: f64, n_max: usize) -> Result<Self> {
        let params = Self { g, e0, n_max };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.g.is_finite() {
            return Err(Error::InvalidParameter(format!("coupling g={} is not finite", self.g)));
        }
        if !(self.e0 > 0.0) || !self.e0.is_finite() {
            return Err(Error::InvalidParameter(format!("rest energy E0={} must be positive", self.e0)));
        }
        if self.g != 0.0 && self.n_max == 0 {
            return Err(Error::InvalidParameter("an interacting model needs n_max >= 1".into()));
        }
        Ok(())
    }

    /// Decay rate √(2E0) of the dressing cloud.
    pub fn kappa(&self) -> f64 {
        (2.0 * self.e0).sqrt()
    }

    /// Ratio `v^{(n+1)}(.., 0) / v^{(n)}(..)` imposed by the Dirichlet-type IBC in reduced coordinates.
    pub fn boundary_ratio(&self, n: usize) -> f64 {
        -self.g / (PI.sqrt() * ((n + 1) as f64).sqrt())
    }

    /// Prefactor of `∂_r v^{(n+1)}(.., 0)` in the creation term of `(Hv)^{(n)}`.
    pub fn creation_prefactor(&self, n: usize) -> f64 {
        self.g * ((n + 1) as f64).sqrt() / (2.0 * PI.sqrt())
    }
}

/// Uniform grid on a half-line. Node `k` sits at `r_min + k·h`; node 0 is the
/// (constrained or vanishing) boundary node and node `nodes + 1` is the far
/// wall where every amplitude vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub h: f64,
    pub nodes: usize,
    pub r_min: f64,
}

impl RadialGrid {
    pub fn new(h: f64, nodes: usize, r_min: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("grid spacing h={h} must be positive")));
        }
        if nodes == 0 {
            return Err(Error::InvalidParameter("grid needs at least one interior node".into()));
        }
        if !(r_min >= 0.0) || !r_min.is_finite() {
            return Err(Error::InvalidParameter(format!("boundary offset r_min={r_min} must be >= 0")));
        }
        Ok(Self { h, nodes, r_min })
    }

    /// Grid on `[0, radius]` whose far wall lands on `radius` (rounded to the spacing).
    pub fn with_radius(h: f64, radius: f64) -> Result<Self> {
        let nodes = ((radius / h).round() as usize).saturating_sub(1).max(1);
        Self::new(h, nodes, 0.0)
    }

    pub fn position(&self, k: usize) -> f64 {
        self.r_min + k as f64 * self.h
    }

    /// Radius of the far wall.
    pub fn outer_radius(&self) -> f64 {
        self.position(self.nodes + 1)
    }
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Number of multisets of size `n` drawn from `nodes` values.
pub fn sector_size(n: usize, nodes: usize) -> u128 {
    if n == 0 {
        return 1;
    }
    binomial((nodes + n - 1) as u64, n as u64)
}

/// All sorted multisets of size `n` over node indices `1..=nodes`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct SectorBasis {
    n: usize,
    nodes: usize,
    entries: Vec<u32>,
    weights: Vec<f64>,
    // rank[i][x]: number of combinations whose i-th element is below x, given the prefix
    rank: Vec<Vec<u64>>,
}

impl SectorBasis {
    pub fn build(n: usize, nodes: usize) -> Result<Self> {
        Self::build_with_limit(n, nodes, DEFAULT_MAX_SECTOR_SIZE)
    }

    pub fn build_with_limit(n: usize, nodes: usize, limit: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidParameter("sector basis needs M >= 1".into()));
        }
        if nodes > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!("M={nodes} exceeds index range")));
        }
        let size = sector_size(n, nodes);
        if size > limit as u128 {
            return Err(Error::Capacity { n, nodes, size, limit });
        }
        let len = size as usize;
        let mut entries = Vec::with_capacity(len * n);
        let mut weights = Vec::with_capacity(len);
        let mut current = vec![1u32; n];
        let top = nodes as u32;
        for _ in 0..len {
            entries.extend_from_slice(&current);
            weights.push(multiplicity(&current));
            // odometer over nondecreasing sequences
            if let Some(i) = current.iter().rposition(|&a| a < top) {
                let next = current[i] + 1;
                for slot in &mut current[i..] {
                    *slot = next;
                }
            }
        }

        let universe = nodes + n - 1;
        let rank = (0..n)
            .map(|i| {
                let mut table = Vec::with_capacity(universe + 1);
                let mut acc = 0u64;
                table.push(0);
                for y in 0..universe {
                    acc += binomial((universe - 1 - y) as u64, (n - 1 - i) as u64) as u64;
                    table.push(acc);
                }
                table
            })
            .collect();

        Ok(Self { n, nodes, entries, weights, rank })
    }

    /// Boson number of the sector.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid nodes each coordinate ranges over.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[u32] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Number of ordered tuples represented by entry `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |i| self.entry(i))
    }

    /// Position of a sorted multiset, or `None` if it lies outside this sector.
    pub fn index_of(&self, multiset: &[u32]) -> Option<usize> {
        if multiset.len() != self.n {
            return None;
        }
        let universe = self.nodes + self.n - 1;
        let mut rank = 0u64;
        let mut start = 0usize;
        let mut prev = 0u32;
        for (i, &a) in multiset.iter().enumerate() {
            if a == 0 || a as usize > self.nodes || a < prev {
                return None;
            }
            prev = a;
            let c = a as usize - 1 + i;
            debug_assert!(c < universe);
            rank += self.rank[i][c] - self.rank[i][start];
            start = c + 1;
        }
        Some(rank as usize)
    }

    /// Index of `base ∪ {extra}` (base sorted), using `scratch` as workspace.
    pub fn index_with(&self, base: &[u32], extra: u32, scratch: &mut Vec<u32>) -> Option<usize> {
        scratch.clear();
        let pos = base.partition_point(|&a| a <= extra);
        scratch.extend_from_slice(&base[..pos]);
        scratch.push(extra);
        scratch.extend_from_slice(&base[pos..]);
        self.index_of(scratch)
    }

    /// Index of `base` with one copy of `value` replaced by `replacement`.
    pub fn index_replacing(&self, base: &[u32], value: u32, replacement: u32, scratch: &mut Vec<u32>) -> Option<usize> {
        scratch.clear();
        let mut removed = false;
        for &a in base {
            if !removed && a == value {
                removed = true;
                continue;
            }
            scratch.push(a);
        }
        debug_assert!(removed);
        let pos = scratch.partition_point(|&a| a <= replacement);
        scratch.insert(pos, replacement);
        self.index_of(scratch)
    }
}

/// `n! / ∏ occ!` for a sorted multiset.
pub fn multiplicity(sorted: &[u32]) -> f64 {
    let mut weight = 1.0;
    let mut run = 0usize;
    for (i, &a) in sorted.iter().enumerate() {
        run = if i > 0 && sorted[i - 1] == a { run + 1 } else { 1 };
        weight *= (i + 1) as f64 / run as f64;
    }
    weight
}

/// Distinct values of a sorted multiset together with their occupation counts.
pub fn occupations(sorted: &[u32]) -> impl Iterator<Item = (u32, usize)> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= sorted.len() {
            return None;
        }
        let value = sorted[i];
        let start = i;
        while i < sorted.len() && sorted[i] == value {
            i += 1;
        }
        Some((value, i - start))
    })
}

/// `sorted` with one copy of `value` removed.
pub fn without_one(sorted: &[u32], value: u32, out: &mut Vec<u32>) {
    out.clear();
    let mut removed = false;
    for &a in sorted {
        if !removed && a == value {
            removed = true;
        } else {
            out.push(a);
        }
    }
}

/// The truncated Fock space: one sector basis per boson number plus global indexing.
#[derive(Debug, Clone)]
pub struct FockSpace {
    grid: RadialGrid,
    sectors: Vec<SectorBasis>,
    offsets: Vec<usize>,
    gram: Vec<f64>,
}

impl PartialEq for FockSpace {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.sectors.len() == other.sectors.len()
            && self.sectors.iter().zip(&other.sectors).all(|(a, b)| a.nodes == b.nodes)
    }
}

impl FockSpace {
    pub fn new(grid: RadialGrid, n_max: usize) -> Result<Arc<Self>> {
        Self::with_sector_nodes(grid, &vec![grid.nodes; n_max + 1])
    }

    /// Sector `n` ranges over `sector_nodes[n]` nodes per coordinate. Counts must not
    /// increase with `n` for `n >= 1` and may not exceed the grid.
    pub fn with_sector_nodes(grid: RadialGrid, sector_nodes: &[usize]) -> Result<Arc<Self>> {
        Self::with_limit(grid, sector_nodes, DEFAULT_MAX_SECTOR_SIZE)
    }

    /// Caps every sector at the nodes that fit inside `radii[n]` (missing entries: full grid).
    pub fn with_sector_radii(grid: RadialGrid, n_max: usize, radii: &[f64]) -> Result<Arc<Self>> {
        let mut nodes = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            let cap = match radii.get(n) {
                Some(&r) if r.is_finite() => {
                    let fit = ((r - grid.r_min) / grid.h + 1e-9).floor();
                    (fit.max(1.0) as usize).min(grid.nodes)
                }
                _ => grid.nodes,
            };
            let cap = if n >= 2 { cap.min(nodes[n - 1]) } else { cap };
            nodes.push(cap);
        }
        Self::with_sector_nodes(grid, &nodes)
    }

    pub fn with_limit(grid: RadialGrid, sector_nodes: &[usize], limit: usize) -> Result<Arc<Self>> {
        if sector_nodes.is_empty() {
            return Err(Error::InvalidParameter("need at least the vacuum sector".into()));
        }
        for (n, &m) in sector_nodes.iter().enumerate() {
            if m == 0 || m > grid.nodes {
                return Err(Error::InvalidParameter(format!("sector {n} node count {m} outside 1..={}", grid.nodes)));
            }
            if n >= 2 && m > sector_nodes[n - 1] {
                return Err(Error::InvalidParameter(format!("sector node counts must not increase (sector {n})")));
            }
        }
        let sectors = sector_nodes
            .iter()
            .enumerate()
            .map(|(n, &m)| SectorBasis::build_with_limit(n, m, limit))
            .collect::<Result<Vec<_>>>()?;
        let mut offsets = Vec::with_capacity(sectors.len() + 1);
        let mut gram = Vec::new();
        offsets.push(0);
        for (n, sector) in sectors.iter().enumerate() {
            let scale = grid.h.powi(n as i32);
            gram.extend(sector.weights().iter().map(|w| w * scale));
            offsets.push(offsets[n] + sector.len());
        }
        Ok(Arc::new(Self { grid, sectors, offsets, gram }))
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn n_max(&self) -> usize {
        self.sectors.len() - 1
    }

    pub fn sector(&self, n: usize) -> &SectorBasis {
        &self.sectors[n]
    }

    pub fn sectors(&self) -> &[SectorBasis] {
        &self.sectors
    }

    pub fn offset(&self, n: usize) -> usize {
        self.offsets[n]
    }

    pub fn sector_range(&self, n: usize) -> Range<usize> {
        self.offsets[n]..self.offsets[n + 1]
    }

    /// Sector of a global index.
    pub fn sector_of(&self, index: usize) -> usize {
        self.offsets.partition_point(|&o| o <= index) - 1
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Diagonal discrete inner-product weights `h^n · multiplicity`.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    fn compatible(a: &Arc<Self>, b: &Arc<Self>) -> bool {
        Arc::ptr_eq(a, b) || a == b
    }
}

/// Sector-decomposed reduced amplitudes of a state.
#[derive(Debug, Clone)]
pub struct FockVector {
    space: Arc<FockSpace>,
    coeffs: Vec<Complex64>,
}

impl FockVector {
    pub fn zeros(space: Arc<FockSpace>) -> Self {
        let dim = space.dim();
        Self { space, coeffs: vec![Complex64::new(0.0, 0.0); dim] }
    }

    /// Bare vacuum with unit amplitude.
    pub fn vacuum(space: Arc<FockSpace>) -> Self {
        let mut v = Self::zeros(space);
        v.coeffs[0] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn from_coefficients(space: Arc<FockSpace>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != space.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for a space of dimension {}",
                coeffs.len(),
                space.dim()
            )));
        }
        Ok(Self { space, coeffs })
    }

    /// Builds a state from coordinates in which the discrete inner product is Euclidean.
    pub fn from_orthonormal(space: Arc<FockSpace>, x: &[Complex64]) -> Result<Self> {
        if x.len() != space.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates for a space of dimension {}",
                x.len(),
                space.dim()
            )));
        }
        let coeffs = x.iter().zip(space.gram()).map(|(c, g)| c / g.sqrt()).collect();
        Ok(Self { space, coeffs })
    }

    pub fn to_orthonormal(&self) -> Vec<Complex64> {
        self.coeffs.iter().zip(self.space.gram()).map(|(c, g)| c * g.sqrt()).collect()
    }

    pub fn space(&self) -> &Arc<FockSpace> {
        &self.space
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn sector(&self, n: usize) -> &[Complex64] {
        &self.coeffs[self.space.sector_range(n)]
    }

    pub fn sector_mut(&mut self, n: usize) -> &mut [Complex64] {
        let range = self.space.sector_range(n);
        &mut self.coeffs[range]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().zip(self.space.gram()).map(|(c, g)| g * c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, factor: Complex64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }

    /// Rescales to unit norm; leaves the zero vector untouched.
    pub fn normalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            self.scale(Complex64::new(1.0 / norm, 0.0));
        }
    }
}

/// Discrete Fock inner product `Σ_n h^n Σ_entries weight · conj(u) · w`.
pub fn inner_product(u: &FockVector, w: &FockVector) -> Result<Complex64> {
    if !FockSpace::compatible(&u.space, &w.space) {
        return Err(Error::ShapeMismatch("vectors live on different grids or bases".into()));
    }
    Ok(u.coeffs.iter().zip(&w.coeffs).zip(u.space.gram()).map(|((a, b), g)| a.conj() * b * g).sum())
}

/// Probability content of each boson-number sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorWeights(pub Vec<f64>);

impl SectorWeights {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn get(&self, n: usize) -> f64 {
        self.0.get(n).copied().unwrap_or(0.0)
    }

    /// `P(n) / P(0)`.
    pub fn ratio_to_vacuum(&self, n: usize) -> f64 {
        self.get(n) / self.get(0)
    }

    /// Mean boson number of the normalized distribution.
    pub fn mean(&self) -> f64 {
        let total = self.total();
        self.0.iter().enumerate().map(|(n, p)| n as f64 * p).sum::<f64>() / total
    }
}

pub fn sector_weights(v: &FockVector) -> SectorWeights {
    let gram = v.space.gram();
    SectorWeights(
        (0..=v.space.n_max())
            .map(|n| v.space.sector_range(n).map(|i| gram[i] * v.coeffs[i].norm_sqr()).sum())
            .collect(),
    )
}

/// State whose sector `n` is `n_weights[n] · ∏_j f(r_j)`; sectors past the end of
/// `n_weights` are empty.
pub fn product_state_from_profile<F>(space: Arc<FockSpace>, f: F, n_weights: &[Complex64]) -> Result<FockVector>
where
    F: Fn(f64) -> f64,
{
    let grid = *space.grid();
    let samples: Vec<f64> = (0..=grid.nodes).map(|k| f(grid.position(k))).collect();
    if let Some(k) = samples.iter().skip(1).position(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("profile is not finite at node {}", k + 1)));
    }
    let mut v = FockVector::zeros(space.clone());
    for (n, &weight) in n_weights.iter().enumerate().take(space.n_max() + 1) {
        if weight == Complex64::new(0.0, 0.0) {
            continue;
        }
        let basis = space.sector(n);
        let offset = space.offset(n);
        for (i, entry) in basis.iter().enumerate() {
            let product: f64 = entry.iter().map(|&k| samples[k as usize]).product();
            v.coeffs[offset + i] = weight * product;
        }
    }
    Ok(v)
}
