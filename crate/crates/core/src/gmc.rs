//! Boundary trace of the normalized free-boundary field on a geometric grid,
//! the γ-quantum boundary measure of an α-wedge, and quantum-length
//! inversion.
//!
//! The grid has `N` cells per side, `[r q^{k+1}, r q^k]` for `k = 0..N`
//! (outermost first). Field vectors are laid out `[L_0..L_{N−1}, R_0..R_{N−1}]`.
//! The kernel is `−2 log|x−y| + 2 log₊|x| + 2 log₊|y|`, averaged exactly over
//! cell pairs; on `[−1, 1]` the normalization terms vanish.

use serde::{Deserialize, Serialize};

use crate::error::{require_open, require_positive, Error, Result};
use crate::mc::{run_vector, CompensatedSum, Estimate, DEFAULT_BATCHES};
use crate::rng::{RandomStream, StreamRng};
use crate::stats::{log_grid, loglog_fit, slope_verdict, ExponentFit, FitPoint, RuleCheck};
use crate::stochastic::{hitting_level, laplace_beta, normal, segment_first_passage, VARIANCE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeSpec {
    pub gamma: f64,
    pub alpha: f64,
}

impl WedgeSpec {
    pub fn new(gamma: f64, alpha: f64) -> Result<Self> {
        require_open("gamma", gamma, 0.0, std::f64::consts::SQRT_2)?;
        let q = 2.0 / gamma + gamma / 2.0;
        if !(alpha >= 0.0 && alpha < q) {
            return Err(Error::param("alpha", format!("need 0 <= alpha < Q = {q}, got {alpha}")));
        }
        Ok(Self { gamma, alpha })
    }

    /// `α = 3γ/2`.
    pub fn with_default_alpha(gamma: f64) -> Result<Self> {
        Self::new(gamma, 1.5 * gamma)
    }

    pub fn q(&self) -> f64 {
        2.0 / self.gamma + self.gamma / 2.0
    }

    /// Drift of the radial process, `a = Q − α`.
    pub fn a(&self) -> f64 {
        self.q() - self.alpha
    }

    /// Theoretical slope of `log E[x̄^λ]` against `log δ^{-1}`.
    pub fn moment_exponent(&self, lambda_total: f64) -> f64 {
        let a = self.a();
        (a - (a * a + 4.0 * lambda_total).sqrt()) / self.gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGrid {
    pub r: f64,
    pub q: f64,
    pub n_side: usize,
    /// `edges[k] = r q^k`, length `n_side + 1`.
    pub edges: Vec<f64>,
    pub widths: Vec<f64>,
    /// `−` cell average of `log|x|`.
    pub ell: Vec<f64>,
    /// Geometric cell midpoints.
    pub mid: Vec<f64>,
}

impl BoundaryGrid {
    pub fn new(r: f64, q: f64, n_side: usize) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::param("r", format!("need 0 < r <= 1, got {r}")));
        }
        require_open("q", q, 0.0, 1.0)?;
        if n_side < 4 {
            return Err(Error::param("n_side", format!("need at least 4 cells per side, got {n_side}")));
        }
        let edges: Vec<f64> = (0..=n_side).map(|k| r * q.powi(k as i32)).collect();
        if edges[n_side] <= 0.0 || !edges[n_side].is_normal() {
            return Err(Error::param("n_side", format!("innermost edge underflows for q={q}, N={n_side}")));
        }
        let mut widths = Vec::with_capacity(n_side);
        let mut ell = Vec::with_capacity(n_side);
        let mut mid = Vec::with_capacity(n_side);
        for k in 0..n_side {
            let (a, b) = (edges[k + 1], edges[k]);
            widths.push(b - a);
            // ∫ log x = x log x − x, written relative to b for accuracy.
            let ratio = a / b;
            let avg_log = b.ln() - ratio * ratio.ln() / (1.0 - ratio) - 1.0;
            ell.push(-avg_log);
            mid.push((a * b).sqrt());
        }
        Ok(Self { r, q, n_side, edges, widths, ell, mid })
    }

    /// Default grid: `r = 1`, `q = 0.9`, 2048 cells per side.
    pub fn standard() -> Self {
        Self::new(1.0, 0.9, 2048).expect("standard grid is valid")
    }

    /// Cells per side needed so the innermost cell is at most `1e-2` of
    /// `x_min`.
    pub fn required_n_side(r: f64, q: f64, x_min: f64) -> usize {
        let target = 1e-2 * x_min / ((1.0 - q) * r);
        ((target.ln() / q.ln()).ceil() + 1.0).max(4.0) as usize
    }

    /// Rough lower quantile of `x̄_δ`, `δ^{6/(γ a)}`, used for grid sizing.
    pub fn pilot_x_min(spec: &WedgeSpec, delta_min: f64) -> f64 {
        delta_min.powf(6.0 / (spec.gamma * spec.a()))
    }

    pub fn resolves(&self, x_min: f64) -> bool {
        self.widths[self.n_side - 1] <= 1e-2 * x_min
    }

    pub fn dim(&self) -> usize {
        2 * self.n_side
    }

    /// Signed cell bounds `(lo, hi)` for field index `i`.
    pub fn cell(&self, i: usize) -> (f64, f64) {
        let n = self.n_side;
        if i < n {
            (-self.edges[i], -self.edges[i + 1])
        } else {
            (self.edges[i - n + 1], self.edges[i - n])
        }
    }
}

/// `F` with `F'' = log|u|`.
fn f_antideriv(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        0.5 * u * u * u.abs().ln() - 0.75 * u * u
    }
}

fn g_antideriv(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.abs().ln() - u
    }
}

/// Cell average of `log|x − y|` over `x ∈ [a, b]`, `y ∈ [c, d]`.
pub fn cell_average_log(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let (wi, wj) = (b - a, d - c);
    let u = 0.5 * (a + b) - 0.5 * (c + d);
    if a == c && b == d {
        return wi.ln() - 1.5;
    }
    if wi + wj < 0.05 * u.abs() {
        // Moment expansion of E[log|u + X − Y|] for independent uniforms.
        let (m2, m4) = {
            let (vi, vj) = (wi * wi / 12.0, wj * wj / 12.0);
            (vi + vj, wi.powi(4) / 80.0 + 6.0 * vi * vj + wj.powi(4) / 80.0)
        };
        let u2 = u * u;
        return u.abs().ln() - m2 / (2.0 * u2) - m4 / (4.0 * u2 * u2);
    }
    if wj < 1e-3 * wi || wi < 1e-3 * wj {
        // One cell much smaller: exact average over the large cell,
        // second-order expansion over the small one.
        let (big, small) = if wj < wi { ((a, b), (c, d)) } else { ((c, d), (a, b)) };
        let (lo, hi) = big;
        let w = hi - lo;
        let y = 0.5 * (small.0 + small.1);
        let ws = small.1 - small.0;
        let h = (g_antideriv(hi - y) - g_antideriv(lo - y)) / w;
        let h2 = (1.0 / (hi - y) - 1.0 / (lo - y)) / w;
        return h + h2 * ws * ws / 24.0;
    }
    (f_antideriv(b - c) - f_antideriv(a - c) - f_antideriv(b - d) + f_antideriv(a - d)) / (wi * wj)
}

/// Pointwise kernel `−2 log|x−y| + 2 log₊|x| + 2 log₊|y|`.
pub fn kernel_point(x: f64, y: f64) -> f64 {
    let lp = |v: f64| v.abs().ln().max(0.0);
    -2.0 * (x - y).abs().ln() + 2.0 * lp(x) + 2.0 * lp(y)
}

/// Cell-averaged kernel entry between field indices `i` and `j` (grid
/// inside `[−1, 1]`, so the `log₊` terms vanish).
pub fn kernel_cell(grid: &BoundaryGrid, i: usize, j: usize) -> f64 {
    let (a, b) = grid.cell(i);
    let (c, d) = grid.cell(j);
    -2.0 * cell_average_log(a, b, c, d)
}

/// Lower-triangular Cholesky factor stored by packed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedCholesky {
    pub n: usize,
    data: Vec<f64>,
    pub min_pivot: f64,
    pub trace: f64,
}

impl PackedCholesky {
    fn row(&self, i: usize) -> &[f64] {
        let s = i * (i + 1) / 2;
        &self.data[s..s + i + 1]
    }

    /// Factors the symmetric matrix with lower entries `entry(i, j)`, `j <= i`.
    /// A pivot below `−1e-8 · trace` is an error; pivots between that and
    /// zero are treated as exact zeros (semidefinite directions).
    pub fn factor<F: Fn(usize, usize) -> f64>(n: usize, entry: F) -> Result<Self> {
        let mut data = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let s = i * (i + 1) / 2;
            for j in 0..=i {
                data[s + j] = entry(i, j);
            }
        }
        let trace: f64 = (0..n).map(|i| data[i * (i + 1) / 2 + i]).sum();
        let tol = 1e-8 * trace.abs();
        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let si = i * (i + 1) / 2;
            for j in 0..=i {
                let sj = j * (j + 1) / 2;
                let (ri, rj) = (&data[si..si + j], &data[sj..sj + j]);
                let dot: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
                let v = data[si + j] - dot;
                if j == i {
                    min_pivot = min_pivot.min(v);
                    if v < -tol {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: v, tolerance: tol });
                    }
                    data[si + i] = if v > tol * 1e-6 { v.sqrt() } else { 0.0 };
                } else {
                    let d = data[sj + j];
                    data[si + j] = if d > 0.0 { v / d } else { 0.0 };
                }
            }
        }
        Ok(Self { n, data, min_pivot, trace })
    }

    /// `L z` into `out`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = self.row(i).iter().zip(&z[..=i]).map(|(l, x)| l * x).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Cholesky of the full cell-averaged kernel.
    Dense,
    /// Exact radial Brownian part `B(2ℓ)` shared by both sides plus an
    /// independent lateral field with covariance `K − 2 min(ℓ_i, ℓ_j)`.
    RadialLateral,
}

/// Kernel factorization and grid, computed once and shared read-only.
#[derive(Debug, Clone)]
pub struct FieldModel {
    pub grid: BoundaryGrid,
    pub kind: SamplerKind,
    chol: PackedCholesky,
}

/// Metadata of the factorization for report manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub dim: usize,
    pub min_pivot: f64,
    pub trace: f64,
    pub psd_tolerance: f64,
}

impl FieldModel {
    pub fn new(grid: BoundaryGrid, kind: SamplerKind) -> Result<Self> {
        let n = grid.n_side;
        let chol = match kind {
            SamplerKind::Dense => PackedCholesky::factor(grid.dim(), |i, j| kernel_cell(&grid, i, j))?,
            SamplerKind::RadialLateral => PackedCholesky::factor(grid.dim(), |i, j| {
                let (ki, kj) = (i % n, j % n);
                kernel_cell(&grid, i, j) - VARIANCE_RATE * grid.ell[ki].min(grid.ell[kj])
            })?,
        };
        Ok(Self { grid, kind, chol })
    }

    pub fn meta(&self) -> KernelMeta {
        KernelMeta { dim: self.chol.n, min_pivot: self.chol.min_pivot, trace: self.chol.trace, psd_tolerance: 1e-8 * self.chol.trace.abs() }
    }

    /// Dense: the full field. RadialLateral: the lateral part only.
    pub fn sample_gaussian(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let z: Vec<f64> = (0..self.chol.n).map(|_| normal(rng)).collect();
        self.chol.apply(&z, out);
    }

    /// One draw of the full boundary field (radial part untilted).
    pub fn sample_boundary_field(&self, rng: &mut StreamRng) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.dim()];
        self.sample_gaussian(rng, &mut out);
        if self.kind == SamplerKind::RadialLateral {
            let radial = radial_path(&self.grid, &standard_normals(rng, self.grid.n_side), 0.0);
            let n = self.grid.n_side;
            for k in 0..n {
                out[k] += radial[k];
                out[n + k] += radial[k];
            }
        }
        out
    }
}

fn standard_normals(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// `R_k = B(2ℓ_k)` plus drift `drift·ℓ_k`, from standard normals `z`.
pub fn radial_path(grid: &BoundaryGrid, z: &[f64], drift: f64) -> Vec<f64> {
    let mut prev = 0.0;
    let mut r = 0.0;
    grid.ell
        .iter()
        .zip(z)
        .map(|(&l, &zk)| {
            let dl = l - prev;
            prev = l;
            r += drift * dl + (VARIANCE_RATE * dl).sqrt() * zk;
            r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureProfile {
    pub mass_l: Vec<f64>,
    pub mass_r: Vec<f64>,
    /// `cum[k]` = mass of the side within `|x| <= edges[k]`.
    pub cum_l: Vec<f64>,
    pub cum_r: Vec<f64>,
}

fn inward_cumulative(mass: &[f64]) -> Vec<f64> {
    let mut cum = vec![0.0; mass.len() + 1];
    let mut s = CompensatedSum::default();
    for k in (0..mass.len()).rev() {
        s.add(mass[k]);
        cum[k] = s.value();
    }
    cum
}

impl MeasureProfile {
    pub fn from_masses(mass_l: Vec<f64>, mass_r: Vec<f64>) -> Self {
        let cum_l = inward_cumulative(&mass_l);
        let cum_r = inward_cumulative(&mass_r);
        Self { mass_l, mass_r, cum_l, cum_r }
    }

    pub fn side_total(&self, side: Side) -> f64 {
        match side {
            Side::L => self.cum_l[0],
            Side::R => self.cum_r[0],
        }
    }
}

/// Log of the deterministic part of the cell mass,
/// `(1 + γ²/4) log w − (γα/2) log x_mid`.
pub fn log_mass_base(spec: &WedgeSpec, grid: &BoundaryGrid) -> Vec<f64> {
    let g = spec.gamma;
    grid.widths.iter().zip(&grid.mid).map(|(w, m)| (1.0 + g * g / 4.0) * w.ln() - 0.5 * g * spec.alpha * m.ln()).collect()
}

/// Cell masses `w^{1+γ²/4} e^{(γ/2)φ} |x|^{−γα/2}`, exponentiated from log
/// space.
pub fn quantum_boundary_measure(field: &[f64], spec: &WedgeSpec, grid: &BoundaryGrid) -> Result<MeasureProfile> {
    let n = grid.n_side;
    if field.len() != 2 * n {
        return Err(Error::param("field", format!("length {} does not match grid dimension {}", field.len(), 2 * n)));
    }
    let base = log_mass_base(spec, grid);
    let half = 0.5 * spec.gamma;
    let side = |off: usize| -> Vec<f64> { (0..n).map(|k| (base[k] + half * field[off + k]).exp()).collect() };
    Ok(MeasureProfile::from_masses(side(0), side(n)))
}

/// Result of a quantum-length inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XDelta {
    pub x: f64,
    pub capped: bool,
}

fn invert(cum: &[f64], mass: impl Fn(usize) -> f64, edges: &[f64], delta: f64) -> XDelta {
    let n = cum.len() - 1;
    if delta >= cum[0] {
        return XDelta { x: edges[0], capped: delta > cum[0] };
    }
    // cum is nonincreasing in k; find the largest k with cum[k] >= δ.
    let (mut lo, mut hi) = (0usize, n);
    while hi - lo > 1 {
        let m = (lo + hi) / 2;
        if cum[m] >= delta {
            lo = m;
        } else {
            hi = m;
        }
    }
    let k = lo;
    let m = mass(k);
    let frac = if m > 0.0 { ((delta - cum[k + 1]) / m).clamp(0.0, 1.0) } else { 1.0 };
    XDelta { x: edges[k + 1] + frac * (edges[k] - edges[k + 1]), capped: false }
}

/// Smallest `x` with side mass of `[0, x]` at least `δ`, linear inside a
/// cell, capped at `r`.
pub fn find_x_delta(profile: &MeasureProfile, grid: &BoundaryGrid, delta: f64, side: Side) -> Result<XDelta> {
    require_positive("delta", delta)?;
    Ok(match side {
        Side::L => invert(&profile.cum_l, |k| profile.mass_l[k], &grid.edges, delta),
        Side::R => invert(&profile.cum_r, |k| profile.mass_r[k], &grid.edges, delta),
    })
}

/// Smallest `x` with `ν([−x, x]) >= δ`, capped at `r`.
pub fn find_x_delta_symmetric(profile: &MeasureProfile, grid: &BoundaryGrid, delta: f64) -> Result<XDelta> {
    require_positive("delta", delta)?;
    let cum: Vec<f64> = profile.cum_l.iter().zip(&profile.cum_r).map(|(a, b)| a + b).collect();
    Ok(invert(&cum, |k| profile.mass_l[k] + profile.mass_r[k], &grid.edges, delta))
}

/// A moment functional of the inverted lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentQuery {
    /// `E[x̄_L^{λ₁} x̄_R^{λ₂}]` (`λ₂ = 0` is single-sided).
    Joint { lambda1: f64, lambda2: f64 },
    /// `E[x̄_δ^λ]` for the symmetric interval.
    Symmetric { lambda: f64 },
}

impl MomentQuery {
    pub fn lambda_total(&self) -> f64 {
        match *self {
            MomentQuery::Joint { lambda1, lambda2 } => lambda1 + lambda2,
            MomentQuery::Symmetric { lambda } => lambda,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            MomentQuery::Joint { lambda1, lambda2 } => format!("joint({lambda1},{lambda2})"),
            MomentQuery::Symmetric { lambda } => format!("symmetric({lambda})"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MomentQuery::Joint { lambda1, lambda2 } => {
                require_positive("lambda1", lambda1)?;
                if !(lambda2 >= 0.0 && lambda2.is_finite()) {
                    return Err(Error::param("lambda2", format!("need lambda2 >= 0, got {lambda2}")));
                }
                Ok(())
            }
            MomentQuery::Symmetric { lambda } => require_positive("lambda", lambda).map(|_| ()),
        }
    }
}

/// Per-(δ, query) moment estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCell {
    pub delta: f64,
    pub query: MomentQuery,
    pub lambda1: f64,
    pub lambda2: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n: u64,
    pub cap_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub n_fields: u64,
    /// Tilt the radial drift from `a` to `a + 2β(λ)` until `V` reaches the
    /// level, and reweight.
    pub importance: bool,
}

/// Drives one field draw: the lateral part is sampled once and the radial
/// part once per (δ, tilt) on common normals.
struct MomentSampler<'a> {
    spec: WedgeSpec,
    model: &'a FieldModel,
    base: Vec<f64>,
    deltas: &'a [f64],
    queries: &'a [MomentQuery],
    tilts: Vec<f64>,
    importance: bool,
}

impl MomentSampler<'_> {
    fn dim(&self) -> usize {
        2 * self.deltas.len() * self.queries.len()
    }

    fn sample(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let grid = &self.model.grid;
        let n = grid.n_side;
        let mut lateral = vec![0.0; grid.dim()];
        self.model.sample_gaussian(rng, &mut lateral);
        let z = standard_normals(rng, n);
        let half = 0.5 * self.spec.gamma;
        let a = self.spec.a();
        let nq = self.queries.len();
        let block = self.deltas.len() * nq;
        for (di, &delta) in self.deltas.iter().enumerate() {
            let level = hitting_level(self.spec.gamma, delta);
            for &beta in &self.tilts {
                let (radial, weight) = if self.importance && beta > 0.0 {
                    tilted_radial(grid, &z, a, beta, level)
                } else {
                    (radial_path(grid, &z, 0.0), 1.0)
                };
                let row = |off: usize| -> Vec<f64> { (0..n).map(|k| (self.base[k] + half * (lateral[off + k] + radial[k])).exp()).collect() };
                let profile = MeasureProfile::from_masses(row(0), row(n));
                let xl = invert(&profile.cum_l, |k| profile.mass_l[k], &grid.edges, delta);
                let xr = invert(&profile.cum_r, |k| profile.mass_r[k], &grid.edges, delta);
                let mut xs: Option<XDelta> = None;
                for (qi, q) in self.queries.iter().enumerate() {
                    if self.tilt_of(q) != beta {
                        continue;
                    }
                    let (v, capped) = match *q {
                        MomentQuery::Joint { lambda1, lambda2 } => {
                            let mut v = xl.x.powf(lambda1);
                            let mut c = xl.capped;
                            if lambda2 > 0.0 {
                                v *= xr.x.powf(lambda2);
                                c |= xr.capped;
                            }
                            (v, c)
                        }
                        MomentQuery::Symmetric { lambda } => {
                            let s = *xs.get_or_insert_with(|| {
                                let cum: Vec<f64> = profile.cum_l.iter().zip(&profile.cum_r).map(|(x, y)| x + y).collect();
                                invert(&cum, |k| profile.mass_l[k] + profile.mass_r[k], &grid.edges, delta)
                            });
                            (s.x.powf(lambda), s.capped)
                        }
                    };
                    out[di * nq + qi] = weight * v;
                    out[block + di * nq + qi] = if capped { 1.0 } else { 0.0 };
                }
            }
        }
    }

    fn tilt_of(&self, q: &MomentQuery) -> f64 {
        if self.importance {
            laplace_beta(self.spec.a(), q.lambda_total())
        } else {
            0.0
        }
    }
}

/// Radial path with `V = −R + aℓ` tilted to drift `a + 2β` until the first
/// grid index with `V >= level`; returns the path and the likelihood ratio
/// `exp(−β(V_K − aℓ_K) + β²ℓ_K)`.
pub fn tilted_radial(grid: &BoundaryGrid, z: &[f64], a: f64, beta: f64, level: f64) -> (Vec<f64>, f64) {
    let mut out = Vec::with_capacity(grid.n_side);
    let mut prev = 0.0;
    let mut r = 0.0;
    let mut hit: Option<usize> = None;
    for (k, (&l, &zk)) in grid.ell.iter().zip(z).enumerate() {
        let dl = l - prev;
        prev = l;
        let drift = if hit.is_none() { -2.0 * beta } else { 0.0 };
        r += drift * dl + (VARIANCE_RATE * dl).sqrt() * zk;
        out.push(r);
        if hit.is_none() && -r + a * l >= level {
            hit = Some(k);
        }
    }
    let kk = hit.unwrap_or(grid.n_side - 1);
    let (l, v) = (grid.ell[kk], -out[kk] + a * grid.ell[kk]);
    (out, (-beta * (v - a * l) + beta * beta * l).exp())
}

/// Inverted lengths of one field draw at one δ, with its importance weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldLengths {
    pub delta: f64,
    pub l: XDelta,
    pub r: XDelta,
    pub sym: XDelta,
    pub weight: f64,
}

/// Draws boundary measures and inverts them on a δ grid.
pub struct LengthSampler<'a> {
    pub spec: WedgeSpec,
    pub model: &'a FieldModel,
    base: Vec<f64>,
}

impl<'a> LengthSampler<'a> {
    pub fn new(spec: WedgeSpec, model: &'a FieldModel) -> Result<Self> {
        if model.kind != SamplerKind::RadialLateral {
            return Err(Error::param("sampler", "length sampling needs the radial-lateral sampler"));
        }
        Ok(Self { spec, model, base: log_mass_base(&spec, &model.grid) })
    }

    fn lengths(&self, lateral: &[f64], radial: &[f64], delta: f64, weight: f64) -> FieldLengths {
        let g = &self.model.grid;
        let n = g.n_side;
        let half = 0.5 * self.spec.gamma;
        let row = |off: usize| -> Vec<f64> { (0..n).map(|k| (self.base[k] + half * (lateral[off + k] + radial[k])).exp()).collect() };
        let p = MeasureProfile::from_masses(row(0), row(n));
        let l = invert(&p.cum_l, |k| p.mass_l[k], &g.edges, delta);
        let r = invert(&p.cum_r, |k| p.mass_r[k], &g.edges, delta);
        let cum: Vec<f64> = p.cum_l.iter().zip(&p.cum_r).map(|(x, y)| x + y).collect();
        let sym = invert(&cum, |k| p.mass_l[k] + p.mass_r[k], &g.edges, delta);
        FieldLengths { delta, l, r, sym, weight }
    }

    /// One field draw. Without a tilt the same field serves every δ; with
    /// `tilt_lambda = Some(λ)` the radial part is tilted per δ toward the
    /// level of that δ (common normals across δ).
    pub fn draw(&self, deltas: &[f64], tilt_lambda: Option<f64>, rng: &mut StreamRng) -> Vec<FieldLengths> {
        let g = &self.model.grid;
        let mut lateral = vec![0.0; g.dim()];
        self.model.sample_gaussian(rng, &mut lateral);
        let z = standard_normals(rng, g.n_side);
        match tilt_lambda {
            None => {
                let radial = radial_path(g, &z, 0.0);
                deltas.iter().map(|&d| self.lengths(&lateral, &radial, d, 1.0)).collect()
            }
            Some(lambda) => {
                let a = self.spec.a();
                let beta = laplace_beta(a, lambda);
                deltas
                    .iter()
                    .map(|&d| {
                        let (radial, w) = tilted_radial(g, &z, a, beta, hitting_level(self.spec.gamma, d));
                        self.lengths(&lateral, &radial, d, w)
                    })
                    .collect()
            }
        }
    }
}

/// First grid index with `V_k = −R_k + aℓ_k >= level`.
pub fn first_grid_hit(grid: &BoundaryGrid, radial: &[f64], a: f64, level: f64) -> Option<usize> {
    radial.iter().zip(&grid.ell).position(|(r, l)| -r + a * l >= level)
}

/// MC estimates of the requested moments on the δ grid.
pub fn estimate_joint_moment(
    spec: &WedgeSpec,
    model: &FieldModel,
    deltas: &[f64],
    queries: &[MomentQuery],
    cfg: &MomentConfig,
    stream: RandomStream,
) -> Result<Vec<MomentCell>> {
    if model.kind != SamplerKind::RadialLateral && cfg.importance {
        return Err(Error::param("importance", "importance sampling needs the radial-lateral sampler"));
    }
    for &d in deltas {
        require_positive("delta", d)?;
    }
    for q in queries {
        q.validate()?;
    }
    let mut sampler = MomentSampler {
        spec: *spec,
        model,
        base: log_mass_base(spec, &model.grid),
        deltas,
        queries,
        tilts: Vec::new(),
        importance: cfg.importance,
    };
    let mut tilts: Vec<f64> = queries.iter().map(|q| sampler.tilt_of(q)).collect();
    tilts.sort_by(f64::total_cmp);
    tilts.dedup();
    sampler.tilts = tilts;
    let dim = sampler.dim();
    let est = if model.kind == SamplerKind::RadialLateral {
        run_vector(cfg.n_fields, dim, DEFAULT_BATCHES, stream, |rng, out| sampler.sample(rng, out))?
    } else {
        run_vector(cfg.n_fields, dim, DEFAULT_BATCHES, stream, |rng, out| dense_moments(&sampler, rng, out))?
    };
    let nq = queries.len();
    let block = deltas.len() * nq;
    let mut cells = Vec::with_capacity(block);
    for (di, &delta) in deltas.iter().enumerate() {
        for (qi, q) in queries.iter().enumerate() {
            let e = est[di * nq + qi];
            let (l1, l2) = match *q {
                MomentQuery::Joint { lambda1, lambda2 } => (lambda1, lambda2),
                MomentQuery::Symmetric { lambda } => (lambda, 0.0),
            };
            cells.push(MomentCell { delta, query: *q, lambda1: l1, lambda2: l2, estimate: e.mean, stderr: e.stderr, n: e.n, cap_fraction: est[block + di * nq + qi].mean });
        }
    }
    Ok(cells)
}

fn dense_moments(s: &MomentSampler<'_>, rng: &mut StreamRng, out: &mut [f64]) {
    let grid = &s.model.grid;
    let field = s.model.sample_boundary_field(rng);
    let profile = quantum_boundary_measure(&field, &s.spec, grid).expect("field matches grid");
    let nq = s.queries.len();
    let block = s.deltas.len() * nq;
    for (di, &delta) in s.deltas.iter().enumerate() {
        let xl = invert(&profile.cum_l, |k| profile.mass_l[k], &grid.edges, delta);
        let xr = invert(&profile.cum_r, |k| profile.mass_r[k], &grid.edges, delta);
        let xs = find_x_delta_symmetric(&profile, grid, delta).expect("delta validated");
        for (qi, q) in s.queries.iter().enumerate() {
            let (v, c) = match *q {
                MomentQuery::Joint { lambda1, lambda2 } => (xl.x.powf(lambda1) * xr.x.powf(lambda2), xl.capped || (lambda2 > 0.0 && xr.capped)),
                MomentQuery::Symmetric { lambda } => (xs.x.powf(lambda), xs.capped),
            };
            out[di * nq + qi] = v;
            out[block + di * nq + qi] = c as u8 as f64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub query: MomentQuery,
    pub fit: ExponentFit,
    pub theory: f64,
    pub check: RuleCheck,
}

/// Slope of `log E` against `log δ^{-1}`, compared with
/// `(a − √(a² + 4λ_total))/γ`. Needs at least 4 δ values over 1.5 decades.
pub fn fit_moment_exponent(spec: &WedgeSpec, cells: &[MomentCell], query: MomentQuery, theory: Option<f64>, tol_rel: f64) -> Result<MomentFit> {
    let pts: Vec<FitPoint> = cells.iter().filter(|c| c.query == query).map(|c| FitPoint::new(1.0 / c.delta, c.estimate, c.stderr)).collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!("{} delta points for {}, need 4", pts.len(), query.label())));
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, 0.0f64), |(l, h), p| (l.min(p.x), h.max(p.x)));
    if (hi / lo).log10() < 1.5 - 1e-9 {
        return Err(Error::InsufficientData(format!("delta grid spans {:.2} decades, need 1.5", (hi / lo).log10())));
    }
    let fit = loglog_fit(&pts)?;
    let theory = theory.unwrap_or_else(|| spec.moment_exponent(query.lambda_total()));
    let check = slope_verdict(format!("{} slope within {}% of {theory:.6}", query.label(), tol_rel * 100.0), &fit, theory, tol_rel * theory.abs());
    Ok(MomentFit { query, fit, theory, check })
}

/// Per-δ sandwich `E[x̄_δ^{λ₁+λ₂}] <= E[x̄_L^{λ₁} x̄_R^{λ₂}] <= 2^{λ₁+λ₂+1} E[x̄_L^{λ₁+λ₂}]`
/// within 3 joint stderr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub delta: f64,
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
    pub holds: bool,
}

pub fn sandwich_check(cells: &[MomentCell], lambda1: f64, lambda2: f64) -> Result<Vec<SandwichRow>> {
    let lt = lambda1 + lambda2;
    let find = |d: f64, q: MomentQuery| cells.iter().find(|c| c.delta == d && c.query == q).copied_pair();
    let mut deltas: Vec<f64> = cells.iter().map(|c| c.delta).collect();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let mut rows = Vec::new();
    for d in deltas {
        let (Some(lo), Some(mid), Some(up)) = (
            find(d, MomentQuery::Symmetric { lambda: lt }),
            find(d, MomentQuery::Joint { lambda1, lambda2 }),
            find(d, MomentQuery::Joint { lambda1: lt, lambda2: 0.0 }),
        ) else {
            return Err(Error::InsufficientData(format!("sandwich at delta={d} needs symmetric, joint and single-sided moments")));
        };
        let c = 2f64.powf(lt + 1.0);
        let ok1 = lo.0 <= mid.0 + 3.0 * (lo.1 * lo.1 + mid.1 * mid.1).sqrt();
        let ok2 = mid.0 <= c * up.0 + 3.0 * (mid.1 * mid.1 + c * c * up.1 * up.1).sqrt();
        rows.push(SandwichRow { delta: d, lower: lo.0, middle: mid.0, upper: c * up.0, holds: ok1 && ok2 });
    }
    Ok(rows)
}

trait CopiedPair {
    fn copied_pair(self) -> Option<(f64, f64)>;
}

impl CopiedPair for Option<&MomentCell> {
    fn copied_pair(self) -> Option<(f64, f64)> {
        self.map(|c| (c.estimate, c.stderr))
    }
}

/// Distribution summary of `log(x̄_δ e^{τ_δ})` at one δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub delta: f64,
    pub median: f64,
    pub iqr: f64,
    pub correlation: f64,
    pub moment_x: f64,
    pub moment_x_stderr: f64,
    pub moment_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCrosscheck {
    pub lambda: f64,
    pub rows: Vec<TauRow>,
    /// Slope of `log E[x̄^λ]` against `log E[e^{−λτ}]`.
    pub slope: f64,
    pub slope_stderr: f64,
    pub spread_flag: bool,
}

/// Compares `x̄_{δ,L}` with `e^{−τ_δ}` on shared randomness: `τ_δ` is the
/// first passage of the same radial process `V = −R + aℓ`, refined between
/// grid points by Brownian-bridge splitting.
pub fn tau_estimator_crosscheck(spec: &WedgeSpec, model: &FieldModel, deltas: &[f64], lambda: f64, n: u64, stream: RandomStream) -> Result<TauCrosscheck> {
    if model.kind != SamplerKind::RadialLateral {
        return Err(Error::param("sampler", "tau cross-check needs the radial-lateral sampler"));
    }
    require_positive("lambda", lambda)?;
    let grid = &model.grid;
    let base = log_mass_base(spec, grid);
    let nd = deltas.len();
    let a = spec.a();
    let half = 0.5 * spec.gamma;
    let draws: Vec<Vec<(f64, f64)>> = crate::mc::map_indexed(n, stream, crate::rng::tags::FIELD, |_, rng| {
        let nside = grid.n_side;
        let mut lateral = vec![0.0; grid.dim()];
        model.sample_gaussian(rng, &mut lateral);
        let z = standard_normals(rng, nside);
        let radial = radial_path(grid, &z, 0.0);
        let masses: Vec<f64> = (0..nside).map(|k| (base[k] + half * (lateral[k] + radial[k])).exp()).collect();
        let cum = inward_cumulative(&masses);
        deltas
            .iter()
            .map(|&d| {
                let level = hitting_level(spec.gamma, d);
                let x = invert(&cum, |k| masses[k], &grid.edges, d).x;
                let mut tau = f64::INFINITY;
                let (mut l0, mut v0) = (0.0, 0.0);
                for k in 0..nside {
                    let (l1, v1) = (grid.ell[k], -radial[k] + a * grid.ell[k]);
                    if let Some(t) = segment_first_passage(l0, v0, l1, v1, level, VARIANCE_RATE, 1e-6, rng) {
                        tau = t;
                        break;
                    }
                    (l0, v0) = (l1, v1);
                }
                (x, tau)
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(nd);
    for (di, &d) in deltas.iter().enumerate() {
        let mut logs: Vec<f64> = draws.iter().map(|v| v[di].0.ln() + v[di].1.min(1e300)).filter(|v| v.is_finite()).collect();
        logs.sort_by(f64::total_cmp);
        let qtile = |p: f64| logs[((logs.len() - 1) as f64 * p).round() as usize];
        let xs: Vec<f64> = draws.iter().map(|v| -v[di].0.ln()).collect();
        let ts: Vec<f64> = draws.iter().map(|v| v[di].1).collect();
        let xl: Vec<f64> = draws.iter().map(|v| v[di].0.powf(lambda)).collect();
        let (mx, sx) = crate::stats::batch_means(&xl, DEFAULT_BATCHES)?;
        rows.push(TauRow {
            delta: d,
            median: qtile(0.5),
            iqr: qtile(0.75) - qtile(0.25),
            correlation: pearson(&xs, &ts),
            moment_x: mx,
            moment_x_stderr: sx,
            moment_tau: crate::stochastic::laplace_theory(a, spec.gamma, lambda, d)?,
        });
    }
    let pts: Vec<FitPoint> = rows.iter().map(|r| FitPoint::new(r.moment_tau, r.moment_x, r.moment_x_stderr)).collect();
    let fit = loglog_fit(&pts)?;
    let mut sorted = rows.clone();
    sorted.sort_by(|x, y| x.delta.total_cmp(&y.delta));
    let (small, large) = (sorted[0], sorted[sorted.len() - 1]);
    let growth = (1.0 / small.delta).ln() / (1.0 / large.delta).ln();
    let spread_flag = small.iqr > 2.0 * growth * large.iqr.max(1e-12);
    Ok(TauCrosscheck { lambda, rows, slope: fit.slope, slope_stderr: fit.slope_stderr, spread_flag })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| a.is_finite() && b.is_finite()).map(|(a, b)| (*a, *b)).collect();
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Variance increment of the two-sided radial proxy
/// `p_k = (φ_{L,k} + φ_{R,k})/2` between separations `sep1 < sep2` from
/// cell `k0`: `(Var(p_{k0+sep2} − p_{k0}) − Var(p_{k0+sep1} − p_{k0})) / Δℓ`,
/// which tends to 2 as the lateral correlations decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialCheck {
    pub rate: f64,
    pub stderr: f64,
    /// Same quantity computed exactly from the cell-averaged kernel.
    pub kernel_rate: f64,
}

pub fn radial_increment_check(model: &FieldModel, k0: usize, sep1: usize, sep2: usize, n: u64, stream: RandomStream) -> Result<RadialCheck> {
    let g = &model.grid;
    let ns = g.n_side;
    if !(sep1 < sep2 && k0 + sep2 < ns) {
        return Err(Error::param("sep", format!("need sep1 < sep2 and k0 + sep2 < {ns}")));
    }
    let dl = g.ell[k0 + sep2] - g.ell[k0 + sep1];
    let est = run_vector(n, 2, DEFAULT_BATCHES, stream, |rng, out| {
        let f = model.sample_boundary_field(rng);
        let p = |k: usize| 0.5 * (f[k] + f[ns + k]);
        out[0] = (p(k0 + sep1) - p(k0)).powi(2);
        out[1] = (p(k0 + sep2) - p(k0)).powi(2);
    })?;
    let rate = (est[1].mean - est[0].mean) / dl;
    // The two squared increments are positively correlated; the
    // independent-sum bound is conservative.
    let stderr = (est[0].stderr.powi(2) + est[1].stderr.powi(2)).sqrt() / dl;
    let var_diff = |j: usize| {
        let idx = [k0, ns + k0, j, ns + j];
        let w = [-0.5, -0.5, 0.5, 0.5];
        let mut s = 0.0;
        for (a, wa) in idx.iter().zip(w) {
            for (b, wb) in idx.iter().zip(w) {
                s += wa * wb * kernel_cell(g, *a, *b);
            }
        }
        s
    };
    let kernel_rate = (var_diff(k0 + sep2) - var_diff(k0 + sep1)) / dl;
    Ok(RadialCheck { rate, stderr, kernel_rate })
}

/// Default δ grid for moment fits.
pub fn default_delta_grid() -> Vec<f64> {
    log_grid(1e-4, 1e-2, 7)
}

/// Estimate of `E[x̄^λ]` as a plain [`Estimate`].
pub fn cell_estimate(c: &MomentCell) -> Estimate {
    Estimate { mean: c.estimate, stderr: c.stderr, n: c.n, total: c.estimate * c.n as f64, n_batches: DEFAULT_BATCHES }
}
