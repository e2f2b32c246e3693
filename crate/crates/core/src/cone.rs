//! Correlated planar Brownian motion and the approximate quadrant event
//! `{inf_{[0,t]} L >= -δ, inf_{[0,t]} R >= -δ}`.
//!
//! Two samplers are provided. The grid sampler draws Cholesky increments on
//! a uniform time grid and corrects each coordinate's minimum with an exact
//! Brownian-bridge draw. The walk-on-spheres sampler works in decorrelated
//! coordinates, where the event is survival in a wedge of opening
//! `arccos(-c)`, and jumps between inscribed disks using the exact disk exit
//! time law. Only the inner ε-shell is approximated.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::mc::{run_vector, Estimate, DEFAULT_BATCHES};
use crate::rng::{RandomStream, StreamRng};
use crate::special::{bessel_i, bessel_j0_zero, bessel_j1};
use crate::stats::{loglog_fit, two_var_fit, ExponentFit, FitPoint, TwoVarFit};
use crate::stochastic::normal;

/// `c = -cos(4π/κ′)`.
pub fn correlation_from_kappa(kappa: f64) -> Result<f64> {
    if !(kappa > 4.0 && kappa.is_finite()) {
        return Err(Error::param("kappa", format!("need kappa > 4, got {kappa}")));
    }
    Ok(-(4.0 * PI / kappa).cos())
}

/// Quadrant exponent `π / arccos(-c)`.
pub fn sigma_from_correlation(c: f64) -> Result<f64> {
    if !(c > -1.0 && c < 1.0) {
        return Err(Error::param("c", format!("need |c| < 1, got {c}")));
    }
    Ok(PI / (-c).acos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub c: f64,
    pub kappa: Option<f64>,
}

impl CorrelationSpec {
    pub fn from_kappa(kappa: f64) -> Result<Self> {
        Ok(Self { c: correlation_from_kappa(kappa)?, kappa: Some(kappa) })
    }

    pub fn from_correlation(c: f64) -> Result<Self> {
        sigma_from_correlation(c)?;
        Ok(Self { c, kappa: None })
    }

    pub fn sigma(&self) -> f64 {
        PI / (-self.c).acos()
    }

    fn s(&self) -> f64 {
        (1.0 - self.c * self.c).sqrt()
    }
}

/// Grid path of `(L, R)` with per-step bridge minima.
#[derive(Debug, Clone, PartialEq)]
pub struct Path2D {
    pub dt: f64,
    pub c: f64,
    pub l: Vec<f64>,
    pub r: Vec<f64>,
    /// Minimum of L over step `k` (between grid points `k` and `k+1`).
    pub l_min: Vec<f64>,
    pub r_min: Vec<f64>,
}

impl Path2D {
    pub fn horizon(&self) -> f64 {
        self.dt * (self.l.len() - 1) as f64
    }
}

/// Exact minimum of a unit-variance Brownian bridge from `x0` to `x1` over `h`.
#[inline]
fn bridge_min(x0: f64, x1: f64, h: f64, rng: &mut StreamRng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    0.5 * (x0 + x1 - ((x1 - x0).powi(2) - 2.0 * h * u.ln()).sqrt())
}

pub fn sample_correlated_bm(spec: CorrelationSpec, dt: f64, horizon: f64, stream: RandomStream) -> Result<Path2D> {
    require_positive("dt", dt)?;
    require_positive("horizon", horizon)?;
    let steps = (horizon / dt).round().max(1.0) as usize;
    let mut rng = stream.rng();
    let (c, s, sd) = (spec.c, spec.s(), dt.sqrt());
    let mut path = Path2D {
        dt,
        c,
        l: Vec::with_capacity(steps + 1),
        r: Vec::with_capacity(steps + 1),
        l_min: Vec::with_capacity(steps),
        r_min: Vec::with_capacity(steps),
    };
    let (mut l, mut r) = (0.0, 0.0);
    path.l.push(l);
    path.r.push(r);
    for _ in 0..steps {
        let (z1, z2) = (normal(&mut rng), normal(&mut rng));
        let (l1, r1) = (l + sd * z1, r + sd * (c * z1 + s * z2));
        path.l_min.push(bridge_min(l, l1, dt, &mut rng));
        path.r_min.push(bridge_min(r, r1, dt, &mut rng));
        l = l1;
        r = r1;
        path.l.push(l);
        path.r.push(r);
    }
    Ok(path)
}

/// Whether both bridge-corrected coordinate minima over `[0, t]` stay `>= -δ`.
pub fn cone_indicator(path: &Path2D, delta: f64, t: f64) -> Result<bool> {
    let steps = (t / path.dt).round() as usize;
    if steps > path.l_min.len() || t < 0.0 {
        return Err(Error::param("t", format!("{t} outside path horizon {}", path.horizon())));
    }
    Ok(path.l_min[..steps].iter().all(|&m| m >= -delta) && path.r_min[..steps].iter().all(|&m| m >= -delta))
}

/// Exit-time law of planar Brownian motion from the centre of the unit disk.
///
/// `P[T > s] = Σ_k 2/(j_k J1(j_k)) exp(-j_k² s / 2)` over the zeros of `J0`.
pub struct DiskExitLaw {
    s: Vec<f64>,
    cdf: Vec<f64>,
    c1: f64,
    rate1: f64,
}

const DISK_TERMS: usize = 200;
const DISK_S_MIN: f64 = 0.004;
const DISK_S_MAX: f64 = 3.0;
const DISK_GRID: usize = 1 << 15;

impl DiskExitLaw {
    fn build() -> Self {
        let zeros: Vec<f64> = (1..=DISK_TERMS).map(bessel_j0_zero).collect();
        let coef: Vec<f64> = zeros.iter().map(|&j| 2.0 / (j * bessel_j1(j))).collect();
        let survival = |s: f64| -> f64 { zeros.iter().zip(&coef).map(|(&j, &a)| a * (-0.5 * j * j * s).exp()).sum() };
        let mut s = Vec::with_capacity(DISK_GRID + 1);
        let mut cdf = Vec::with_capacity(DISK_GRID + 1);
        let mut last = 0.0f64;
        for i in 0..=DISK_GRID {
            let x = DISK_S_MIN + (DISK_S_MAX - DISK_S_MIN) * i as f64 / DISK_GRID as f64;
            let f = (1.0 - survival(x)).clamp(0.0, 1.0).max(last);
            s.push(x);
            cdf.push(f);
            last = f;
        }
        Self { s, cdf, c1: coef[0], rate1: 0.5 * zeros[0] * zeros[0] }
    }

    pub fn get() -> &'static DiskExitLaw {
        static LAW: OnceLock<DiskExitLaw> = OnceLock::new();
        LAW.get_or_init(DiskExitLaw::build)
    }

    /// `P[T > s]`.
    pub fn survival(&self, s: f64) -> f64 {
        if s >= DISK_S_MAX {
            return self.c1 * (-self.rate1 * s).exp();
        }
        if s <= DISK_S_MIN {
            return 1.0;
        }
        let x = (s - DISK_S_MIN) / (DISK_S_MAX - DISK_S_MIN) * DISK_GRID as f64;
        let i = (x.floor() as usize).min(DISK_GRID - 1);
        let w = x - i as f64;
        1.0 - (self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w)
    }

    /// Inverse-CDF draw of the exit time.
    #[inline]
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        let u: f64 = rng.random();
        let top = self.cdf[DISK_GRID];
        if u >= top {
            // One-term tail, accurate to e^{-(j2²-j1²)s/2} beyond DISK_S_MAX.
            return (self.c1 / (1.0 - u).max(f64::MIN_POSITIVE)).ln() / self.rate1;
        }
        let i = self.cdf.partition_point(|&f| f <= u);
        if i == 0 {
            return DISK_S_MIN;
        }
        let (f0, f1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if f1 > f0 { (u - f0) / (f1 - f0) } else { 0.5 };
        self.s[i - 1] + w * (self.s[i] - self.s[i - 1])
    }
}

/// Default inner shell, relative to δ.
pub const WOS_EPSILON: f64 = 1e-7;

/// Survival time of the wedge walk started from the origin with δ = 1,
/// capped at `t_cap`. Returns `t_cap` if the walk survives beyond it.
pub fn wedge_walk_time(c: f64, t_cap: f64, eps: f64, law: &DiskExitLaw, rng: &mut StreamRng) -> f64 {
    let s = (1.0 - c * c).sqrt();
    let (mut x, mut y, mut time) = (0.0f64, 0.0f64, 0.0f64);
    loop {
        let d1 = x + 1.0;
        let d2 = c * x + s * y + 1.0;
        let r = d1.min(d2);
        if r < eps {
            return time;
        }
        let step = r * r * law.sample(rng);
        if time + step >= t_cap {
            return t_cap;
        }
        time += step;
        let theta = 2.0 * PI * rng.random::<f64>();
        let (sn, cs) = theta.sin_cos();
        x += r * cs;
        y += r * sn;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConeMethod {
    /// Uniform grid with bridge-corrected minima.
    Grid { dt: f64 },
    /// Exact-in-law walk on inscribed disks with an inner shell `eps · δ`.
    WalkOnSpheres { eps: f64 },
}

impl Default for ConeMethod {
    fn default() -> Self {
        ConeMethod::WalkOnSpheres { eps: WOS_EPSILON }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeEventConfig {
    pub delta: f64,
    pub t: f64,
    pub n_samples: u64,
    pub method: ConeMethod,
}

impl ConeEventConfig {
    pub fn validate(&self) -> Result<()> {
        require_positive("delta", self.delta)?;
        require_positive("t", self.t)?;
        if let ConeMethod::Grid { dt } = self.method {
            require_positive("dt", dt)?;
        }
        if self.n_samples == 0 {
            return Err(Error::param("n_samples", "must be >= 1"));
        }
        Ok(())
    }

    /// Whether `t >= δ^{1/2}`, the regime where the tail estimate is uniform.
    pub fn uniform_regime(&self) -> bool {
        self.t >= self.delta.sqrt()
    }
}

/// One `(δ, t)` cell of a cone-probability grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeCell {
    pub delta: f64,
    pub t: f64,
    pub hits: u64,
    pub n: u64,
    pub p_hat: f64,
    pub stderr: f64,
    pub zero_hits: bool,
    /// Rule-of-three upper bound when no hits were seen.
    pub upper_bound: Option<f64>,
}

impl ConeCell {
    fn from_estimate(delta: f64, t: f64, e: &Estimate) -> Self {
        Self {
            delta,
            t,
            hits: e.total.round() as u64,
            n: e.n,
            p_hat: e.mean,
            stderr: e.stderr,
            zero_hits: e.total == 0.0,
            upper_bound: e.zero_hit_upper(),
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.p_hat, stderr: self.stderr, n: self.n, total: self.hits as f64, n_batches: 0 }
    }
}

/// Estimates every `(δ, t)` cell on common random numbers, so the estimates
/// are monotone in both arguments. Cells are ordered δ-major.
pub fn estimate_cone_grid(spec: CorrelationSpec, deltas: &[f64], ts: &[f64], n: u64, method: ConeMethod, stream: RandomStream) -> Result<Vec<ConeCell>> {
    for &d in deltas {
        require_positive("delta", d)?;
    }
    for &t in ts {
        require_positive("t", t)?;
    }
    let cells: Vec<(f64, f64)> = deltas.iter().flat_map(|&d| ts.iter().map(move |&t| (d, t))).collect();
    let dim = cells.len();
    let est = match method {
        ConeMethod::WalkOnSpheres { eps } => {
            require_positive("eps", eps)?;
            let law = DiskExitLaw::get();
            // δ = 1 units: survival to t means the scaled walk outlives t/δ².
            let scaled: Vec<f64> = cells.iter().map(|&(d, t)| t / (d * d)).collect();
            let cap = scaled.iter().copied().fold(0.0, f64::max);
            run_vector(n, dim, DEFAULT_BATCHES, stream, |rng, out| {
                let tau = wedge_walk_time(spec.c, cap, eps, law, rng);
                for (o, &s) in out.iter_mut().zip(&scaled) {
                    *o = if tau >= s { 1.0 } else { 0.0 };
                }
            })?
        }
        ConeMethod::Grid { dt } => {
            require_positive("dt", dt)?;
            let horizon = ts.iter().copied().fold(0.0, f64::max);
            let steps: Vec<usize> = ts.iter().map(|&t| (t / dt).round() as usize).collect();
            let c = spec.c;
            let s = spec.s();
            let sd = dt.sqrt();
            let total = (horizon / dt).round() as usize;
            run_vector(n, dim, DEFAULT_BATCHES, stream, |rng, out| {
                // Running minima of L and R recorded at each requested t.
                let mut mins = vec![(0.0f64, 0.0f64); ts.len()];
                let (mut l, mut r, mut ml, mut mr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
                let floor = -deltas.iter().copied().fold(0.0, f64::max);
                for k in 1..=total {
                    let (z1, z2) = (normal(rng), normal(rng));
                    let (l1, r1) = (l + sd * z1, r + sd * (c * z1 + s * z2));
                    ml = ml.min(bridge_min(l, l1, dt, rng));
                    mr = mr.min(bridge_min(r, r1, dt, rng));
                    l = l1;
                    r = r1;
                    for (j, &sj) in steps.iter().enumerate() {
                        if sj == k {
                            mins[j] = (ml, mr);
                        }
                    }
                    if ml < floor || mr < floor {
                        // Every cell fails from here on.
                        for (j, &sj) in steps.iter().enumerate() {
                            if sj >= k {
                                mins[j] = (ml, mr);
                            }
                        }
                        break;
                    }
                }
                for (i, &(d, t)) in cells.iter().enumerate() {
                    let j = ts.iter().position(|&x| x == t).unwrap();
                    out[i] = if mins[j].0 >= -d && mins[j].1 >= -d { 1.0 } else { 0.0 };
                }
            })?
        }
    };
    Ok(cells.iter().zip(&est).map(|(&(d, t), e)| ConeCell::from_estimate(d, t, e)).collect())
}

/// Monte Carlo `P[inf L >= -δ, inf R >= -δ on [0, t]]` for one cell.
pub fn estimate_cone_prob(spec: CorrelationSpec, config: &ConeEventConfig, stream: RandomStream) -> Result<ConeCell> {
    config.validate()?;
    Ok(estimate_cone_grid(spec, &[config.delta], &[config.t], config.n_samples, config.method, stream)?[0])
}

/// `(2Φ(δ/√t) − 1)²`, the independent-coordinate closed form.
pub fn independent_cone_prob(delta: f64, t: f64) -> f64 {
    let x = delta / t.sqrt();
    let p = statrs::function::erf::erf(x / std::f64::consts::SQRT_2);
    p * p
}

/// Exact survival probability of the correlated walk in its wedge from the
/// Bessel-series solution of the heat equation in a wedge.
pub fn wedge_survival_exact(c: f64, delta: f64, t: f64) -> f64 {
    let theta = (-c).acos();
    let r0 = delta * (2.0 / (1.0 + c)).sqrt();
    let phi0 = 0.5 * theta;
    let z = r0 * r0 / (4.0 * t);
    let mut sum = 0.0;
    for n in (1..400).step_by(2) {
        let nf = n as f64;
        let nu = nf * PI / theta;
        let term = (nf * PI * phi0 / theta).sin() / nf * (bessel_i(0.5 * (nu - 1.0), z) + bessel_i(0.5 * (nu + 1.0), z));
        sum += term;
        if term.abs() < 1e-16 * sum.abs() && n > 20 {
            break;
        }
    }
    (2.0 * r0 / (2.0 * PI * t).sqrt()) * (-z).exp() * sum
}

/// Exponent fits of a cone-probability grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeFit {
    /// Per-`t` fits of `log p` against `log δ`.
    pub delta_fits: Vec<(f64, ExponentFit)>,
    /// Per-`δ` fits of `log p` against `log t` (slope `-σ/2`).
    pub t_fits: Vec<(f64, ExponentFit)>,
    pub sigma_from_delta: f64,
    pub sigma_from_t: Option<f64>,
    pub joint: Option<TwoVarFit>,
    pub excluded_cells: usize,
}

/// Fits σ from a grid of cells. With several `t` values the joint surface
/// fit is also returned.
pub fn fit_cone_exponents(cells: &[ConeCell]) -> Result<ConeFit> {
    let mut ts: Vec<f64> = cells.iter().map(|c| c.t).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut ds: Vec<f64> = cells.iter().map(|c| c.delta).collect();
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    let point = |c: &ConeCell| FitPoint { x: c.delta, x2: Some(c.t), estimate: c.p_hat, stderr: c.stderr, hits: c.hits as f64 };
    let delta_fits: Vec<(f64, ExponentFit)> = ts
        .iter()
        .filter_map(|&t| {
            let pts: Vec<FitPoint> = cells.iter().filter(|c| c.t == t).map(|c| FitPoint { x2: None, ..point(c) }).collect();
            loglog_fit(&pts).ok().map(|f| (t, f))
        })
        .collect();
    if delta_fits.is_empty() {
        return Err(Error::InsufficientData("no t slice has three usable δ cells".into()));
    }
    let t_fits: Vec<(f64, ExponentFit)> = ds
        .iter()
        .filter_map(|&d| {
            let pts: Vec<FitPoint> = cells.iter().filter(|c| c.delta == d).map(|c| FitPoint { x: c.t, x2: None, ..point(c) }).collect();
            loglog_fit(&pts).ok().map(|f| (d, f))
        })
        .collect();
    let joint = if ts.len() >= 2 && ds.len() >= 2 { Some(two_var_fit(&cells.iter().map(point).collect::<Vec<_>>())?) } else { None };
    let sigma_from_delta = match &joint {
        Some(j) => j.slope_delta,
        None => delta_fits[0].1.slope,
    };
    let sigma_from_t = joint.as_ref().map(|j| -2.0 * j.slope_t);
    Ok(ConeFit { delta_fits, t_fits, sigma_from_delta, sigma_from_t, joint, excluded_cells: cells.iter().filter(|c| c.p_hat <= 0.0).count() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::log_grid;

    #[test]
    fn correlation_examples() {
        assert!(correlation_from_kappa(8.0).unwrap().abs() < 1e-15);
        assert!((correlation_from_kappa(16.0).unwrap() + 0.5f64.sqrt()).abs() < 1e-15);
        let c = correlation_from_kappa(1e9).unwrap();
        assert!(c > -1.0 && c < -0.999_999);
        assert!(correlation_from_kappa(4.0).is_err());
    }

    #[test]
    fn sigma_examples() {
        assert!((sigma_from_correlation(0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((sigma_from_correlation(-0.5f64.sqrt()).unwrap() - 4.0).abs() < 1e-12);
        assert!(sigma_from_correlation(1.0).is_err());
        for k in [10.0, 12.0, 16.0, 24.0] {
            let s = sigma_from_correlation(correlation_from_kappa(k).unwrap()).unwrap();
            assert!((s - k / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_exit_law_mean_and_normalization() {
        let law = DiskExitLaw::get();
        // E[T] = r²/2 for the unit disk in two dimensions.
        let mut mean = 0.0;
        let h = 1e-4;
        let mut s = 0.0;
        while s < 12.0 {
            mean += h * 0.5 * (law.survival(s) + law.survival(s + h));
            s += h;
        }
        assert!((mean - 0.5).abs() < 1e-5, "{mean}");
        assert!((law.survival(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disk_exit_sampler_mean() {
        let law = DiskExitLaw::get();
        let e = crate::mc::run_scalar(400_000, RandomStream::root(2), |rng| law.sample(rng)).unwrap();
        assert!((e.mean - 0.5).abs() < 3.0 * e.stderr, "{} ± {}", e.mean, e.stderr);
        // E[T²] = 3r⁴/8 in two dimensions.
        let e2 = crate::mc::run_scalar(400_000, RandomStream::root(3), |rng| law.sample(rng).powi(2)).unwrap();
        assert!((e2.mean - 0.375).abs() < 3.0 * e2.stderr, "{} ± {}", e2.mean, e2.stderr);
    }

    #[test]
    fn wedge_series_reduces_to_closed_form() {
        for &d in &[0.05, 0.1, 0.2, 0.4, 1.0] {
            let a = wedge_survival_exact(0.0, d, 1.0);
            let b = independent_cone_prob(d, 1.0);
            assert!((a / b - 1.0).abs() < 1e-10, "δ={d}: {a} vs {b}");
        }
    }

    #[test]
    fn closed_form_value() {
        assert!((independent_cone_prob(0.1, 1.0) - 0.006_346).abs() < 1e-6);
    }

    #[test]
    fn correlated_increments() {
        for &c in &[0.0, -0.5] {
            let spec = CorrelationSpec::from_correlation(c).unwrap();
            let root = RandomStream::root(31);
            let n = 20_000u64;
            let ends: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let p = sample_correlated_bm(spec, 0.1, 1.0, root.child(1, i)).unwrap();
                    (*p.l.last().unwrap(), *p.r.last().unwrap())
                })
                .collect();
            let nf = n as f64;
            let cov = ends.iter().map(|(l, r)| l * r).sum::<f64>() / nf;
            let var_l = ends.iter().map(|(l, _)| l * l).sum::<f64>() / nf;
            // Var of a product of unit normals with correlation c is 1 + c².
            assert!((cov - c).abs() < 3.0 * ((1.0 + c * c) / nf).sqrt(), "c={c}: {cov}");
            assert!((var_l - 1.0).abs() < 3.0 * (2.0 / nf).sqrt(), "{var_l}");
        }
    }

    #[test]
    fn indicator_basic_cases_and_monotonicity() {
        let spec = CorrelationSpec::from_kappa(16.0).unwrap();
        let p = sample_correlated_bm(spec, 1e-3, 1.0, RandomStream::new(4, 4)).unwrap();
        let floor = p.l_min.iter().chain(&p.r_min).copied().fold(0.0, f64::min);
        assert!(cone_indicator(&p, -floor + 1e-9, 1.0).unwrap());
        assert!(!cone_indicator(&p, 0.0, 1.0).unwrap());
        let ds = log_grid(0.01, 2.0, 12);
        let ts = [0.1, 0.3, 0.6, 1.0];
        for &t in &ts {
            let v: Vec<bool> = ds.iter().map(|&d| cone_indicator(&p, d, t).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[0] <= w[1]));
        }
        for &d in &ds {
            let v: Vec<bool> = ts.iter().map(|&t| cone_indicator(&p, d, t).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(cone_indicator(&p, 0.1, 2.0).is_err());
    }

    #[test]
    fn wos_independent_case_matches_closed_form() {
        let spec = CorrelationSpec::from_correlation(0.0).unwrap();
        let ds = [0.05, 0.1, 0.2, 0.4];
        let cells = estimate_cone_grid(spec, &ds, &[1.0], 400_000, ConeMethod::default(), RandomStream::root(6)).unwrap();
        for c in &cells {
            let exact = independent_cone_prob(c.delta, 1.0);
            assert!((c.p_hat - exact).abs() < 3.0 * c.stderr, "δ={}: {} ± {} vs {exact}", c.delta, c.p_hat, c.stderr);
        }
    }

    #[test]
    fn wos_correlated_case_matches_series() {
        let spec = CorrelationSpec::from_kappa(16.0).unwrap();
        let cells = estimate_cone_grid(spec, &[0.2, 0.4], &[0.5, 1.0], 400_000, ConeMethod::default(), RandomStream::root(7)).unwrap();
        for c in &cells {
            let exact = wedge_survival_exact(spec.c, c.delta, c.t);
            assert!((c.p_hat - exact).abs() < 3.0 * c.stderr, "({}, {}): {} ± {} vs {exact}", c.delta, c.t, c.p_hat, c.stderr);
        }
    }

    #[test]
    fn grid_sampler_matches_closed_form_at_moderate_dt() {
        let spec = CorrelationSpec::from_correlation(0.0).unwrap();
        let cells = estimate_cone_grid(spec, &[0.2, 0.4], &[1.0], 20_000, ConeMethod::Grid { dt: 1e-3 }, RandomStream::root(8)).unwrap();
        for c in &cells {
            let exact = independent_cone_prob(c.delta, 1.0);
            // Per-coordinate bridge minima are exact when c = 0.
            assert!((c.p_hat - exact).abs() < 3.0 * c.stderr, "δ={}: {} ± {} vs {exact}", c.delta, c.p_hat, c.stderr);
        }
    }

    #[test]
    fn large_delta_gives_probability_near_one() {
        let spec = CorrelationSpec::from_kappa(16.0).unwrap();
        let cells = estimate_cone_grid(spec, &[8.0], &[1.0], 10_000, ConeMethod::default(), RandomStream::root(1)).unwrap();
        assert!(cells[0].p_hat > 0.999);
    }

    #[test]
    fn brownian_scaling_self_consistency() {
        let spec = CorrelationSpec::from_kappa(12.0).unwrap();
        let a = estimate_cone_grid(spec, &[0.2], &[0.25], 200_000, ConeMethod::default(), RandomStream::root(10)).unwrap()[0];
        let b = estimate_cone_grid(spec, &[0.4], &[1.0], 200_000, ConeMethod::default(), RandomStream::root(11)).unwrap()[0];
        assert!(crate::stats::agree(&a.estimate(), &b.estimate(), 3.0));
    }

    #[test]
    fn crn_grid_is_monotone() {
        let spec = CorrelationSpec::from_kappa(16.0).unwrap();
        let ds = log_grid(0.1, 0.4, 4);
        let ts = [0.5, 1.0, 2.0];
        let cells = estimate_cone_grid(spec, &ds, &ts, 20_000, ConeMethod::default(), RandomStream::root(12)).unwrap();
        let get = |i: usize, j: usize| cells[i * ts.len() + j].p_hat;
        for i in 0..ds.len() {
            for j in 0..ts.len() {
                if i + 1 < ds.len() {
                    assert!(get(i, j) <= get(i + 1, j));
                }
                if j + 1 < ts.len() {
                    assert!(get(i, j) >= get(i, j + 1));
                }
            }
        }
    }

    #[test]
    fn exact_surface_fit() {
        let mut cells = Vec::new();
        for &t in &[0.5f64, 1.0, 2.0, 4.0] {
            for &d in &log_grid(0.1, 0.4, 5) {
                let p = d.powi(4) * t.powi(-2);
                cells.push(ConeCell { delta: d, t, hits: 100, n: 1000, p_hat: p, stderr: 0.01 * p, zero_hits: false, upper_bound: None });
            }
        }
        let f = fit_cone_exponents(&cells).unwrap();
        assert!((f.sigma_from_delta - 4.0).abs() < 1e-10);
        assert!((f.sigma_from_t.unwrap() - 4.0).abs() < 1e-10);
        assert!((f.joint.unwrap().pooled_sigma - 4.0).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exponent_identity(k in 4.0001f64..128.0) {
                let s = sigma_from_correlation(correlation_from_kappa(k).unwrap()).unwrap();
                prop_assert!((s - k / 4.0).abs() <= 1e-12);
            }

            #[test]
            fn exponent_identity_large_kappa(k in 128.0f64..1e4) {
                // arccos is ill-conditioned near 1; the error grows like k³ ε.
                let s = sigma_from_correlation(correlation_from_kappa(k).unwrap()).unwrap();
                prop_assert!((s / (k / 4.0) - 1.0).abs() <= 1e-15 * k * k);
            }

            #[test]
            fn correlation_in_range_and_decreasing(k in 8.0f64..1e4, dk in 1e-3f64..10.0) {
                let a = correlation_from_kappa(k).unwrap();
                let b = correlation_from_kappa(k + dk).unwrap();
                prop_assert!(a > -1.0 && a < 1.0);
                prop_assert!(b < a);
            }
        }
    }
}
