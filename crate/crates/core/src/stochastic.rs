//! Drifted Brownian motion, first passage with Brownian-bridge correction,
//! the closed-form Laplace transform of the hitting time, and Bessel paths.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{require_open, require_positive, Error, Result};
use crate::mc::{run_vector, Estimate, DEFAULT_BATCHES};
use crate::rng::{RandomStream, StreamRng};

/// Variance rate of `V_t = B_{2t} + a t`.
pub const VARIANCE_RATE: f64 = 2.0;

/// Bridge crossing probabilities below this are treated as zero.
const NEGLIGIBLE_CROSSING: f64 = 1e-12;

#[inline]
pub fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Probability that a Brownian bridge of variance rate `var` from `v0` to
/// `v1` over time `h` touches `level`, both endpoints being below it.
#[inline]
pub fn bridge_crossing_prob(v0: f64, v1: f64, level: f64, var: f64, h: f64) -> f64 {
    if v0 >= level || v1 >= level {
        return 1.0;
    }
    (-2.0 * (level - v0) * (level - v1) / (var * h)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftedBMParams {
    pub a: f64,
    pub dt: f64,
}

impl DriftedBMParams {
    pub fn new(a: f64, dt: f64) -> Result<Self> {
        require_positive("a", a)?;
        require_positive("dt", dt)?;
        Ok(Self { a, dt })
    }
}

/// Drifted path on the uniform grid `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftedPath {
    pub dt: f64,
    pub a: f64,
    pub values: Vec<f64>,
}

impl DriftedPath {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.values.len() - 1)
    }
}

pub fn sample_drifted_bm(params: DriftedBMParams, horizon: f64, stream: RandomStream) -> Result<DriftedPath> {
    let params = DriftedBMParams::new(params.a, params.dt)?;
    require_positive("horizon", horizon)?;
    let steps = (horizon / params.dt).ceil() as usize;
    let mut rng = stream.rng();
    let mut values = Vec::with_capacity(steps + 1);
    let (mu, sd) = (params.a * params.dt, (VARIANCE_RATE * params.dt).sqrt());
    let mut v = 0.0;
    values.push(v);
    for _ in 0..steps {
        v += mu + sd * normal(&mut rng);
        values.push(v);
    }
    Ok(DriftedPath { dt: params.dt, a: params.a, values })
}

/// First-passage outcome. A path that never reaches the level inside its
/// horizon reports `NotHit`, never a fabricated time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Passage {
    Hit(f64),
    NotHit,
}

impl Passage {
    pub fn time(self) -> Option<f64> {
        match self {
            Passage::Hit(t) => Some(t),
            Passage::NotHit => None,
        }
    }

    pub fn hit_by(self, t: f64) -> bool {
        matches!(self, Passage::Hit(s) if s <= t)
    }
}

/// First grid time at which the path reaches `level`. With `bridge` set, a
/// step whose endpoints both stay below also fires with the bridge crossing
/// probability, drawn from the given generator.
pub fn hitting_time_on_path(path: &DriftedPath, level: f64, bridge: Option<&mut StreamRng>) -> Result<Passage> {
    require_positive("level", level)?;
    let mut bridge = bridge;
    for k in 1..path.values.len() {
        let (v0, v1) = (path.values[k - 1], path.values[k]);
        if v1 >= level {
            return Ok(Passage::Hit(path.time(k)));
        }
        if let Some(rng) = bridge.as_deref_mut() {
            let p = bridge_crossing_prob(v0, v1, level, VARIANCE_RATE, path.dt);
            let u: f64 = rng.random();
            if u < p {
                return Ok(Passage::Hit(path.time(k)));
            }
        }
    }
    Ok(Passage::NotHit)
}

/// Locates the first crossing of `level` inside one Gaussian segment.
///
/// The segment is split by exact Brownian-bridge midpoints while the bridge
/// crossing probability is non-negligible and the step exceeds `dt_min`; at
/// the finest scale the crossing fires with the bridge probability. Returns
/// the right end of the finest sub-step that fires.
pub fn segment_first_passage(
    t0: f64,
    v0: f64,
    t1: f64,
    v1: f64,
    level: f64,
    var: f64,
    dt_min: f64,
    rng: &mut StreamRng,
) -> Option<f64> {
    let h = t1 - t0;
    let p = bridge_crossing_prob(v0, v1, level, var, h);
    if p < NEGLIGIBLE_CROSSING {
        return None;
    }
    if h <= dt_min * 1.000_001 {
        if v1 >= level {
            return Some(t1);
        }
        let u: f64 = rng.random();
        return (u < p).then_some(t1);
    }
    let tm = 0.5 * (t0 + t1);
    let vm = 0.5 * (v0 + v1) + (var * h / 4.0).sqrt() * normal(rng);
    if vm >= level {
        return segment_first_passage(t0, v0, tm, vm, level, var, dt_min, rng).or(Some(tm));
    }
    segment_first_passage(t0, v0, tm, vm, level, var, dt_min, rng)
        .or_else(|| segment_first_passage(tm, vm, t1, v1, level, var, dt_min, rng))
}

/// Stepping controls for the generator form of the first passage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageConfig {
    /// Finest time resolution.
    pub dt_min: f64,
    /// Coarsest step used far from the level.
    pub h_max: f64,
    pub horizon: f64,
}

impl PassageConfig {
    /// Horizon comfortably past the mean hitting time `level / a`.
    pub fn for_level(a: f64, level: f64, dt_min: f64) -> Self {
        Self { dt_min, h_max: 1.0, horizon: 20.0 * level / a + 50.0 }
    }
}

/// First passage of `V_t = B_{2t} + a t` to `level > 0`, using steps
/// proportional to the squared distance from the level and bridge-refined
/// crossing detection.
pub fn first_passage_drifted(a: f64, level: f64, cfg: &PassageConfig, rng: &mut StreamRng) -> Passage {
    let (mut t, mut v) = (0.0, 0.0);
    while t < cfg.horizon {
        let gap = level - v;
        let h = (gap * gap / (16.0 * VARIANCE_RATE)).clamp(cfg.dt_min, cfg.h_max).min(cfg.horizon - t).max(cfg.dt_min);
        let v1 = v + a * h + (VARIANCE_RATE * h).sqrt() * normal(rng);
        if let Some(tau) = segment_first_passage(t, v, t + h, v1, level, VARIANCE_RATE, cfg.dt_min, rng) {
            return Passage::Hit(tau);
        }
        t += h;
        v = v1;
    }
    Passage::NotHit
}

/// Level `A_δ = (2/γ) log(1/δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingProblem {
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub level: f64,
}

impl HittingProblem {
    pub fn new(gamma: f64, delta: f64, lambda: f64) -> Result<Self> {
        require_open("gamma", gamma, 0.0, std::f64::consts::SQRT_2)?;
        require_open("delta", delta, 0.0, 1.0)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { gamma, delta, lambda, level: hitting_level(gamma, delta) })
    }
}

pub fn hitting_level(gamma: f64, delta: f64) -> f64 {
    (2.0 / gamma) * (1.0 / delta).ln()
}

/// Root `β` of `β² + aβ = λ` with `β >= 0`.
pub fn laplace_beta(a: f64, lambda: f64) -> f64 {
    0.5 * ((a * a + 4.0 * lambda).sqrt() - a)
}

/// Closed form `E[exp(-λ τ_δ)] = δ^{(√(a²+4λ) − a)/γ}`.
pub fn laplace_theory(a: f64, gamma: f64, lambda: f64, delta: f64) -> Result<f64> {
    require_positive("a", a)?;
    require_positive("gamma", gamma)?;
    require_open("delta", delta, 0.0, 1.0)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    Ok(delta.powf(2.0 * laplace_beta(a, lambda) / gamma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceEstimate {
    pub lambda: f64,
    pub estimate: Estimate,
    pub theory: f64,
    /// Fraction of paths that did not reach the level within the horizon.
    pub exhausted_fraction: f64,
    pub exhaustion_warning: bool,
}

/// Monte Carlo `E[exp(-λ τ_δ)]` for several `λ` on common paths.
pub fn estimate_laplace_multi(
    a: f64,
    gamma: f64,
    lambdas: &[f64],
    delta: f64,
    n_samples: u64,
    dt: f64,
    stream: RandomStream,
) -> Result<Vec<LaplaceEstimate>> {
    require_positive("a", a)?;
    require_positive("dt", dt)?;
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be >= 1"));
    }
    let theory: Vec<f64> = lambdas.iter().map(|&l| laplace_theory(a, gamma, l, delta)).collect::<Result<_>>()?;
    let level = HittingProblem::new(gamma, delta, 0.0)?.level;
    let cfg = PassageConfig::for_level(a, level, dt);
    let k = lambdas.len();
    let batches = DEFAULT_BATCHES.min((n_samples / 2) as usize).max(8);
    let est = if n_samples >= 2 * batches as u64 {
        run_vector(n_samples, k + 1, batches, stream, |rng, out| match first_passage_drifted(a, level, &cfg, rng) {
            Passage::Hit(tau) => {
                for (o, &l) in out.iter_mut().zip(lambdas) {
                    *o = (-l * tau).exp();
                }
            }
            Passage::NotHit => out[k] = 1.0,
        })?
    } else {
        // Too few samples for batching: plain mean, no error bar.
        let mut rng = stream.rng();
        let mut sums = vec![0.0; k + 1];
        for _ in 0..n_samples {
            match first_passage_drifted(a, level, &cfg, &mut rng) {
                Passage::Hit(tau) => lambdas.iter().enumerate().for_each(|(i, &l)| sums[i] += (-l * tau).exp()),
                Passage::NotHit => sums[k] += 1.0,
            }
        }
        sums.iter().map(|s| Estimate { mean: s / n_samples as f64, stderr: f64::NAN, n: n_samples, total: *s, n_batches: 0 }).collect()
    };
    let exhausted = est[k].mean;
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| LaplaceEstimate {
            lambda,
            estimate: if lambda == 0.0 { Estimate::exact(1.0, n_samples) } else { est[i] },
            theory: theory[i],
            exhausted_fraction: exhausted,
            exhaustion_warning: exhausted > 1e-3,
        })
        .collect())
}

pub fn estimate_laplace(a: f64, gamma: f64, lambda: f64, delta: f64, n_samples: u64, dt: f64, stream: RandomStream) -> Result<LaplaceEstimate> {
    Ok(estimate_laplace_multi(a, gamma, &[lambda], delta, n_samples, dt, stream)?.remove(0))
}

/// Default absorption floor for Bessel paths of dimension below 2.
pub const BESSEL_FLOOR: f64 = 1e-9;
/// Step control: `h <= BESSEL_STEP_FACTOR * (distance to barrier)^2`.
const BESSEL_STEP_FACTOR: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesselParams {
    pub d: f64,
    pub x0: f64,
    pub dt: f64,
}

impl BesselParams {
    pub fn new(d: f64, x0: f64, dt: f64) -> Result<Self> {
        if !(d >= 1.0 && d.is_finite()) {
            return Err(Error::param("d", format!("need d >= 1, got {d}")));
        }
        require_positive("x0", x0)?;
        require_positive("dt", dt)?;
        Ok(Self { d, x0, dt })
    }

    /// Dimension `1 + 4/κ′` of the force-point gaps of SLE_κ′.
    pub fn from_kappa(kappa: f64, x0: f64, dt: f64) -> Result<Self> {
        require_positive("kappa", kappa)?;
        Self::new(1.0 + 4.0 / kappa, x0, dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BesselPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub absorbed_at: Option<f64>,
}

/// One exact transition of the Bessel process over time `h`.
///
/// Uses the squared-Bessel decomposition `(x + √h Z)² + h χ²_{d−1}`.
struct BesselStepper {
    chi: Option<Gamma<f64>>,
}

impl BesselStepper {
    fn new(d: f64) -> Self {
        let chi = (d > 1.0).then(|| Gamma::new((d - 1.0) / 2.0, 2.0).expect("positive shape"));
        Self { chi }
    }

    #[inline]
    fn step(&self, x: f64, h: f64, rng: &mut StreamRng) -> f64 {
        let sh = h.sqrt();
        let y = x + sh * normal(rng);
        let extra = self.chi.as_ref().map_or(0.0, |g| h * g.sample(rng));
        (y * y + extra).sqrt()
    }
}

/// Bessel path of dimension `d` on `[0, horizon]`.
///
/// Steps are exact in law away from 0; near a barrier (the floor for
/// `d < 2`, or `stop_level` when given) the step shrinks with the squared
/// distance so that missed barrier touches are negligible. For `d < 2` the
/// path is absorbed once it drops below `floor`; a path stopped at
/// `stop_level` is frozen there.
pub fn sample_bessel_stopped(
    params: BesselParams,
    horizon: f64,
    floor: f64,
    stop_level: Option<f64>,
    rng: &mut StreamRng,
    record: bool,
) -> BesselPath {
    let stepper = BesselStepper::new(params.d);
    let absorbing = params.d < 2.0;
    let barrier = match stop_level {
        Some(s) => s,
        None if absorbing => 0.0,
        None => f64::NEG_INFINITY,
    };
    let (mut t, mut x) = (0.0, params.x0);
    let mut times = vec![0.0];
    let mut values = vec![x];
    let mut absorbed_at = None;
    while t < horizon {
        let dist = x - barrier;
        let h = if dist.is_finite() { (BESSEL_STEP_FACTOR * dist * dist).min(params.dt) } else { params.dt }.min(horizon - t);
        x = stepper.step(x, h, rng);
        t += h;
        let stop = stop_level.is_some_and(|s| x <= s);
        let absorbed = absorbing && x < floor;
        if stop || absorbed {
            x = if stop { stop_level.unwrap() } else { 0.0 };
            absorbed_at = Some(t);
            if record {
                times.push(t);
                values.push(x);
            }
            break;
        }
        if record {
            times.push(t);
            values.push(x);
        }
    }
    BesselPath { times, values, absorbed_at }
}

pub fn sample_bessel(params: BesselParams, horizon: f64, stream: RandomStream) -> Result<BesselPath> {
    let params = BesselParams::new(params.d, params.x0, params.dt)?;
    require_positive("horizon", horizon)?;
    let mut rng = stream.rng();
    Ok(sample_bessel_stopped(params, horizon, BESSEL_FLOOR, None, &mut rng, true))
}

/// Value of a (possibly stopped) path at time `t`, by the last step at or
/// before `t`.
fn value_at(path: &BesselPath, t: f64) -> f64 {
    let i = path.times.partition_point(|&s| s <= t);
    path.values[i.saturating_sub(1)]
}

/// Monte Carlo `E[X_{t∧T}^p]` at each of `times`, `T` the absorption or
/// stop time.
pub fn bessel_power_means(
    params: BesselParams,
    power: f64,
    times: &[f64],
    stop_level: Option<f64>,
    n: u64,
    stream: RandomStream,
) -> Result<Vec<Estimate>> {
    let params = BesselParams::new(params.d, params.x0, params.dt)?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    require_positive("horizon", horizon)?;
    run_vector(n, times.len(), DEFAULT_BATCHES, stream, |rng, out| {
        let path = sample_bessel_stopped(params, horizon, BESSEL_FLOOR, stop_level, rng, true);
        for (o, &t) in out.iter_mut().zip(times) {
            let x = value_at(&path, t);
            *o = if x > 0.0 { x.powf(power) } else { 0.0 };
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::run_scalar;

    #[test]
    fn laplace_theory_examples() {
        assert!((laplace_theory(1.0, 1.0, 2.0, 0.1).unwrap() - 0.01).abs() < 1e-15);
        assert!((laplace_theory(1.0, 1.0, 6.0, 0.5).unwrap() - 0.0625).abs() < 1e-15);
        assert!((laplace_theory(1.0, 1.0, 1e-12, 0.3).unwrap() - 1.0).abs() < 1e-10);
        assert!(laplace_theory(0.0, 1.0, 1.0, 0.1).is_err());
        assert!(laplace_theory(1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn level_formula() {
        let p = HittingProblem::new(1.0, 0.1, 2.0).unwrap();
        assert_eq!(p.level, 2.0 * 10f64.ln());
        assert!(HittingProblem::new(1.5, 0.1, 1.0).is_err());
    }

    #[test]
    fn drifted_bm_rejects_bad_params() {
        assert!(DriftedBMParams::new(0.0, 1e-3).is_err());
        assert!(DriftedBMParams::new(1.0, 0.0).is_err());
        let p = DriftedBMParams { a: 1.0, dt: 1e-2 };
        assert!(sample_drifted_bm(p, 0.0, RandomStream::root(1)).is_err());
    }

    #[test]
    fn drifted_bm_moments() {
        let root = RandomStream::root(21);
        let p = DriftedBMParams::new(1.0, 0.01).unwrap();
        let n = 20_000u64;
        let ends: Vec<f64> = (0..n).map(|i| *sample_drifted_bm(p, 1.0, root.child(1, i)).unwrap().values.last().unwrap()).collect();
        let (m, se) = crate::stats::batch_means(&ends, 32).unwrap();
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m} ± {se}");
        let var = ends.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        // sd of the sample variance of a normal is var * sqrt(2/(n-1)).
        assert!((var - 2.0).abs() < 3.0 * 2.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn mean_linear_in_time_slope_a() {
        // E[V_t] = a t at t = 0.5 and 1 with a = 0.5.
        let p = DriftedBMParams::new(0.5, 0.05).unwrap();
        let root = RandomStream::root(8);
        let n = 100_000u64;
        let est = crate::mc::run_vector(n, 2, 64, root, |rng, out| {
            let mut v = 0.0;
            for k in 1..=20 {
                v += p.a * p.dt + (VARIANCE_RATE * p.dt).sqrt() * normal(rng);
                if k == 10 {
                    out[0] = v;
                }
            }
            out[1] = v;
        })
        .unwrap();
        let slope = (est[1].mean - est[0].mean) / 0.5;
        // Var of the increment over [0.5, 1] is 2 * 0.5 = 1.
        let se = (1.0 / n as f64).sqrt() / 0.5;
        assert!((slope - 0.5).abs() < 3.0 * se, "slope {slope}");
    }

    #[test]
    fn level_zero_rejected() {
        let path = sample_drifted_bm(DriftedBMParams { a: 1.0, dt: 0.1 }, 1.0, RandomStream::root(1)).unwrap();
        assert!(hitting_time_on_path(&path, 0.0, None).is_err());
    }

    #[test]
    fn bridge_correction_only_adds_crossings() {
        let root = RandomStream::root(5);
        let p = DriftedBMParams::new(1.0, 0.01).unwrap();
        let ts = [0.25, 0.5, 1.0, 2.0];
        let (mut off, mut on) = ([0u32; 4], [0u32; 4]);
        for i in 0..2000 {
            let path = sample_drifted_bm(p, 2.0, root.child(1, i)).unwrap();
            let mut brng = root.child(2, i).rng();
            let a = hitting_time_on_path(&path, 1.0, None).unwrap();
            let b = hitting_time_on_path(&path, 1.0, Some(&mut brng)).unwrap();
            if let (Some(x), Some(y)) = (a.time(), b.time()) {
                assert!(y <= x);
            }
            for (j, &t) in ts.iter().enumerate() {
                off[j] += a.hit_by(t) as u32;
                on[j] += b.hit_by(t) as u32;
            }
        }
        for j in 0..4 {
            assert!(on[j] > off[j], "T={} on {} off {}", ts[j], on[j], off[j]);
        }
    }

    #[test]
    fn wald_identity_mean_hitting_time() {
        let cfg = PassageConfig::for_level(1.0, 1.0, 1e-5);
        let e = run_scalar(100_000, RandomStream::root(3), |rng| first_passage_drifted(1.0, 1.0, &cfg, rng).time().unwrap()).unwrap();
        assert!((e.mean - 1.0).abs() < 3.0 * e.stderr, "{} ± {}", e.mean, e.stderr);
    }

    #[test]
    fn laplace_estimate_matches_theory() {
        let r = estimate_laplace(1.0, 1.0, 2.0, 0.1, 200_000, 1e-5, RandomStream::root(12)).unwrap();
        assert!((r.estimate.mean - r.theory).abs() < 3.0 * r.estimate.stderr, "{:?}", r);
        assert!(!r.exhaustion_warning);
    }

    #[test]
    fn lambda_zero_is_exact() {
        let r = estimate_laplace(1.0, 1.0, 0.0, 0.1, 1000, 1e-5, RandomStream::root(1)).unwrap();
        assert_eq!(r.estimate.mean, 1.0);
        assert_eq!(r.estimate.stderr, 0.0);
    }

    #[test]
    fn doubling_samples_halves_stderr_squared() {
        let a = estimate_laplace(1.0, 1.0, 0.5, 0.3, 100_000, 1e-5, RandomStream::root(4)).unwrap();
        let b = estimate_laplace(1.0, 1.0, 0.5, 0.3, 200_000, 1e-5, RandomStream::root(4)).unwrap();
        // stderr scales as n^{-1/2}: doubling n divides it by √2.
        let ratio = a.estimate.stderr / b.estimate.stderr;
        assert!((ratio / std::f64::consts::SQRT_2 - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn bessel_rejects_nonpositive_start() {
        assert!(BesselParams::new(1.5, 0.0, 1e-3).is_err());
        assert!(BesselParams::new(0.5, 1.0, 1e-3).is_err());
    }

    #[test]
    fn bessel_dimension_two_power_zero_constant() {
        let p = BesselParams::new(2.0, 1.0, 1e-2).unwrap();
        let e = bessel_power_means(p, 0.0, &[0.5, 1.0], None, 1000, RandomStream::root(1)).unwrap();
        assert!(e.iter().all(|x| x.mean == 1.0 && x.stderr == 0.0));
    }

    #[test]
    fn bessel_low_dimension_absorbs() {
        let p = BesselParams::from_kappa(16.0, 1.0, 1e-3).unwrap();
        assert_eq!(p.d, 1.25);
        let root = RandomStream::root(9);
        let absorbed = (0..400).filter(|&i| sample_bessel(p, 1.0, root.child(1, i)).unwrap().absorbed_at.is_some()).count();
        assert!(absorbed > 0);
        // P[hit 0 by t=1 from 1] = P[Gamma((2-d)/2) > 1/(2t)] = 0.31 for d = 1.25.
        let frac = absorbed as f64 / 400.0;
        let exact = 1.0 - statrs_gamma_lower(0.375, 0.5);
        assert!((frac - exact).abs() < 3.0 * (exact * (1.0 - exact) / 400.0).sqrt(), "{frac} vs {exact}");
    }

    fn statrs_gamma_lower(a: f64, x: f64) -> f64 {
        statrs::function::gamma::gamma_lr(a, x)
    }

    #[test]
    fn bessel_martingale_power() {
        for &d in &[1.25, 1.5] {
            let p = BesselParams::new(d, 1.0, 1e-3).unwrap();
            let e = bessel_power_means(p, 2.0 - d, &[0.25, 0.5, 1.0], None, 20_000, RandomStream::root(2)).unwrap();
            for x in &e {
                assert!((x.mean - 1.0).abs() < 3.0 * x.stderr, "d={d}: {} ± {}", x.mean, x.stderr);
            }
        }
        let p = BesselParams::new(3.0, 1.0, 1e-3).unwrap();
        let e = bessel_power_means(p, -1.0, &[0.25, 0.5, 1.0], Some(0.25), 20_000, RandomStream::root(2)).unwrap();
        for x in &e {
            assert!((x.mean - 1.0).abs() < 3.0 * x.stderr, "d=3: {} ± {}", x.mean, x.stderr);
        }
    }

    #[test]
    fn reproducible_bitwise() {
        let p = DriftedBMParams::new(1.0, 1e-3).unwrap();
        let a = sample_drifted_bm(p, 1.0, RandomStream::new(5, 6)).unwrap();
        let b = sample_drifted_bm(p, 1.0, RandomStream::new(5, 6)).unwrap();
        assert_eq!(a, b);
    }
}
