//! Weighted log-log regression, two-variable exponent fits, batch means and
//! verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{estimate_from_batches, Estimate, Moments};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Reduced chi-square above which a fit is flagged as curved.
pub const CURVATURE_CHI2: f64 = 3.0;

/// One Monte Carlo point `(x, p̂ ± se)` to be fitted as `log p̂ = b + s log x`.
///
/// `x2` carries the second abscissa of two-variable fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub x2: Option<f64>,
    pub estimate: f64,
    pub stderr: f64,
    pub hits: f64,
}

impl FitPoint {
    pub fn new(x: f64, estimate: f64, stderr: f64) -> Self {
        Self { x, x2: None, estimate, stderr, hits: f64::NAN }
    }

    pub fn from_estimate(x: f64, e: &Estimate) -> Self {
        Self { x, x2: None, estimate: e.mean, stderr: e.stderr, hits: e.total }
    }

    pub fn with_hits(mut self, hits: f64) -> Self {
        self.hits = hits;
        self
    }

    pub fn with_x2(mut self, x2: f64) -> Self {
        self.x2 = Some(x2);
        self
    }

    fn usable(&self) -> bool {
        self.estimate > 0.0 && self.estimate.is_finite() && self.x > 0.0 && self.x2.is_none_or(|t| t > 0.0)
    }

    /// Delta-method standard error of `log p̂`.
    fn log_se(&self) -> f64 {
        self.stderr / self.estimate
    }
}

/// Result of a one-variable log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Model-based standard error from the propagated point errors.
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub ci95: (f64, f64),
    pub chi2_red: f64,
    /// `sqrt(max(1, chi2_red))`; multiply the stderr by it for a
    /// dispersion-robust error bar.
    pub dispersion_scale: f64,
    pub curvature_flag: bool,
    /// Largest slope change from dropping one point, relative to the CI width.
    pub max_leverage: f64,
    pub leverage_flag: bool,
    pub n_points: usize,
    pub excluded: usize,
    pub weighted: bool,
}

impl ExponentFit {
    pub fn robust_stderr(&self) -> f64 {
        self.slope_stderr * self.dispersion_scale
    }
}

/// Solves the symmetric positive definite system `a x = b` for small sizes.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if !(a[piv][col].abs() > 1e-13 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularDesign(format!("normal matrix is rank deficient at column {col}")));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for row in 0..n {
            if row != col {
                let f = a[row][col] / d;
                if f != 0.0 {
                    for k in 0..n {
                        a[row][k] -= f * a[col][k];
                        inv[row][k] -= f * inv[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
    }
    let x = (0..n).map(|i| b[i] / a[i][i]).collect();
    let inv = (0..n).map(|i| (0..n).map(|k| inv[i][k] / a[i][i]).collect()).collect();
    Ok((x, inv))
}

struct Wls {
    coef: Vec<f64>,
    cov: Vec<Vec<f64>>,
    chi2: f64,
    dof: usize,
    weighted: bool,
}

/// Weighted least squares of `y` on the rows of `design`.
///
/// With usable errors the weights are `1/se^2` and the covariance is
/// model-based; otherwise unit weights and residual-variance covariance.
fn wls(design: &[Vec<f64>], y: &[f64], se: &[f64]) -> Result<Wls> {
    let n = y.len();
    let p = design[0].len();
    if n < p + 1 {
        return Err(Error::InsufficientData(format!("{n} points for {p} coefficients")));
    }
    let weighted = se.iter().all(|s| s.is_finite() && *s > 0.0);
    let w: Vec<f64> = if weighted { se.iter().map(|s| 1.0 / (s * s)).collect() } else { vec![1.0; n] };
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            xty[j] += w[i] * design[i][j] * y[i];
            for k in 0..p {
                xtx[j][k] += w[i] * design[i][j] * design[i][k];
            }
        }
    }
    let (coef, mut cov) = solve_small(xtx, xty)?;
    let mut chi2 = 0.0;
    for i in 0..n {
        let fit: f64 = (0..p).map(|j| design[i][j] * coef[j]).sum();
        chi2 += w[i] * (y[i] - fit).powi(2);
    }
    let dof = n - p;
    if !weighted {
        let s2 = chi2 / dof as f64;
        cov.iter_mut().flatten().for_each(|c| *c *= s2);
    }
    Ok(Wls { coef, cov, chi2, dof, weighted })
}

fn filter_points(points: &[FitPoint]) -> (Vec<FitPoint>, usize) {
    let kept: Vec<FitPoint> = points.iter().copied().filter(FitPoint::usable).collect();
    let excluded = points.len() - kept.len();
    (kept, excluded)
}

fn check_distinct(xs: &[f64]) -> Result<()> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::SingularDesign("all abscissas coincide".into()));
    }
    Ok(())
}

fn fit_core(pts: &[FitPoint]) -> Result<(f64, f64, f64, f64, f64, usize, bool)> {
    let design: Vec<Vec<f64>> = pts.iter().map(|p| vec![1.0, p.x.ln()]).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.estimate.ln()).collect();
    let se: Vec<f64> = pts.iter().map(FitPoint::log_se).collect();
    let r = wls(&design, &y, &se)?;
    Ok((r.coef[1], r.coef[0], r.cov[1][1].sqrt(), r.cov[0][0].sqrt(), r.chi2, r.dof, r.weighted))
}

/// Weighted fit of `log p̂` against `log x`.
///
/// Points with `p̂ <= 0` are excluded and counted. Needs at least three
/// usable points with distinct abscissas.
pub fn loglog_fit(points: &[FitPoint]) -> Result<ExponentFit> {
    let (pts, excluded) = filter_points(points);
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!("{} usable points, need at least 3", pts.len())));
    }
    check_distinct(&pts.iter().map(|p| p.x).collect::<Vec<_>>())?;
    let (slope, intercept, slope_se, int_se, chi2, dof, weighted) = fit_core(&pts)?;
    let chi2_red = if weighted && dof > 0 { chi2 / dof as f64 } else { 1.0 };
    let ci_w = 2.0 * Z95 * slope_se;
    let mut max_leverage: f64 = 0.0;
    if pts.len() >= 4 {
        for skip in 0..pts.len() {
            let sub: Vec<FitPoint> = pts.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, p)| *p).collect();
            if let Ok((s, ..)) = fit_core(&sub) {
                let rel = if ci_w > 0.0 { (s - slope).abs() / ci_w } else { 0.0 };
                max_leverage = max_leverage.max(rel);
            }
        }
    }
    Ok(ExponentFit {
        slope,
        intercept,
        slope_stderr: slope_se,
        intercept_stderr: int_se,
        ci95: (slope - Z95 * slope_se, slope + Z95 * slope_se),
        chi2_red,
        dispersion_scale: chi2_red.max(1.0).sqrt(),
        curvature_flag: chi2_red > CURVATURE_CHI2,
        max_leverage,
        leverage_flag: max_leverage > 1.0,
        n_points: pts.len(),
        excluded,
        weighted,
    })
}

/// Result of `log p = c + s_δ log δ + s_t log t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoVarFit {
    pub intercept: f64,
    pub slope_delta: f64,
    pub slope_t: f64,
    pub slope_delta_stderr: f64,
    pub slope_t_stderr: f64,
    pub cov_delta_t: f64,
    /// `slope_delta / slope_t` with its delta-method standard error.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// σ from the constrained model `log p = c + σ (log δ - log t / 2)`.
    pub pooled_sigma: f64,
    pub pooled_stderr: f64,
    pub chi2_red: f64,
    pub curvature_flag: bool,
    pub n_points: usize,
    pub excluded: usize,
}

/// Two-variable fit; `x` holds δ and `x2` holds t for every point.
pub fn two_var_fit(points: &[FitPoint]) -> Result<TwoVarFit> {
    if points.iter().any(|p| p.x2.is_none()) {
        return Err(Error::param("points", "every point needs a second abscissa"));
    }
    let (pts, excluded) = filter_points(points);
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!("{} usable points, need at least 4", pts.len())));
    }
    let design: Vec<Vec<f64>> = pts.iter().map(|p| vec![1.0, p.x.ln(), p.x2.unwrap().ln()]).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.estimate.ln()).collect();
    let se: Vec<f64> = pts.iter().map(FitPoint::log_se).collect();
    let r = wls(&design, &y, &se)?;
    let (sd, st) = (r.coef[1], r.coef[2]);
    let (vd, vt, cdt) = (r.cov[1][1], r.cov[2][2], r.cov[1][2]);
    let ratio = sd / st;
    // Gradient of sd/st is (1/st, -sd/st^2).
    let g = (1.0 / st, -sd / (st * st));
    let ratio_var = g.0 * g.0 * vd + g.1 * g.1 * vt + 2.0 * g.0 * g.1 * cdt;

    let pooled_design: Vec<Vec<f64>> = pts.iter().map(|p| vec![1.0, p.x.ln() - 0.5 * p.x2.unwrap().ln()]).collect();
    let pr = wls(&pooled_design, &y, &se)?;
    let chi2_red = if r.weighted && r.dof > 0 { r.chi2 / r.dof as f64 } else { 1.0 };
    Ok(TwoVarFit {
        intercept: r.coef[0],
        slope_delta: sd,
        slope_t: st,
        slope_delta_stderr: vd.sqrt(),
        slope_t_stderr: vt.sqrt(),
        cov_delta_t: cdt,
        ratio,
        ratio_stderr: ratio_var.max(0.0).sqrt(),
        pooled_sigma: pr.coef[1],
        pooled_stderr: pr.cov[1][1].sqrt(),
        chi2_red,
        curvature_flag: chi2_red > CURVATURE_CHI2,
        n_points: pts.len(),
        excluded,
    })
}

/// Batch-means mean and standard error of a sequence of values.
pub fn batch_means(values: &[f64], n_batches: usize) -> Result<(f64, f64)> {
    if n_batches < 8 {
        return Err(Error::param("n_batches", format!("need at least 8, got {n_batches}")));
    }
    if values.len() < 2 * n_batches {
        return Err(Error::InsufficientData(format!("{} values for {n_batches} batches", values.len())));
    }
    let n = values.len();
    let mut batches = vec![Moments::default(); n_batches];
    for (i, &v) in values.iter().enumerate() {
        batches[i * n_batches / n].push(v);
    }
    let e = estimate_from_batches(&batches);
    Ok((e.mean, e.stderr))
}

/// Outcome of one acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Pass,
        }
    }
}

/// A verdict together with the rule that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// `|slope - theory| <= tol`; a miss that is still within three (dispersion
/// scaled) standard errors is reported as inconclusive.
pub fn slope_verdict(rule: impl Into<String>, fit: &ExponentFit, theory: f64, tol: f64) -> RuleCheck {
    let dev = (fit.slope - theory).abs();
    let verdict = if dev <= tol {
        Verdict::Pass
    } else if dev <= 3.0 * fit.robust_stderr() {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    };
    RuleCheck { rule: rule.into(), observed: fit.slope, expected: theory, tolerance: tol, verdict }
}

/// `|estimate - theory| <= max(k * stderr, rel * |theory|)`.
pub fn value_verdict(rule: impl Into<String>, e: &Estimate, theory: f64, k: f64, rel: f64) -> RuleCheck {
    let tol = (k * e.stderr).max(rel * theory.abs());
    RuleCheck {
        rule: rule.into(),
        observed: e.mean,
        expected: theory,
        tolerance: tol,
        verdict: Verdict::from_bool((e.mean - theory).abs() <= tol),
    }
}

/// Two independent estimates agree within `k` joint standard errors.
pub fn agree(a: &Estimate, b: &Estimate, k: f64) -> bool {
    let joint = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    (a.mean - b.mean).abs() <= k * joint
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}
