//! Quantum avoidance events: a boundary measure fixes the endpoints
//! `x̄_{δ,L}, x̄_{δ,R}`, and an independent SLE decides whether both are
//! avoided.
//!
//! Field draw `i` uses `stream.child(FIELD, i)`; its SLE replicas use
//! `stream.child(SLE, i').child(SLE, j)` with `i' = (i + sle_offset) mod n`.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};
use crate::gmc::{FieldLengths, FieldModel, LengthSampler, SamplerKind, WedgeSpec};
use crate::mc::{map_indexed, run_vector, DEFAULT_BATCHES};
use crate::rng::{tags, RandomStream, StreamRng};
use crate::stats::{batch_means, log_grid, loglog_fit, slope_verdict, ExponentFit, FitPoint, RuleCheck};
use crate::sle::{run_multi_point, run_multi_point_snapshots, MultiStop, SleConfig, SleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantumMode {
    Direct,
    RaoBlackwell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stopping {
    Capacity,
    Radius { check_every: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumEventConfig {
    pub kappa: f64,
    pub r: f64,
    pub deltas: Vec<f64>,
    pub n_fields: u64,
    pub n_sle_per_field: u32,
    pub mode: QuantumMode,
    pub stopping: Stopping,
    /// Tilt the radial part toward the level of each δ and reweight.
    pub importance: bool,
    /// Capacity time of the stop; defaults to `r²`.
    pub t_capacity: Option<f64>,
}

impl QuantumEventConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 8.0 && self.kappa.is_finite()) {
            return Err(Error::param("kappa", format!("need kappa > 8, got {}", self.kappa)));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::param("r", format!("need 0 < r <= 1, got {}", self.r)));
        }
        if self.deltas.is_empty() {
            return Err(Error::param("deltas", "empty delta grid"));
        }
        for &d in &self.deltas {
            require_positive("delta", d)?;
        }
        if self.mode == QuantumMode::Direct && self.n_sle_per_field == 0 {
            return Err(Error::param("n_sle_per_field", "direct mode needs at least one SLE run per field"));
        }
        if let Some(t) = self.t_capacity {
            require_positive("t_capacity", t)?;
        }
        Ok(())
    }

    /// `γ = 4/√κ′`.
    pub fn gamma(&self) -> f64 {
        4.0 / self.kappa.sqrt()
    }

    /// Wedge with `α = 3γ/2`.
    pub fn wedge(&self) -> Result<WedgeSpec> {
        WedgeSpec::with_default_alpha(self.gamma())
    }

    pub fn capacity(&self) -> f64 {
        self.t_capacity.unwrap_or(self.r * self.r)
    }

    pub fn multi_stop(&self) -> MultiStop {
        match self.stopping {
            Stopping::Capacity => MultiStop::Capacity(self.capacity()),
            Stopping::Radius { check_every } => MultiStop::Radius { r: self.r, check_every },
        }
    }

    /// Total exponent of the analytic conditional value, `κ′/2 − 2`.
    pub fn lambda_total(&self) -> f64 {
        self.kappa / 2.0 - 2.0
    }

    /// `−4/γ² = −κ′/4`.
    pub fn theory_slope(&self) -> f64 {
        let g = self.gamma();
        -4.0 / (g * g)
    }

    fn tilt(&self) -> Option<f64> {
        self.importance.then(|| self.lambda_total())
    }
}

/// `x̄_L^{ρ/κ′} x̄_R^{ρ/κ′} (x̄_L + x̄_R)^{ρ²/(2κ′)}`: exponent-exact, not
/// prefactor-exact.
pub fn analytic_conditional(kappa: f64, xl: f64, xr: f64) -> f64 {
    let rho = kappa - 4.0;
    (xl * xr).powf(rho / kappa) * (xl + xr).powf(rho * rho / (2.0 * kappa))
}

/// Table of `φ(z_L, z_R) = P[E_{z_L, z_R}]` on a symmetric log grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTable {
    pub kappa: f64,
    pub stop: MultiStop,
    pub z: Vec<f64>,
    /// Row-major `phi[i * m + j]` at `(z_i, z_j)`, symmetrized.
    pub phi: Vec<f64>,
    pub rel_stderr: Vec<f64>,
    pub hits: Vec<f64>,
    /// True where the value was extrapolated from a neighbor for lack of
    /// hits.
    pub filled: Vec<bool>,
    pub n: u64,
}

/// Minimum (symmetrized) hit count for a table cell to be used as is.
pub const TABLE_MIN_HITS: f64 = 20.0;

impl EventTable {
    /// Builds the table from `n` SLE paths, each carrying every grid point
    /// on both sides.
    pub fn build(kappa: f64, stop: MultiStop, z: Vec<f64>, n: u64, cfg: &SleConfig, stream: RandomStream) -> Result<Self> {
        if z.len() < 2 || z.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("z", "table grid must be increasing with at least 2 points"));
        }
        let m = z.len();
        let est = run_vector(n, m * m, DEFAULT_BATCHES, stream, |rng, out| {
            let o = run_multi_point(kappa, &z, &z, stop, cfg, rng).expect("validated table grid");
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] = (!o.swallowed_l[i] && !o.swallowed_r[j]) as u8 as f64;
                }
            }
        })?;
        let mut phi = vec![0.0; m * m];
        let mut rel = vec![0.0; m * m];
        let mut hits = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let (a, b) = (est[i * m + j], est[j * m + i]);
                let p = 0.5 * (a.mean + b.mean);
                // The two orientations are positively correlated; the mean
                // of their stderrs is a conservative combination.
                let se = 0.5 * (a.stderr + b.stderr);
                phi[i * m + j] = p;
                rel[i * m + j] = if p > 0.0 { se / p } else { f64::INFINITY };
                hits[i * m + j] = 0.5 * (a.total + b.total);
            }
        }
        let mut filled = vec![false; m * m];
        let m0 = |i: usize, j: usize| analytic_conditional(kappa, z[i], z[j]);
        for s in (0..=2 * (m - 1)).rev() {
            for i in 0..m {
                if s < i || s - i >= m {
                    continue;
                }
                let j = s - i;
                if hits[i * m + j] >= TABLE_MIN_HITS {
                    continue;
                }
                let mut best: Option<(usize, usize)> = None;
                for (a, b) in [(i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                    if a < m && b < m && best.is_none_or(|(x, y)| hits[a * m + b] > hits[x * m + y]) {
                        best = Some((a, b));
                    }
                }
                let Some((a, b)) = best else {
                    return Err(Error::InsufficientData(format!("table corner ({}, {}) has {} hits", z[i], z[j], hits[i * m + j])));
                };
                phi[i * m + j] = phi[a * m + b] * m0(i, j) / m0(a, b);
                rel[i * m + j] = rel[a * m + b];
                hits[i * m + j] = hits[a * m + b];
                filled[i * m + j] = true;
            }
        }
        Ok(Self { kappa, stop, z, phi, rel_stderr: rel, hits, filled, n })
    }

    /// Bilinear interpolation of `log φ` in `(log z_L, log z_R)`; below the
    /// grid the value is scaled by the analytic conditional ratio. Returns
    /// `(φ, relative stderr)`.
    pub fn lookup(&self, zl: f64, zr: f64) -> (f64, f64) {
        let m = self.z.len();
        let (lo, hi) = (self.z[0], self.z[m - 1]);
        let (cl, cr) = (zl.clamp(lo, hi), zr.clamp(lo, hi));
        let locate = |v: f64| {
            let lv = v.ln();
            let k = self.z.partition_point(|&g| g <= v).clamp(1, m - 1) - 1;
            let (a, b) = (self.z[k].ln(), self.z[k + 1].ln());
            (k, ((lv - a) / (b - a)).clamp(0.0, 1.0))
        };
        let ((i, u), (j, v)) = (locate(cl), locate(cr));
        let at = |a: usize, b: usize| (self.phi[a * m + b].max(f64::MIN_POSITIVE).ln(), self.rel_stderr[a * m + b]);
        let corners = [(at(i, j), (1.0 - u) * (1.0 - v)), (at(i + 1, j), u * (1.0 - v)), (at(i, j + 1), (1.0 - u) * v), (at(i + 1, j + 1), u * v)];
        let (mut lp, mut re) = (0.0, 0.0);
        for ((l, r), wgt) in corners {
            lp += wgt * l;
            re += wgt * r;
        }
        let mut p = lp.exp();
        if zl < lo || zr < lo {
            p *= analytic_conditional(self.kappa, zl, zr) / analytic_conditional(self.kappa, cl, cr);
        }
        (p, re)
    }
}

/// Default table grid: 9 log-spaced points on `[0.15 r, r]`.
pub fn default_table_grid(r: f64) -> Vec<f64> {
    log_grid(0.15 * r, r, 9)
}

/// Per-δ estimate of `P[E_δ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumCell {
    pub delta: f64,
    pub estimator: Estimator,
    pub estimate: f64,
    pub stderr: f64,
    pub n_fields: u64,
    pub n_sle: u32,
    pub both_capped_fraction: f64,
    /// Relative stderr inherited from the event table (fully correlated
    /// bound); 0 for other estimators.
    pub table_rel_stderr: f64,
}

impl QuantumCell {
    /// Field stderr combined with the table contribution.
    pub fn total_stderr(&self) -> f64 {
        self.stderr.hypot(self.table_rel_stderr * self.estimate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Direct,
    RbAnalytic,
    RbTabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumEstimates {
    pub direct: Option<Vec<QuantumCell>>,
    pub analytic: Vec<QuantumCell>,
    pub tabulated: Option<Vec<QuantumCell>>,
}

fn sle_rng(stream: RandomStream, field: u64, offset: u64, n: u64, rep: u32) -> StreamRng {
    let idx = (field + offset) % n;
    stream.child(tags::SLE, idx).child(tags::SLE, rep as u64).rng()
}

fn both_capped(f: &FieldLengths) -> bool {
    f.l.capped && f.r.capped
}

/// One plain draw: field, lengths at `delta`, then an SLE with those
/// endpoints. Both endpoints capped gives `true` without an SLE run.
pub fn sample_quantum_event(cfg: &QuantumEventConfig, model: &FieldModel, delta: f64, field_rng: &mut StreamRng, sle_rng: &mut StreamRng) -> Result<bool> {
    cfg.validate()?;
    let sampler = LengthSampler::new(cfg.wedge()?, model)?;
    let f = sampler.draw(&[delta], None, field_rng)[0];
    if both_capped(&f) {
        return Ok(true);
    }
    let o = run_multi_point(cfg.kappa, &[f.l.x], &[f.r.x], cfg.multi_stop(), &SleConfig::events(), sle_rng)?;
    Ok(!o.swallowed_l[0] && !o.swallowed_r[0])
}

/// Runs the estimators on shared field draws. Draws with both endpoints
/// capped count as 1 in every estimator. Direct mode runs
/// `n_sle_per_field` SLE paths per field (one path serves every δ);
/// Rao-Blackwell mode runs none. The analytic value is always reported;
/// the tabulated value when a table is given.
pub fn estimate_quantum(cfg: &QuantumEventConfig, model: &FieldModel, table: Option<&EventTable>, sle_offset: u64, stream: RandomStream) -> Result<QuantumEstimates> {
    cfg.validate()?;
    if model.kind != SamplerKind::RadialLateral {
        return Err(Error::param("sampler", "quantum events need the radial-lateral sampler"));
    }
    if (model.grid.r - cfg.r).abs() > 1e-15 {
        return Err(Error::param("r", format!("grid cutoff {} differs from config r {}", model.grid.r, cfg.r)));
    }
    if let Some(t) = table {
        if t.kappa != cfg.kappa || t.stop != cfg.multi_stop() {
            return Err(Error::param("table", "event table was built for a different kappa or stop"));
        }
    }
    let sampler = LengthSampler::new(cfg.wedge()?, model)?;
    let nd = cfg.deltas.len();
    let direct = cfg.mode == QuantumMode::Direct;
    let sle_cfg = SleConfig::events();
    let stop = cfg.multi_stop();
    let fields = cfg.n_fields;
    // Per field: [direct, analytic, tabulated, table-rel·tabulated, capped] per δ.
    let rows: Vec<Vec<f64>> = map_indexed(fields, stream, tags::FIELD, |i, rng| {
        let lens = sampler.draw(&cfg.deltas, cfg.tilt(), rng);
        let mut out = vec![0.0; 5 * nd];
        for (d, f) in lens.iter().enumerate() {
            let an = if both_capped(f) { 1.0 } else { analytic_conditional(cfg.kappa, f.l.x, f.r.x) };
            out[nd + d] = f.weight * an;
            if let Some(t) = table {
                let (p, re) = if both_capped(f) { (1.0, 0.0) } else { t.lookup(f.l.x, f.r.x) };
                out[2 * nd + d] = f.weight * p;
                out[3 * nd + d] = f.weight * p * re;
            }
            out[4 * nd + d] = both_capped(f) as u8 as f64;
        }
        if direct {
            let left: Vec<f64> = lens.iter().map(|f| f.l.x).collect();
            let right: Vec<f64> = lens.iter().map(|f| f.r.x).collect();
            let m = cfg.n_sle_per_field;
            for rep in 0..m {
                let mut srng = sle_rng(stream, i, sle_offset, fields, rep);
                let o = run_multi_point(cfg.kappa, &left, &right, stop, &sle_cfg, &mut srng).expect("validated endpoints");
                for (d, f) in lens.iter().enumerate() {
                    let hit = both_capped(f) || (!o.swallowed_l[d] && !o.swallowed_r[d]);
                    out[d] += f.weight * hit as u8 as f64 / m as f64;
                }
            }
        }
        out
    });
    let col = |c: usize| -> Result<(f64, f64)> {
        let v: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        batch_means(&v, DEFAULT_BATCHES)
    };
    let mut analytic = Vec::with_capacity(nd);
    let mut direct_cells = Vec::with_capacity(nd);
    let mut tab_cells = Vec::with_capacity(nd);
    for (d, &delta) in cfg.deltas.iter().enumerate() {
        let capped = col(4 * nd + d)?.0;
        let cell = |estimator, (m, se): (f64, f64), n_sle, rel| QuantumCell {
            delta,
            estimator,
            estimate: m,
            stderr: se,
            n_fields: fields,
            n_sle,
            both_capped_fraction: capped,
            table_rel_stderr: rel,
        };
        analytic.push(cell(Estimator::RbAnalytic, col(nd + d)?, 0, 0.0));
        if direct {
            direct_cells.push(cell(Estimator::Direct, col(d)?, cfg.n_sle_per_field, 0.0));
        }
        if table.is_some() {
            let (m, se) = col(2 * nd + d)?;
            let rel = if m > 0.0 { col(3 * nd + d)?.0 / m } else { 0.0 };
            tab_cells.push(cell(Estimator::RbTabulated, (m, se), 0, rel));
        }
    }
    Ok(QuantumEstimates { direct: direct.then_some(direct_cells), analytic, tabulated: table.map(|_| tab_cells) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumFit {
    pub fit: ExponentFit,
    pub theory: f64,
    pub check: RuleCheck,
}

/// Slope of `log P` against `log δ^{-1}` compared with `−4/γ²`.
pub fn fit_quantum_exponent(cells: &[QuantumCell], gamma: f64, tol_rel: f64) -> Result<QuantumFit> {
    if cells.len() < 4 {
        return Err(Error::InsufficientData(format!("{} delta points, need 4", cells.len())));
    }
    let pts: Vec<FitPoint> = cells.iter().map(|c| FitPoint::new(1.0 / c.delta, c.estimate, c.stderr)).collect();
    let fit = loglog_fit(&pts)?;
    let theory = -4.0 / (gamma * gamma);
    let check = slope_verdict(format!("quantum slope within {}% of {theory:.6}", tol_rel * 100.0), &fit, theory, tol_rel * theory.abs());
    Ok(QuantumFit { fit, theory, check })
}

/// Direct vs tabulated Rao-Blackwell on the same fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectRbRow {
    pub delta: f64,
    pub direct: f64,
    pub direct_stderr: f64,
    pub rb: f64,
    pub rb_stderr: f64,
    pub z_score: f64,
    pub agree: bool,
    pub rb_smaller_stderr: bool,
}

pub fn compare_direct_rb(est: &QuantumEstimates) -> Result<Vec<DirectRbRow>> {
    let (Some(d), Some(t)) = (&est.direct, &est.tabulated) else {
        return Err(Error::InsufficientData("comparison needs direct and tabulated estimates".into()));
    };
    Ok(d.iter()
        .zip(t)
        .map(|(a, b)| {
            // Same fields: the difference's stderr is at most the sum and at
            // least the direct SLE noise; the independent form is used.
            let joint = a.stderr.hypot(b.total_stderr());
            let z = if joint > 0.0 { (a.estimate - b.estimate) / joint } else { 0.0 };
            DirectRbRow {
                delta: a.delta,
                direct: a.estimate,
                direct_stderr: a.stderr,
                rb: b.estimate,
                rb_stderr: b.stderr,
                z_score: z,
                agree: z.abs() <= 3.0,
                rb_smaller_stderr: b.stderr < a.stderr,
            }
        })
        .collect())
}

/// Estimates nondecreasing in δ (exact on common random numbers).
pub fn monotone_in_delta(cells: &[QuantumCell]) -> bool {
    let mut v: Vec<&QuantumCell> = cells.iter().collect();
    v.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    v.windows(2).all(|w| w[1].estimate >= w[0].estimate - 1e-15 * w[0].estimate.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub delta: f64,
    pub s: f64,
    pub lhs: f64,
    pub rhs_event: f64,
    pub rhs_time: f64,
    pub slack: f64,
    pub slack_stderr: f64,
    pub holds: bool,
}

/// `P[E^{T₁}_δ] <= P[E^{δ^s}_δ] + P[T₁ <= δ^s]`, with `T₁` the tip exit
/// time of the unit ball and capacity times as stand-ins for quantum
/// times. All three indicators come from the same SLE path.
pub fn consistency_split(cfg: &QuantumEventConfig, model: &FieldModel, s: f64, check_every: usize, stream: RandomStream) -> Result<Vec<SplitRow>> {
    cfg.validate()?;
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::param("s", format!("need 0 < s < 1, got {s}")));
    }
    let sampler = LengthSampler::new(cfg.wedge()?, model)?;
    let nd = cfg.deltas.len();
    let sle_cfg = SleConfig::events();
    let times: Vec<f64> = cfg.deltas.iter().map(|d| d.powf(s)).collect();
    let rows: Vec<Vec<f64>> = map_indexed(cfg.n_fields, stream, tags::FIELD, |i, rng| {
        let lens = sampler.draw(&cfg.deltas, cfg.tilt(), rng);
        let left: Vec<f64> = lens.iter().map(|f| f.l.x).collect();
        let right: Vec<f64> = lens.iter().map(|f| f.r.x).collect();
        let mut srng = sle_rng(stream, i, 0, cfg.n_fields, 0);
        let o = run_multi_point_snapshots(cfg.kappa, &left, &right, MultiStop::Radius { r: 1.0, check_every }, &times, &sle_cfg, &mut srng).expect("validated endpoints");
        let t1 = o.exit_time.unwrap_or(o.t_end);
        let mut out = vec![0.0; 4 * nd];
        for (d, f) in lens.iter().enumerate() {
            let cap = both_capped(f);
            let lhs = cap || (!o.swallowed_l[d] && !o.swallowed_r[d]);
            let (sl, sr) = &o.snapshots[d];
            let ev = cap || (!sl[d] && !sr[d]);
            let early = t1 <= times[d];
            out[d] = f.weight * lhs as u8 as f64;
            out[nd + d] = f.weight * ev as u8 as f64;
            out[2 * nd + d] = f.weight * early as u8 as f64;
            out[3 * nd + d] = out[nd + d] + out[2 * nd + d] - out[d];
        }
        out
    });
    let col = |c: usize| -> Result<(f64, f64)> { batch_means(&rows.iter().map(|r| r[c]).collect::<Vec<_>>(), DEFAULT_BATCHES) };
    let mut out = Vec::with_capacity(nd);
    for (d, &delta) in cfg.deltas.iter().enumerate() {
        let (slack, se) = col(3 * nd + d)?;
        out.push(SplitRow { delta, s, lhs: col(d)?.0, rhs_event: col(nd + d)?.0, rhs_time: col(2 * nd + d)?.0, slack, slack_stderr: se, holds: slack >= -3.0 * se });
    }
    Ok(out)
}

/// SLE parameters for a quantum configuration at endpoints `(z_L, z_R)`.
pub fn sle_params(cfg: &QuantumEventConfig, zl: f64, zr: f64) -> Result<SleParams> {
    SleParams::unrestricted(cfg.kappa, zl, zr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmc::BoundaryGrid;

    fn config(mode: QuantumMode, deltas: Vec<f64>, n: u64, m: u32, importance: bool) -> QuantumEventConfig {
        QuantumEventConfig { kappa: 16.0, r: 1.0, deltas, n_fields: n, n_sle_per_field: m, mode, stopping: Stopping::Capacity, importance, t_capacity: None }
    }

    fn model() -> FieldModel {
        FieldModel::new(BoundaryGrid::new(1.0, 0.85, 160).unwrap(), SamplerKind::RadialLateral).unwrap()
    }

    #[test]
    fn config_derived_values() {
        let c = config(QuantumMode::RaoBlackwell, vec![0.1], 100, 0, true);
        assert_eq!(c.gamma(), 1.0);
        assert_eq!(c.theory_slope(), -4.0);
        assert_eq!(c.lambda_total(), 6.0);
        assert_eq!(c.capacity(), 1.0);
        let c24 = QuantumEventConfig { kappa: 24.0, ..c.clone() };
        assert!((c24.theory_slope() + 6.0).abs() < 1e-12);
        assert!(QuantumEventConfig { kappa: 8.0, ..c.clone() }.validate().is_err());
        assert!(config(QuantumMode::Direct, vec![0.1], 100, 0, false).validate().is_err());
    }

    #[test]
    fn analytic_value_matches_martingale_start() {
        let p = SleParams::new(16.0, 0.3, 0.6).unwrap();
        assert!((analytic_conditional(16.0, 0.3, 0.6) - p.m0()).abs() < 1e-15);
    }

    #[test]
    fn capped_endpoints_always_avoid() {
        let c = config(QuantumMode::Direct, vec![1e9], 64, 1, false);
        let m = model();
        for i in 0..20 {
            let mut f = RandomStream::new(1, i).rng();
            let mut s = RandomStream::new(2, i).rng();
            assert!(sample_quantum_event(&c, &m, 1e9, &mut f, &mut s).unwrap());
        }
    }

    #[test]
    fn small_delta_rarely_avoids() {
        let c = config(QuantumMode::Direct, vec![1e-4], 64, 1, false);
        let m = model();
        let mut hits = 0;
        for i in 0..200 {
            hits += sample_quantum_event(&c, &m, 1e-4, &mut RandomStream::new(3, i).rng(), &mut RandomStream::new(4, i).rng()).unwrap() as u32;
        }
        assert_eq!(hits, 0);
    }

    #[test]
    fn direct_estimates_monotone_on_common_numbers() {
        let c = config(QuantumMode::Direct, vec![0.3, 0.1, 1.0, 3.0], 512, 4, false);
        let e = estimate_quantum(&c, &model(), None, 0, RandomStream::root(5)).unwrap();
        let d = e.direct.unwrap();
        assert!(monotone_in_delta(&d), "{d:?}");
        assert!(monotone_in_delta(&e.analytic));
    }

    #[test]
    fn permuting_sle_streams_changes_nothing_beyond_ci() {
        let c = config(QuantumMode::Direct, vec![1.0], 2048, 4, false);
        let m = model();
        let a = estimate_quantum(&c, &m, None, 0, RandomStream::root(6)).unwrap().direct.unwrap()[0];
        let b = estimate_quantum(&c, &m, None, 777, RandomStream::root(6)).unwrap().direct.unwrap()[0];
        let joint = a.stderr.hypot(b.stderr);
        assert!((a.estimate - b.estimate).abs() <= 3.0 * joint, "{a:?} {b:?}");
    }

    #[test]
    fn table_lookup_reproduces_grid_and_scales_below() {
        let z = vec![0.25, 0.5, 1.0];
        let mut phi = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                phi[i * 3 + j] = analytic_conditional(16.0, z[i], z[j]) * 1e-3;
            }
        }
        let t = EventTable { kappa: 16.0, stop: MultiStop::Capacity(1.0), z: z.clone(), phi, rel_stderr: vec![0.01; 9], hits: vec![100.0; 9], filled: vec![false; 9], n: 1 };
        let (p, re) = t.lookup(0.5, 1.0);
        assert!((p / (analytic_conditional(16.0, 0.5, 1.0) * 1e-3) - 1.0).abs() < 1e-12);
        assert!((re - 0.01).abs() < 1e-15);
        let (q, _) = t.lookup(0.1, 0.25);
        assert!((q / (analytic_conditional(16.0, 0.1, 0.25) * 1e-3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_is_symmetric_and_monotone() {
        let z = log_grid(0.3, 1.0, 4);
        let t = EventTable::build(10.0, MultiStop::Capacity(0.2), z, 4096, &SleConfig::events(), RandomStream::root(7)).unwrap();
        let m = t.z.len();
        for i in 0..m {
            for j in 0..m {
                assert_eq!(t.phi[i * m + j], t.phi[j * m + i]);
                if i + 1 < m && !t.filled[i * m + j] {
                    assert!(t.phi[(i + 1) * m + j] >= t.phi[i * m + j]);
                }
            }
        }
    }

    #[test]
    fn rb_dominates_direct_and_agrees() {
        let c = QuantumEventConfig { t_capacity: Some(0.2), ..config(QuantumMode::Direct, vec![0.3, 1.0], 4096, 1, false) };
        let m = model();
        let table = EventTable::build(16.0, c.multi_stop(), default_table_grid(1.0), 20_000, &SleConfig::events(), RandomStream::root(8)).unwrap();
        let e = estimate_quantum(&c, &m, Some(&table), 0, RandomStream::root(9)).unwrap();
        for row in compare_direct_rb(&e).unwrap() {
            assert!(row.rb_smaller_stderr, "{row:?}");
            assert!(row.agree, "{row:?}");
        }
    }

    #[test]
    fn split_inequality_holds() {
        let c = config(QuantumMode::Direct, vec![0.3, 1.0, 1e9], 256, 1, false);
        let rows = consistency_split(&c, &model(), 0.5, 10, RandomStream::root(10)).unwrap();
        for r in &rows {
            assert!(r.holds && r.slack >= 0.0, "{r:?}");
        }
        let big = rows.iter().find(|r| r.delta == 1e9).unwrap();
        assert_eq!((big.lhs, big.rhs_event), (1.0, 1.0));
    }

    #[test]
    fn synthetic_quantum_powers_recovered() {
        let cells: Vec<QuantumCell> = log_grid(1e-3, 1e-2, 5)
            .iter()
            .map(|&d| QuantumCell { delta: d, estimator: Estimator::RbAnalytic, estimate: 2.0 * d.powi(4), stderr: 0.05 * d.powi(4), n_fields: 10, n_sle: 0, both_capped_fraction: 0.0, table_rel_stderr: 0.0 })
            .collect();
        let f = fit_quantum_exponent(&cells, 1.0, 0.15).unwrap();
        assert!((f.fit.slope + 4.0).abs() < 1e-12);
        assert!(fit_quantum_exponent(&cells[..3], 1.0, 0.15).is_err());
    }
}
