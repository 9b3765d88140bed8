//! ToA ranging baselines and the log-distance RSS lateration strawman.
//!
//! All solvers work in meters and are deterministic functions of their
//! [`RangingInstance`].

use nalgebra::{DMatrix, Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dpm_sim::{gray_to_pathloss, SimParams, ToAMap, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::grid::{Pixel, Point};
use crate::heatloc::Sample;
use crate::rng;

/// Anchor positions with (possibly NLOS-biased) range estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangingInstance {
    pub anchors: Vec<Point>,
    pub ranges_m: Vec<f64>,
    pub truth: Option<Point>,
}

impl RangingInstance {
    pub fn new(anchors: Vec<Point>, ranges_m: Vec<f64>) -> Result<Self> {
        let inst = Self {
            anchors,
            ranges_m,
            truth: None,
        };
        inst.validate(1)?;
        Ok(inst)
    }

    pub fn with_truth(mut self, truth: Point) -> Self {
        self.truth = Some(truth);
        self
    }

    fn validate(&self, min_anchors: usize) -> Result<()> {
        if self.anchors.len() != self.ranges_m.len() {
            return Err(Error::Shape(format!(
                "{} anchors but {} ranges",
                self.anchors.len(),
                self.ranges_m.len()
            )));
        }
        if self.anchors.len() < min_anchors {
            return Err(Error::invalid(format!(
                "need at least {min_anchors} anchors, got {}",
                self.anchors.len()
            )));
        }
        if self.ranges_m.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("ranges must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn translated(&self, t: Point) -> Self {
        Self {
            anchors: self.anchors.iter().map(|&a| a + t).collect(),
            ranges_m: self.ranges_m.clone(),
            truth: self.truth.map(|p| p + t),
        }
    }

    fn centroid(&self) -> Point {
        let sum = self
            .anchors
            .iter()
            .fold(Point::default(), |acc, &a| acc + a);
        sum.scale(1.0 / self.anchors.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub estimate: Point,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Ranges `toa * c` (plus Gaussian timing noise, floored at zero) from every
/// ToA map at `ue`.
pub fn toa_to_instance(
    toa_maps: &[ToAMap],
    ue: Pixel,
    noise_s: f64,
    seed: u64,
) -> Result<RangingInstance> {
    let first = toa_maps
        .first()
        .ok_or_else(|| Error::invalid("no ToA maps"))?;
    let cell = first.cell_m;
    let noise = if noise_s > 0.0 {
        Some(
            Normal::new(0.0, noise_s)
                .map_err(|e| Error::invalid(format!("noise_s {noise_s}: {e}")))?,
        )
    } else {
        None
    };
    let mut anchors = Vec::with_capacity(toa_maps.len());
    let mut ranges = Vec::with_capacity(toa_maps.len());
    for (j, map) in toa_maps.iter().enumerate() {
        map.toa_s.check(ue)?;
        let mut toa = map.toa_s.get(ue);
        if let Some(n) = &noise {
            toa += n.sample(&mut rng::seeded(rng::derive(seed, "toa", j as u64)));
        }
        anchors.push(map.tx.to_meters(map.cell_m));
        ranges.push((toa * SPEED_OF_LIGHT).max(0.0));
    }
    Ok(RangingInstance {
        anchors,
        ranges_m: ranges,
        truth: Some(ue.to_meters(cell)),
    })
}

// ---------------------------------------------------------------------------
// POCS
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PocsConfig {
    pub max_iter: usize,
    pub tol_m: f64,
    /// 1.0 is a plain projection.
    pub relaxation: f64,
    /// Starting point; the anchor centroid when `None`.
    pub init: Option<Point>,
}

impl Default for PocsConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol_m: 1e-6,
            relaxation: 1.0,
            init: None,
        }
    }
}

fn project_disc(x: Point, center: Point, radius: f64) -> Point {
    let v = x - center;
    let r = v.norm();
    if r <= radius {
        x
    } else {
        center + v.scale(radius / r)
    }
}

fn disc_violation(inst: &RangingInstance, x: Point) -> f64 {
    inst.anchors
        .iter()
        .zip(&inst.ranges_m)
        .map(|(&a, &d)| (x.dist(a) - d).max(0.0).powi(2))
        .sum()
}

/// Cyclic projections onto the discs `|x - a_j| <= d_j`.
pub fn pocs_localize(inst: &RangingInstance, cfg: &PocsConfig) -> Result<SolverReport> {
    pocs_run(inst, cfg, |_| {})
}

/// Like [`pocs_localize`], also returning every intermediate iterate (one per
/// projection, starting with the initial point).
pub fn pocs_trace(inst: &RangingInstance, cfg: &PocsConfig) -> Result<(SolverReport, Vec<Point>)> {
    let mut trace = Vec::new();
    let report = pocs_run(inst, cfg, |p| trace.push(p))?;
    Ok((report, trace))
}

fn pocs_run(
    inst: &RangingInstance,
    cfg: &PocsConfig,
    mut visit: impl FnMut(Point),
) -> Result<SolverReport> {
    inst.validate(2)?;
    if !(cfg.relaxation > 0.0 && cfg.relaxation < 2.0) {
        return Err(Error::invalid(format!(
            "relaxation {} outside (0, 2)",
            cfg.relaxation
        )));
    }
    let mut x = cfg.init.unwrap_or_else(|| inst.centroid());
    visit(x);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        let start = x;
        for (&a, &d) in inst.anchors.iter().zip(&inst.ranges_m) {
            let p = project_disc(x, a, d);
            x = x + (p - x).scale(cfg.relaxation);
            visit(x);
        }
        if x.dist(start) < cfg.tol_m {
            converged = true;
            break;
        }
        iterations += 1;
    }
    Ok(SolverReport {
        estimate: x,
        iterations,
        converged,
        residual: disc_violation(inst, x),
    })
}

// ---------------------------------------------------------------------------
// GTRS bisection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtrsConfig {
    /// Target for the constraint residual |phi(lambda)|, m^2.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GtrsConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 500,
        }
    }
}

/// Squared-range least squares solved exactly as a generalized trust region
/// subproblem.
///
/// With `y = [x; |x|^2]` the problem is `min |A y - b|^2` subject to
/// `y' D y + 2 f' y = 0`, `D = diag(1, 1, 0)`, `f = (0, 0, -1/2)`. The optimum is
/// `y(λ) = (A'A + λD)^{-1} (A'b - λf)` where `λ` is the root of the decreasing
/// function `φ(λ) = y(λ)' D y(λ) + 2 f' y(λ)` on the interval where
/// `A'A + λD` is positive definite; the root is found by bisection. Anchors are
/// centered on their centroid first.
pub fn gtrs_bisection_localize(inst: &RangingInstance, cfg: &GtrsConfig) -> Result<SolverReport> {
    inst.validate(3)?;
    let center = inst.centroid();
    let rows = inst.anchors.len();
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    let mut b = nalgebra::DVector::<f64>::zeros(rows);
    for (i, (&anchor, &d)) in inst.anchors.iter().zip(&inst.ranges_m).enumerate() {
        let p = anchor - center;
        a[(i, 0)] = -2.0 * p.x;
        a[(i, 1)] = -2.0 * p.y;
        a[(i, 2)] = 1.0;
        b[i] = d * d - (p.x * p.x + p.y * p.y);
    }
    check_rank(&a)?;

    let ata: Matrix3<f64> = (a.transpose() * &a).fixed_view::<3, 3>(0, 0).into_owned();
    let atb: Vector3<f64> = (a.transpose() * &b).fixed_view::<3, 1>(0, 0).into_owned();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    let f = Vector3::new(0.0, 0.0, -0.5);

    let y_of = |lambda: f64| -> Option<Vector3<f64>> {
        (ata + d * lambda)
            .cholesky()
            .map(|c| c.solve(&(atb - f * lambda)))
    };
    let phi = |y: &Vector3<f64>| y.x * y.x + y.y * y.y - y.z;

    // A'A + λD ≻ 0  <=>  λ > -1 / λ_max(L^{-1} D L^{-T}) with A'A = L L'.
    let chol = ata.cholesky().ok_or(Error::CollinearAnchors)?;
    let l_inv = chol.l().try_inverse().ok_or(Error::CollinearAnchors)?;
    let pencil = l_inv * d * l_inv.transpose();
    let eig_max = SymmetricEigen::new(pencil).eigenvalues.max();
    let lower = -1.0 / eig_max;

    let finish = |lambda: f64, iterations: usize, converged: bool| -> Result<SolverReport> {
        let y = y_of(lambda).ok_or(Error::CollinearAnchors)?;
        let x = Point::new(y.x, y.y) + center;
        let residual = inst
            .anchors
            .iter()
            .zip(&inst.ranges_m)
            .map(|(&anc, &r)| (x.dist(anc).powi(2) - r * r).powi(2))
            .sum();
        Ok(SolverReport {
            estimate: x,
            iterations,
            converged,
            residual,
        })
    };

    // bracket: phi(lo) > 0 > phi(hi)
    let scale = ata.norm().max(1.0);
    let mut hi = scale.max(lower.abs());
    let mut tries = 0;
    while y_of(hi).map(|y| phi(&y)).unwrap_or(f64::NAN) > 0.0 && tries < 200 {
        hi *= 2.0;
        tries += 1;
    }
    let mut step = (hi - lower).max(1.0);
    let mut lo = lower + step;
    let mut tries = 0;
    while lo >= hi || y_of(lo).map(|y| phi(&y) <= 0.0).unwrap_or(true) {
        step *= 0.5;
        lo = lower + step;
        tries += 1;
        if tries > 200 || step == 0.0 {
            break;
        }
    }
    let phi_lo = y_of(lo).map(|y| phi(&y));
    let phi_hi = y_of(hi).map(|y| phi(&y));
    match (phi_lo, phi_hi) {
        (Some(pl), Some(ph)) if pl > 0.0 && ph < 0.0 => {}
        (Some(pl), _) if pl.abs() < cfg.tol => return finish(lo, 0, true),
        (_, Some(ph)) if ph.abs() < cfg.tol => return finish(hi, 0, true),
        _ => {
            // hard case or failed bracket: report the best available point
            let lambda = if lo < hi { lo } else { hi };
            return finish(lambda, 0, false);
        }
    }

    for it in 1..=cfg.max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return finish(mid, it, false);
        }
        let y = y_of(mid).ok_or(Error::CollinearAnchors)?;
        let value = phi(&y);
        if value.abs() < cfg.tol {
            return finish(mid, it, true);
        }
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    finish(0.5 * (lo + hi), cfg.max_iter, false)
}

fn check_rank(a: &DMatrix<f64>) -> Result<()> {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= 1e-9 * max {
        return Err(Error::CollinearAnchors);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Maximum correntropy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrentropyConfig {
    pub sigma_m: f64,
    pub max_iter: usize,
    pub tol_m: f64,
}

impl Default for CorrentropyConfig {
    fn default() -> Self {
        Self {
            sigma_m: 5.0,
            max_iter: 200,
            tol_m: 1e-9,
        }
    }
}

/// Maximizes `Σ exp(-(d_j - |x - a_j|)^2 / 2σ^2)` by half-quadratic
/// iterations: Gaussian weights from the current residuals, then one weighted
/// Gauss-Newton step. The objective is multimodal, so the iterations start
/// from the GTRS solution and from every leave-one-out GTRS solution; the
/// result with the best objective wins.
pub fn correntropy_localize(
    inst: &RangingInstance,
    cfg: &CorrentropyConfig,
) -> Result<SolverReport> {
    inst.validate(3)?;
    if !(cfg.sigma_m > 0.0) {
        return Err(Error::invalid(format!(
            "sigma_m must be positive, got {}",
            cfg.sigma_m
        )));
    }
    let gtrs = GtrsConfig::default();
    let mut starts = vec![gtrs_bisection_localize(inst, &gtrs)?.estimate];
    if inst.anchors.len() > 3 {
        for skip in 0..inst.anchors.len() {
            fn keep<T: Copy>(v: &[T], skip: usize) -> Vec<T> {
                v.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != skip)
                    .map(|(_, x)| *x)
                    .collect()
            }
            let sub = RangingInstance {
                anchors: keep(&inst.anchors, skip),
                ranges_m: keep(&inst.ranges_m, skip),
                truth: None,
            };
            // degenerate subsets (e.g. collinear) simply contribute no start
            if let Ok(r) = gtrs_bisection_localize(&sub, &gtrs) {
                starts.push(r.estimate);
            }
        }
    }
    let mut best: Option<SolverReport> = None;
    for x0 in starts {
        let r = correntropy_refine(inst, cfg, x0);
        if best.as_ref().is_none_or(|b| r.residual < b.residual) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least the full GTRS start"))
}

/// Half-quadratic iterations from `x`; `residual` is `Σ 1 - exp(..)`.
fn correntropy_refine(
    inst: &RangingInstance,
    cfg: &CorrentropyConfig,
    mut x: Point,
) -> SolverReport {
    let two_s2 = 2.0 * cfg.sigma_m * cfg.sigma_m;
    let loss = |x: Point| -> f64 {
        inst.anchors
            .iter()
            .zip(&inst.ranges_m)
            .map(|(&a, &d)| 1.0 - (-(d - x.dist(a)).powi(2) / two_s2).exp())
            .sum()
    };
    for it in 1..=cfg.max_iter {
        let mut h = Matrix2::<f64>::zeros();
        let mut g = Vector2::<f64>::zeros();
        for (&a, &d) in inst.anchors.iter().zip(&inst.ranges_m) {
            let v = x - a;
            let dist = v.norm();
            if dist == 0.0 {
                continue;
            }
            let r = d - dist;
            let w = (-r * r / two_s2).exp();
            // dr/dx = -(x - a) / |x - a|
            let j = Vector2::new(-v.x / dist, -v.y / dist);
            h += j * j.transpose() * w;
            g += j * (w * r);
        }
        let scale = h.norm();
        let Some(step) = h
            .try_inverse()
            .filter(|_| scale > 0.0 && h.determinant().abs() > 1e-14 * scale * scale)
            .map(|hi| -(hi * g))
        else {
            return SolverReport {
                estimate: x,
                iterations: it,
                converged: false,
                residual: loss(x),
            };
        };
        x = x + Point::new(step.x, step.y);
        if step.norm() < cfg.tol_m {
            return SolverReport {
                estimate: x,
                iterations: it,
                converged: true,
                residual: loss(x),
            };
        }
    }
    SolverReport {
        estimate: x,
        iterations: cfg.max_iter,
        converged: false,
        residual: loss(x),
    }
}

// ---------------------------------------------------------------------------
// RSS lateration
// ---------------------------------------------------------------------------

/// `PL(d) = -(l0 + 10 n log10(d / cell))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogDistanceModel {
    pub l0_db: f64,
    pub path_exponent: f64,
}

impl LogDistanceModel {
    pub fn from_params(p: &SimParams) -> Self {
        Self {
            l0_db: p.l0_db,
            path_exponent: p.path_exponent,
        }
    }

    /// Distance (m) at which the model predicts `pl_db`, clamped to `[0, max_m]`.
    pub fn invert(&self, pl_db: f64, cell_m: f64, max_m: f64) -> f64 {
        let d = cell_m * 10f64.powf((-pl_db - self.l0_db) / (10.0 * self.path_exponent));
        if d.is_finite() {
            d.clamp(0.0, max_m)
        } else {
            max_m
        }
    }

    /// Least-squares fit of `(l0, n)` to `(distance_m, pl_db)` pairs with
    /// distance of at least one cell.
    pub fn fit(pairs: &[(f64, f64)], cell_m: f64) -> Result<Self> {
        let pts: Vec<(f64, f64)> = pairs
            .iter()
            .filter(|(d, _)| *d >= cell_m)
            .map(|&(d, pl)| (10.0 * (d / cell_m).log10(), -pl))
            .collect();
        if pts.len() < 2 {
            return Err(Error::invalid("need at least two pairs beyond one cell"));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        if sxx == 0.0 {
            return Err(Error::invalid(
                "all distances equal; exponent not identifiable",
            ));
        }
        let slope = sxy / sxx;
        Ok(Self {
            l0_db: my - slope * mx,
            path_exponent: slope,
        })
    }
}

/// Inverts the log-distance model per base station and laterates with GTRS.
/// Ranges are capped at the grid diagonal.
pub fn rss_log_distance_localize(
    sample: &Sample,
    model: &LogDistanceModel,
) -> Result<SolverReport> {
    let window = sample
        .radio_maps_est
        .first()
        .map(|r| r.params)
        .ok_or_else(|| Error::invalid("sample has no radio maps"))?;
    let cell = sample.city.cell_m;
    let max_m = sample.city.size() as f64 * std::f64::consts::SQRT_2 * cell;
    let ranges = sample
        .p_meas
        .iter()
        .map(|&g| model.invert(gray_to_pathloss(g, &window), cell, max_m))
        .collect();
    let inst = RangingInstance {
        anchors: sample.bs.iter().map(|b| b.to_meters(cell)).collect(),
        ranges_m: ranges,
        truth: Some(sample.truth.to_meters(cell)),
    };
    gtrs_bisection_localize(&inst, &GtrsConfig::default())
}
