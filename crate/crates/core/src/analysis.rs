//! Closed-form checks on optimized designs: IREE bounds, the gap between
//! the lower-bound and exact capacity models, the (L0, L1) smoothness
//! condition and the operation-count estimate.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::dinkelbach::{DinkelbachConfig, SolveOutcome};
use crate::error::{invalid, Result};
use crate::metrics::{capacity_field, js_divergence, network_utility, power_total, Scenario};
use crate::numeric::pairwise_sum;
use crate::propagation::{path_loss, CapacityModel, NetworkDesign, Point2D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IreeBounds {
    /// bit/J
    pub lower: f64,
    /// bit/J
    pub upper: f64,
    /// Minimum transmit power for the single central station, W.
    pub p_required: f64,
    pub xi_bar: f64,
}

/// Area-average path loss from the area centre, on the scenario grid.
pub fn mean_loss_from_center(scenario: &Scenario) -> Result<f64> {
    let center = scenario.grid.bounds.center();
    let losses = scenario
        .grid
        .points
        .iter()
        .map(|&p| path_loss(p, center, &scenario.loss_defaults))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&losses) / losses.len() as f64)
}

/// `P_D = B_max·σ²·L̄·(2^{D_Tot/(V·B_max)} − 1)`.
pub fn required_power(scenario: &Scenario) -> Result<f64> {
    let mean_loss = mean_loss_from_center(scenario)?;
    let exponent = scenario.d_tot() / (scenario.grid.area() * scenario.b_max);
    Ok(scenario.b_max * scenario.noise_psd * mean_loss * (exponent * LN_2).exp_m1())
}

pub fn iree_bounds(scenario: &Scenario, xi_bar: f64) -> Result<IreeBounds> {
    if !(0.0..=1.0).contains(&xi_bar) {
        return Err(invalid(format!("xi_bar must lie in [0, 1], got {xi_bar}")));
    }
    let p_required = required_power(scenario)?;
    let circuit = scenario.n_bs as f64 * scenario.power_model.p_circuit;
    let lambda = scenario.power_model.lambda;
    let useful = scenario.d_tot() * (1.0 - xi_bar);
    Ok(IreeBounds {
        lower: useful / (lambda * scenario.p_max + circuit),
        upper: useful / (lambda * p_required + circuit),
        p_required,
        xi_bar,
    })
}

/// Root of a monotone function on `[lo, hi]` by bisection.
pub fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, rel_tol: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo.signum() == fhi.signum() {
        return Err(invalid("bisection bracket does not change sign"));
    }
    let rising = fhi > flo;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= rel_tol * mid.abs() {
            return Ok(mid);
        }
        if (f(mid) > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub bounds: IreeBounds,
    pub eta: f64,
    /// Only meaningful when the design's capacity covers the traffic.
    pub applicable: bool,
    pub pass: bool,
}

/// `lower − tol ≤ η ≤ upper + tol`, `tol = 1e-6·upper`, at the achieved ξ.
pub fn check_bounds(eta: f64, xi: f64, c_tot: f64, scenario: &Scenario) -> Result<BoundCheck> {
    let bounds = iree_bounds(scenario, xi.clamp(0.0, 1.0))?;
    let tol = 1e-6 * bounds.upper;
    Ok(BoundCheck {
        bounds,
        eta,
        applicable: c_tot >= scenario.d_tot(),
        pass: eta >= bounds.lower - tol && eta <= bounds.upper + tol,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// bit/J
    pub bound: f64,
    /// `|η^T − η^S|`, bit/J
    pub measured: f64,
    pub eta_lower_model: f64,
    pub eta_exact_model: f64,
    pub xi_lower_model: f64,
    pub xi_exact_model: f64,
    /// Divergence between the two capacity fields.
    pub xi_between: f64,
    pub c_lower_model: f64,
    pub c_exact_model: f64,
    pub p_t: f64,
}

impl GapReport {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }
}

/// Bound on the IREE difference between the lower-bound and exact capacity
/// models, with the measured difference on the same design.
pub fn optimality_gap_bound(design: &NetworkDesign, scenario: &Scenario) -> Result<GapReport> {
    let c_s = capacity_field(design, scenario, CapacityModel::LowerBound)?;
    let c_t = capacity_field(design, scenario, CapacityModel::Exact)?;
    let d = &scenario.traffic;
    let xi_s = js_divergence(&c_s, d)?;
    let xi_t = js_divergence(&c_t, d)?;
    let xi_st = js_divergence(&c_s, &c_t)?;
    let (cs, ct, dt) = (c_s.total(), c_t.total(), scenario.d_tot());
    let p_t = power_total(design, &scenario.power_model);
    let eta_s = network_utility(cs, dt, xi_s) / p_t;
    let eta_t = network_utility(ct, dt, xi_t) / p_t;
    let bound = if cs <= dt {
        ((1.0 - xi_s) * (ct - cs) + xi_st * ct) / ((1.0 - xi_s + xi_st) * p_t)
    } else {
        dt * xi_st / p_t
    };
    Ok(GapReport {
        bound,
        measured: (eta_t - eta_s).abs(),
        eta_lower_model: eta_s,
        eta_exact_model: eta_t,
        xi_lower_model: xi_s,
        xi_exact_model: xi_t,
        xi_between: xi_st,
        c_lower_model: cs,
        c_exact_model: ct,
        p_t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessCheck {
    pub satisfied: bool,
    /// LHS − RHS
    pub margin: f64,
}

/// `Σ Λ_n(ℒ) ≥ Σ 2B_n/(√((B_n L1)² + 4 ln2 L0) + B_n L1) − P_max` with
/// `Λ_n = B_max σ² L_n(ℒ)`.
pub fn smoothness_criterion(
    design: &NetworkDesign,
    loc: Point2D,
    l0: f64,
    l1: f64,
    scenario: &Scenario,
) -> Result<SmoothnessCheck> {
    if !(l0 >= 0.0 && l1 >= 0.0) {
        return Err(invalid("smoothness constants must be nonnegative"));
    }
    let k = scenario.b_max * scenario.noise_psd;
    let mut lhs = 0.0;
    let mut rhs = -scenario.p_max;
    for bs in &design.stations {
        lhs += k * path_loss(loc, bs.location, &bs.loss)?;
        let bl = bs.bandwidth * l1;
        let denom = ((bl * bl) + 4.0 * LN_2 * l0).sqrt() + bl;
        rhs += if denom > 0.0 { 2.0 * bs.bandwidth / denom } else { f64::INFINITY };
    }
    let margin = lhs - rhs;
    Ok(SmoothnessCheck {
        satisfied: margin >= 0.0,
        margin,
    })
}

/// `N_epoch·N_ite·(N_BS² + M·N_BS)`.
pub fn complexity_estimate(n_epoch: usize, n_iterations: usize, n_bs: usize, m: usize) -> f64 {
    let (e, k, n, m) = (n_epoch as f64, n_iterations as f64, n_bs as f64, m as f64);
    e * k * (n * n + m * n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub bounds: Option<BoundCheck>,
    pub gap: GapReport,
    pub predicted_operations: f64,
    pub measured_loss_evaluations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub monotonicity_violations: usize,
}

/// Bounds, gap and operation counts for a finished run.
pub fn analyze(outcome: &SolveOutcome, scenario: &Scenario, config: &DinkelbachConfig) -> Result<AnalysisReport> {
    let r = &outcome.report;
    let bounds = if r.c_tot >= r.d_tot {
        Some(check_bounds(r.iree, r.xi, r.c_tot, scenario)?)
    } else {
        None
    };
    let iterations = outcome.trace.records.len();
    Ok(AnalysisReport {
        bounds,
        gap: optimality_gap_bound(&outcome.design, scenario)?,
        predicted_operations: complexity_estimate(config.adam.n_epoch, iterations, scenario.n_bs, scenario.grid.len()),
        measured_loss_evaluations: outcome.trace.loss_evaluations,
        outer_iterations: iterations,
        converged: outcome.trace.converged,
        feasible: outcome.feasible,
        monotonicity_violations: outcome.trace.monotonicity_violations,
    })
}

impl AnalysisReport {
    /// IREE bound containment, vacuously true when capacity falls short of traffic.
    pub fn bounds_pass(&self) -> bool {
        self.bounds.map_or(true, |b| b.pass)
    }
}
