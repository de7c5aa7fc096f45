//! Training objective and its analytic gradient.
//!
//! The loss is evaluated in scaled units so every term is O(1): capacities
//! and traffic are divided by a capacity scale (D_Tot for the IREE objective),
//! powers by P_max and bandwidths by B_max. For the IREE objective
//!
//! ```text
//! total = −min{C̃, D̃}(1 − ξ) + η̃·P_T/P_max + ω·Ω̃
//! Ω̃     = max{ζ_min − ζ, 0} + max{ΣB/B_max − 1, 0} + max{ΣP/P_max − 1, 0}
//! η̃     = η·P_max / scale
//! ```
//!
//! Subgradients: `min` at a tie takes the capacity branch, `max{u, 0}` at
//! `u = 0` takes 0.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::{Scenario, PROB_FLOOR};
use crate::numeric::{l2_norm, pairwise_sum};
use crate::propagation::{BaseStation, NetworkDesign, Point2D};

/// Hz
pub const B_FLOOR: f64 = 1.0;
/// W
pub const P_FLOOR: f64 = 1e-9;

/// Flat layout `[x_1, y_1, …, x_N, y_N, B_1, …, B_N, P_1, …, P_N]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_bs: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        4 * self.n_bs
    }

    pub fn is_empty(&self) -> bool {
        self.n_bs == 0
    }

    pub fn x(&self, n: usize) -> usize {
        2 * n
    }

    pub fn y(&self, n: usize) -> usize {
        2 * n + 1
    }

    pub fn bandwidth(&self, n: usize) -> usize {
        2 * self.n_bs + n
    }

    pub fn power(&self, n: usize) -> usize {
        3 * self.n_bs + n
    }

    pub fn power_block(&self) -> std::ops::Range<usize> {
        3 * self.n_bs..4 * self.n_bs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn from_design(design: &NetworkDesign) -> Self {
        let layout = Layout { n_bs: design.len() };
        let mut values = vec![0.0; layout.len()];
        for (n, bs) in design.stations.iter().enumerate() {
            values[layout.x(n)] = bs.location.x;
            values[layout.y(n)] = bs.location.y;
            values[layout.bandwidth(n)] = bs.bandwidth;
            values[layout.power(n)] = bs.tx_power;
        }
        Self { values, layout }
    }

    /// Stations all use the scenario's default path-loss parameters.
    pub fn to_design(&self, scenario: &Scenario) -> NetworkDesign {
        let l = self.layout;
        NetworkDesign {
            stations: (0..l.n_bs)
                .map(|n| BaseStation {
                    location: Point2D::new(self.values[l.x(n)], self.values[l.y(n)]),
                    bandwidth: self.values[l.bandwidth(n)],
                    tx_power: self.values[l.power(n)],
                    loss: scenario.loss_defaults,
                })
                .collect(),
        }
    }

    pub fn n_bs(&self) -> usize {
        self.layout.n_bs
    }

    pub fn bandwidth(&self, n: usize) -> f64 {
        self.values[self.layout.bandwidth(n)]
    }

    pub fn power(&self, n: usize) -> f64 {
        self.values[self.layout.power(n)]
    }

    pub fn location(&self, n: usize) -> Point2D {
        Point2D::new(self.values[self.layout.x(n)], self.values[self.layout.y(n)])
    }

    pub fn total_bandwidth(&self) -> f64 {
        (0..self.n_bs()).map(|n| self.bandwidth(n)).sum()
    }

    pub fn total_power(&self) -> f64 {
        (0..self.n_bs()).map(|n| self.power(n)).sum()
    }

    pub fn apply_floors(&mut self) {
        let l = self.layout;
        for n in 0..l.n_bs {
            let b = &mut self.values[l.bandwidth(n)];
            *b = b.max(B_FLOOR);
            let p = &mut self.values[l.power(n)];
            *p = p.max(P_FLOOR);
        }
    }

    pub fn respects_floors(&self) -> bool {
        (0..self.n_bs()).all(|n| self.bandwidth(n) >= B_FLOOR && self.power(n) >= P_FLOOR)
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.layout.len() {
            return Err(invalid("parameter vector length does not match its layout"));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite parameter at index {i}")));
        }
        if !self.respects_floors() {
            return Err(invalid("bandwidth or power below its positivity floor"));
        }
        Ok(())
    }
}

/// Per-coordinate scale used by the optimizer: positions by the area
/// extent, bandwidths by `B_max/N`, powers by `P_max/N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamScaling {
    pub scale: Vec<f64>,
}

impl ParamScaling {
    pub fn for_scenario(scenario: &Scenario, layout: Layout) -> Self {
        let n = layout.n_bs as f64;
        let mut scale = vec![0.0; layout.len()];
        for k in 0..layout.n_bs {
            scale[layout.x(k)] = scenario.grid.bounds.width();
            scale[layout.y(k)] = scenario.grid.bounds.height();
            scale[layout.bandwidth(k)] = scenario.b_max / n;
            scale[layout.power(k)] = scenario.p_max / n;
        }
        Self { scale }
    }

    pub fn to_scaled(&self, params: &[f64]) -> Vec<f64> {
        params.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }

    pub fn from_scaled(&self, scaled: &[f64]) -> Vec<f64> {
        scaled.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }

    /// Physical gradient → gradient w.r.t. scaled coordinates.
    pub fn scale_gradient(&self, grad: &[f64]) -> Vec<f64> {
        grad.iter().zip(&self.scale).map(|(g, s)| g * s).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `−min{C,D}(1−ξ) + η·P_T` with ζ and budget penalties.
    Iree,
    /// `−C + η·P_T` with budget penalties only.
    Ee,
    /// `−C` with budget penalties only.
    Se,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub utility_term: f64,
    pub power_term: f64,
    pub penalty_term: f64,
    pub total: f64,
}

/// Scaled quantities observed at one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossDetail {
    /// C_Tot / scale
    pub c_scaled: f64,
    pub d_scaled: f64,
    pub xi: f64,
    pub zeta: f64,
    /// Unweighted penalty residuals (ζ, ΣB/B_max − 1, ΣP/P_max − 1), clipped at 0.
    pub residuals: [f64; 3],
    /// Smallest relative distance to a min/max switching surface.
    pub kink_gap: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub detail: LossDetail,
    /// d total / d params, physical units, same layout
    pub grad: Option<Vec<f64>>,
}

/// Loss for one (objective, η, ω) on one scenario.
#[derive(Clone, Debug)]
pub struct LossProblem<'a> {
    pub scenario: &'a Scenario,
    pub objective: Objective,
    /// bit/J
    pub eta: f64,
    pub omega: f64,
    /// bit/s; capacities are divided by this
    pub capacity_scale: f64,
    traffic_norm: Vec<f64>,
    d_scaled: f64,
}

impl<'a> LossProblem<'a> {
    pub fn iree(scenario: &'a Scenario, eta: f64, omega: f64) -> Result<Self> {
        let d_tot = scenario.d_tot();
        Self::new(scenario, Objective::Iree, eta, omega, d_tot)
    }

    pub fn new(scenario: &'a Scenario, objective: Objective, eta: f64, omega: f64, capacity_scale: f64) -> Result<Self> {
        if !eta.is_finite() || !omega.is_finite() || omega < 0.0 {
            return Err(invalid(format!("invalid eta/omega ({eta}, {omega})")));
        }
        if !(capacity_scale > 0.0 && capacity_scale.is_finite()) {
            return Err(invalid("capacity scale must be positive"));
        }
        let d = &scenario.traffic.values;
        let d_sum = pairwise_sum(d);
        let traffic_norm = if objective == Objective::Iree {
            if !(d_sum > 0.0) {
                return Err(crate::error::Error::ZeroTotal("traffic"));
            }
            d.iter().map(|v| v / d_sum).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            scenario,
            objective,
            eta,
            omega,
            capacity_scale,
            traffic_norm,
            d_scaled: scenario.d_tot() / capacity_scale,
        })
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..self.clone() }
    }

    pub fn with_omega(&self, omega: f64) -> Self {
        Self { omega, ..self.clone() }
    }

    /// η expressed in scaled loss units.
    pub fn eta_scaled(&self) -> f64 {
        self.eta * self.scenario.p_max / self.capacity_scale
    }

    pub fn loss(&self, params: &ParamVector) -> Result<LossBreakdown> {
        Ok(self.evaluate(params, false)?.loss)
    }

    pub fn gradient(&self, params: &ParamVector) -> Result<Vec<f64>> {
        Ok(self.evaluate(params, true)?.grad.expect("gradient requested"))
    }

    pub fn evaluate(&self, params: &ParamVector, want_grad: bool) -> Result<Evaluation> {
        params.check()?;
        let s = self.scenario;
        let layout = params.layout;
        let n_bs = layout.n_bs;
        let points = &s.grid.points;
        let m = points.len();
        let k_noise = s.b_max * s.noise_psd;
        let pl = &s.loss_defaults;
        let half_alpha = 0.5 * pl.alpha;

        // Forward pass through the RBF layer. Cache the per-pair partials the
        // backward pass needs.
        let mut cap = vec![0.0; m];
        let pairs = if want_grad { n_bs * m } else { 0 };
        let mut se = vec![0.0; pairs];
        let mut d_se_dp = vec![0.0; pairs];
        let mut d_se_dq = vec![0.0; pairs];
        for n in 0..n_bs {
            let loc = params.location(n);
            let bw = params.bandwidth(n);
            let p = params.power(n);
            for (j, pt) in points.iter().enumerate() {
                let q = pl.quad_form(pt.x - loc.x, pt.y - loc.y);
                let q_pow = if q > 0.0 { q.powf(half_alpha) } else { 0.0 };
                let loss = pl.gamma * q_pow + pl.beta;
                let kl = k_noise * loss;
                let s_nj = (p / kl).ln_1p() / LN_2;
                cap[j] += bw * s_nj;
                if want_grad {
                    let idx = n * m + j;
                    se[idx] = s_nj;
                    let denom = LN_2 * (kl + p);
                    d_se_dp[idx] = 1.0 / denom;
                    // dS/dL · dL/dq
                    let d_loss_dq = if q > 0.0 { pl.gamma * half_alpha * q_pow / q } else { 0.0 };
                    d_se_dq[idx] = -p / (loss * denom) * d_loss_dq;
                }
            }
        }

        let w = s.grid.weight;
        let c_sum = pairwise_sum(&cap);
        let c_scaled = c_sum * w / self.capacity_scale;
        let b_res = params.total_bandwidth() / s.b_max - 1.0;
        let p_res = params.total_power() / s.p_max - 1.0;
        let p_t = (0..n_bs)
            .map(|n| s.power_model.lambda * params.power(n) + s.power_model.p_circuit)
            .sum::<f64>();
        let power_scaled = p_t / s.p_max;

        let mut detail = LossDetail {
            c_scaled,
            d_scaled: self.d_scaled,
            ..Default::default()
        };
        let mut kink_gap = f64::INFINITY;
        kink_gap = kink_gap.min(b_res.abs()).min(p_res.abs());

        // dTotal/dc_j (physical density) and the scaled loss terms.
        let mut d_total_d_cap = vec![0.0; if want_grad { m } else { 0 }];
        let (utility, power_term, zeta_res) = match self.objective {
            Objective::Iree => {
                if !(c_sum > 0.0) {
                    return Err(crate::error::Error::ZeroTotal("capacity"));
                }
                let d_norm = &self.traffic_norm;
                let mut g = vec![0.0; m];
                let mut terms = vec![0.0; m];
                for j in 0..m {
                    let pj = cap[j] / c_sum;
                    let qj = d_norm[j];
                    terms[j] = crate::metrics::js_term(pj, qj) + crate::metrics::js_term(qj, pj);
                    // ∂ξ/∂p_j = ½ log2(2p/(p+q)); floored at p = 0.
                    g[j] = 0.5 * (2.0 * pj / (pj + qj)).max(PROB_FLOOR).log2();
                }
                let xi = (0.5 * pairwise_sum(&terms)).clamp(0.0, 1.0);
                let capacity_branch = c_scaled <= self.d_scaled;
                let u = if capacity_branch {
                    c_scaled * (1.0 - xi)
                } else {
                    self.d_scaled * (1.0 - xi)
                };
                let zeta = if capacity_branch { u / self.d_scaled } else { 1.0 - xi };
                let zeta_res = s.zeta_min - zeta;
                kink_gap = kink_gap
                    .min(((c_scaled - self.d_scaled) / self.d_scaled).abs())
                    .min(zeta_res.abs());
                detail.xi = xi;
                detail.zeta = zeta;

                if want_grad {
                    let g_mean: f64 = pairwise_sum(&(0..m).map(|j| g[j] * cap[j] / c_sum).collect::<Vec<_>>());
                    let zeta_active = self.omega > 0.0 && zeta_res > 0.0;
                    for j in 0..m {
                        let dxi = (g[j] - g_mean) / c_sum;
                        let du = if capacity_branch {
                            w / self.capacity_scale * (1.0 - xi) - c_scaled * dxi
                        } else {
                            -self.d_scaled * dxi
                        };
                        let mut dt = -du;
                        if zeta_active {
                            dt -= self.omega * du / self.d_scaled;
                        }
                        d_total_d_cap[j] = dt;
                    }
                }
                (u, self.eta_scaled() * power_scaled, zeta_res)
            }
            Objective::Ee | Objective::Se => {
                if want_grad {
                    d_total_d_cap.iter_mut().for_each(|v| *v = -w / self.capacity_scale);
                }
                let power_term = if self.objective == Objective::Ee {
                    self.eta_scaled() * power_scaled
                } else {
                    0.0
                };
                (c_scaled, power_term, f64::NEG_INFINITY)
            }
        };
        detail.kink_gap = kink_gap;
        detail.residuals = [zeta_res.max(0.0), b_res.max(0.0), p_res.max(0.0)];
        let omega_sum: f64 = detail.residuals.iter().sum();
        let penalty_term = self.omega * omega_sum;
        let loss = LossBreakdown {
            utility_term: -utility,
            power_term,
            penalty_term,
            total: -utility + power_term + penalty_term,
        };
        if !loss.total.is_finite() {
            return Err(invalid(format!("non-finite loss {loss:?}")));
        }

        let grad = if want_grad {
            let mut grad = vec![0.0; layout.len()];
            let [[ga, gb], [_, gd]] = pl.shape;
            for n in 0..n_bs {
                let loc = params.location(n);
                let bw = params.bandwidth(n);
                let (mut gx, mut gy, mut gbw, mut gp) = (0.0, 0.0, 0.0, 0.0);
                for (j, pt) in points.iter().enumerate() {
                    let idx = n * m + j;
                    let up = d_total_d_cap[j];
                    gbw += up * se[idx];
                    gp += up * bw * d_se_dp[idx];
                    // dq/dℒ_n = −2Γδ
                    let (dx, dy) = (pt.x - loc.x, pt.y - loc.y);
                    let common = up * bw * d_se_dq[idx] * -2.0;
                    gx += common * (ga * dx + gb * dy);
                    gy += common * (gb * dx + gd * dy);
                }
                grad[layout.x(n)] = gx;
                grad[layout.y(n)] = gy;
                grad[layout.bandwidth(n)] = gbw;
                grad[layout.power(n)] = gp;
            }
            let lambda = s.power_model.lambda;
            let eta_term = match self.objective {
                Objective::Iree | Objective::Ee => self.eta_scaled() * lambda / s.p_max,
                Objective::Se => 0.0,
            };
            for n in 0..n_bs {
                grad[layout.power(n)] += eta_term;
                if self.omega > 0.0 && b_res > 0.0 {
                    grad[layout.bandwidth(n)] += self.omega / s.b_max;
                }
                if self.omega > 0.0 && p_res > 0.0 {
                    grad[layout.power(n)] += self.omega / s.p_max;
                }
            }
            Some(grad)
        } else {
            None
        };

        Ok(Evaluation { loss, detail, grad })
    }
}

pub fn loss(params: &ParamVector, eta: f64, omega: f64, scenario: &Scenario) -> Result<LossBreakdown> {
    LossProblem::iree(scenario, eta, omega)?.loss(params)
}

pub fn grad_loss(params: &ParamVector, eta: f64, omega: f64, scenario: &Scenario) -> Result<Vec<f64>> {
    LossProblem::iree(scenario, eta, omega)?.gradient(params)
}

/// Central differences taken in the optimizer's scaled coordinates with
/// step `step·(1 + |u_i|)`, mapped back to physical units.
pub fn finite_diff_grad_with(problem: &LossProblem<'_>, params: &ParamVector, step: f64) -> Result<Vec<f64>> {
    let scaling = ParamScaling::for_scenario(problem.scenario, params.layout);
    let base = scaling.to_scaled(&params.values);
    let mut grad = vec![0.0; base.len()];
    let mut probe = params.clone();
    for i in 0..base.len() {
        let h = step * (1.0 + base[i].abs());
        let mut eval_at = |u: f64| -> Result<f64> {
            probe.values[i] = u * scaling.scale[i];
            problem.loss(&probe).map(|l| l.total)
        };
        let plus = eval_at(base[i] + h)?;
        let minus = eval_at(base[i] - h)?;
        probe.values[i] = params.values[i];
        grad[i] = (plus - minus) / (2.0 * h) / scaling.scale[i];
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// Largest coordinate-wise relative error in scaled units.
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    /// Smallest distance to a `min`/`max` switch; checks near zero are unreliable.
    pub kink_gap: f64,
}

/// Compares a physical-unit gradient with a Richardson-extrapolated central
/// difference (steps `2e-5` and `1e-5` in scaled coordinates).
pub fn gradient_check(problem: &LossProblem<'_>, params: &ParamVector, analytic: &[f64]) -> Result<GradientCheck> {
    let eval = problem.evaluate(params, false)?;
    let scaling = ParamScaling::for_scenario(problem.scenario, params.layout);
    let coarse = finite_diff_grad_with(problem, params, 2e-5)?;
    let fine = finite_diff_grad_with(problem, params, 1e-5)?;
    let extrapolated: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect();
    let ga = scaling.scale_gradient(analytic);
    let gf = scaling.scale_gradient(&extrapolated);
    let mut worst = (0.0, 0);
    for (i, (a, f)) in ga.iter().zip(&gf).enumerate() {
        let err = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
        if !(err <= worst.0) {
            worst = (err, i);
        }
    }
    Ok(GradientCheck {
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
        kink_gap: eval.detail.kink_gap,
    })
}

pub fn finite_diff_grad(params: &ParamVector, eta: f64, omega: f64, scenario: &Scenario, step: f64) -> Result<Vec<f64>> {
    finite_diff_grad_with(&LossProblem::iree(scenario, eta, omega)?, params, step)
}

/// First- and second-order gradient norms over the power block, both in
/// scaled power units. The second-order part is a central difference of the
/// analytic gradient with relative step `step`.
pub fn power_block_norms(problem: &LossProblem<'_>, params: &ParamVector, step: f64) -> Result<(f64, f64)> {
    let scaling = ParamScaling::for_scenario(problem.scenario, params.layout);
    let layout = params.layout;
    let g = scaling.scale_gradient(&problem.gradient(params)?);
    let g1 = l2_norm(&g[layout.power_block()]);
    let mut second = Vec::with_capacity(layout.n_bs);
    let mut probe = params.clone();
    for n in 0..layout.n_bs {
        let i = layout.power(n);
        let s = scaling.scale[i];
        let u = params.values[i] / s;
        let h = step * (1.0 + u.abs());
        probe.values[i] = (u + h) * s;
        let gp = problem.gradient(&probe)?[i] * s;
        // One-sided next to the power floor.
        let (lower, span) = if (u - h) * s >= P_FLOOR { (u - h, 2.0 * h) } else { (u, h) };
        probe.values[i] = lower * s;
        let gm = problem.gradient(&probe)?[i] * s;
        probe.values[i] = params.values[i];
        second.push((gp - gm) / span);
    }
    Ok((g1, l2_norm(&second)))
}

pub fn second_order_norm(params: &ParamVector, eta: f64, omega: f64, scenario: &Scenario) -> Result<f64> {
    let problem = LossProblem::iree(scenario, eta, omega)?;
    Ok(power_block_norms(&problem, params, 1e-4)?.1)
}
