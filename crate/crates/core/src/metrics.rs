//! Figures of merit: totals, JS divergence, power, IREE, EE, SE and the
//! network utility indicator ζ.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::pairwise_sum;
use crate::propagation::{capacity, CapacityModel, LinkConstants, NetworkDesign, PathLossParams};
use crate::traffic::{SampleGrid, ScalarField};

/// Floor applied inside logarithms only.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// PA slope, 1/efficiency
    pub lambda: f64,
    /// W per station
    pub p_circuit: f64,
}

impl PowerModel {
    pub fn from_efficiency(efficiency: f64, p_circuit: f64) -> Self {
        Self {
            lambda: 1.0 / efficiency,
            p_circuit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("PA slope must be >= 1, got {}", self.lambda)));
        }
        if !(self.p_circuit >= 0.0 && self.p_circuit.is_finite()) {
            return Err(invalid(format!("circuit power must be >= 0, got {}", self.p_circuit)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: Arc<SampleGrid>,
    pub traffic: ScalarField,
    /// Hz
    pub b_max: f64,
    /// W
    pub p_max: f64,
    pub zeta_min: f64,
    /// W/Hz
    pub noise_psd: f64,
    pub power_model: PowerModel,
    pub n_bs: usize,
    pub loss_defaults: PathLossParams,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_max > 0.0 && self.b_max.is_finite()) {
            return Err(invalid("b_max must be positive"));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(invalid("p_max must be positive"));
        }
        if !(0.0..=1.0).contains(&self.zeta_min) {
            return Err(invalid(format!("zeta_min must lie in [0, 1], got {}", self.zeta_min)));
        }
        if !(self.noise_psd > 0.0 && self.noise_psd.is_finite()) {
            return Err(invalid("noise PSD must be positive"));
        }
        if self.n_bs == 0 {
            return Err(invalid("need at least one base station"));
        }
        if !Arc::ptr_eq(&self.grid, &self.traffic.grid) && *self.grid != *self.traffic.grid {
            return Err(invalid("traffic field is defined on a different grid"));
        }
        self.power_model.validate()?;
        self.loss_defaults.validate()
    }

    pub fn link(&self) -> LinkConstants {
        LinkConstants {
            b_max: self.b_max,
            noise_psd: self.noise_psd,
        }
    }

    pub fn d_tot(&self) -> f64 {
        self.traffic.total()
    }

    pub fn with_p_max(&self, p_max: f64) -> Self {
        Self { p_max, ..self.clone() }
    }

    pub fn with_b_max(&self, b_max: f64) -> Self {
        Self { b_max, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// bit/s
    pub c_tot: f64,
    /// bit/s
    pub d_tot: f64,
    pub xi: f64,
    pub zeta: f64,
    /// W
    pub p_t: f64,
    /// bit/J
    pub iree: f64,
    /// bit/J
    pub ee: f64,
    /// bit/s/Hz
    pub se: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub zeta: f64,
    /// Hz
    pub bandwidth: f64,
    /// W
    pub power: f64,
}

impl Residuals {
    pub fn is_zero(&self) -> bool {
        self.zeta == 0.0 && self.bandwidth == 0.0 && self.power == 0.0
    }
}

pub fn total(field: &ScalarField) -> f64 {
    field.total()
}

#[inline]
pub(crate) fn js_term(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * (2.0 * p / (p + q)).max(PROB_FLOOR).log2()
    } else {
        0.0
    }
}

/// Base-2 Jensen–Shannon divergence between the normalised fields.
pub fn js_divergence(c: &ScalarField, d: &ScalarField) -> Result<f64> {
    if c.len() != d.len() {
        return Err(Error::LengthMismatch {
            expected: c.len(),
            found: d.len(),
        });
    }
    js_divergence_values(&c.values, &d.values)
}

pub(crate) fn js_divergence_values(c: &[f64], d: &[f64]) -> Result<f64> {
    let c_sum = pairwise_sum(c);
    let d_sum = pairwise_sum(d);
    if !(c_sum > 0.0) {
        return Err(Error::ZeroTotal("capacity"));
    }
    if !(d_sum > 0.0) {
        return Err(Error::ZeroTotal("traffic"));
    }
    let terms: Vec<f64> = c
        .iter()
        .zip(d)
        .map(|(&cm, &dm)| {
            let p = cm / c_sum;
            let q = dm / d_sum;
            js_term(p, q) + js_term(q, p)
        })
        .collect();
    Ok((0.5 * pairwise_sum(&terms)).clamp(0.0, 1.0))
}

pub fn power_total(design: &NetworkDesign, model: &PowerModel) -> f64 {
    design
        .stations
        .iter()
        .map(|s| model.lambda * s.tx_power + model.p_circuit)
        .sum()
}

/// `min{C_Tot, D_Tot}·(1 − ξ)` from already-computed totals.
pub fn network_utility(c_tot: f64, d_tot: f64, xi: f64) -> f64 {
    c_tot.min(d_tot) * (1.0 - xi)
}

pub fn iree(c: &ScalarField, d: &ScalarField, design: &NetworkDesign, scenario: &Scenario) -> Result<f64> {
    let xi = js_divergence(c, d)?;
    Ok(network_utility(c.total(), d.total(), xi) / power_total(design, &scenario.power_model))
}

/// ζ; exactly `1 − ξ` whenever `C_Tot ≥ D_Tot`.
pub fn utility_indicator(c: &ScalarField, d: &ScalarField, _scenario: &Scenario) -> Result<f64> {
    let xi = js_divergence(c, d)?;
    Ok(zeta_from_totals(c.total(), d.total(), xi))
}

pub fn zeta_from_totals(c_tot: f64, d_tot: f64, xi: f64) -> f64 {
    if c_tot >= d_tot {
        1.0 - xi
    } else {
        c_tot * (1.0 - xi) / d_tot
    }
}

pub fn capacity_field(design: &NetworkDesign, scenario: &Scenario, model: CapacityModel) -> Result<ScalarField> {
    let link = scenario.link();
    let values = scenario
        .grid
        .points
        .iter()
        .map(|&p| capacity(design, p, &link, model))
        .collect::<Result<Vec<_>>>()?;
    ScalarField::new(scenario.grid.clone(), values)
}

/// `min{C,D}(1−ξ) − η·P_T` on the lower-bound capacity field.
pub fn given_iree_utility(design: &NetworkDesign, scenario: &Scenario, eta: f64) -> Result<f64> {
    let c = capacity_field(design, scenario, CapacityModel::LowerBound)?;
    let xi = js_divergence(&c, &scenario.traffic)?;
    let u = network_utility(c.total(), scenario.d_tot(), xi);
    Ok(u - eta * power_total(design, &scenario.power_model))
}

pub fn feasibility_residual(design: &NetworkDesign, scenario: &Scenario) -> Result<Residuals> {
    let c = capacity_field(design, scenario, CapacityModel::LowerBound)?;
    let xi = js_divergence(&c, &scenario.traffic)?;
    let zeta = zeta_from_totals(c.total(), scenario.d_tot(), xi);
    Ok(Residuals {
        zeta: (scenario.zeta_min - zeta).max(0.0),
        bandwidth: (design.total_bandwidth() - scenario.b_max).max(0.0),
        power: (design.total_tx_power() - scenario.p_max).max(0.0),
    })
}

pub fn report_from_fields(c: &ScalarField, design: &NetworkDesign, scenario: &Scenario) -> Result<MetricReport> {
    let xi = js_divergence(c, &scenario.traffic)?;
    let c_tot = c.total();
    let d_tot = scenario.d_tot();
    let p_t = power_total(design, &scenario.power_model);
    Ok(MetricReport {
        c_tot,
        d_tot,
        xi,
        zeta: zeta_from_totals(c_tot, d_tot, xi),
        p_t,
        iree: network_utility(c_tot, d_tot, xi) / p_t,
        ee: c_tot / p_t,
        se: c_tot / scenario.b_max,
    })
}

pub fn evaluate(design: &NetworkDesign, scenario: &Scenario, model: CapacityModel) -> Result<MetricReport> {
    let c = capacity_field(design, scenario, model)?;
    report_from_fields(&c, design, scenario)
}
