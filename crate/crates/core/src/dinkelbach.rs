//! Outer fractional-programming loop: train at fixed η, update η from the
//! trained design, repeat until the trained loss vanishes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gradients::{LossBreakdown, LossProblem, Objective, ParamVector, P_FLOOR, B_FLOOR};
use crate::metrics::{
    capacity_field, evaluate, feasibility_residual, given_iree_utility, MetricReport, Residuals, Scenario,
};
use crate::propagation::{CapacityModel, NetworkDesign};
use crate::trainer::{initial_params, two_stage_train, AdamConfig, EpochRecord, StageSchedule, TrainOptions, TrainerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DinkelbachConfig {
    /// Tolerance on |scaled loss|.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub adam: AdamConfig,
    pub schedule: StageSchedule,
    pub options: TrainOptions,
    /// Keep every epoch record in the trace.
    pub keep_epochs: bool,
}

impl Default for DinkelbachConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iterations: 30,
            adam: AdamConfig::default(),
            schedule: StageSchedule::default(),
            options: TrainOptions::default(),
            keep_epochs: false,
        }
    }
}

impl DinkelbachConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.max_iterations == 0 {
            return Err(invalid("epsilon must be positive and max_iterations at least 1"));
        }
        self.adam.validate()?;
        self.schedule.validate()
    }
}

/// Relative slack allowed on the η sequence.
pub const MONOTONE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// η used for this iteration's training, bit/J
    pub eta_k: f64,
    /// η recomputed from the design this iteration produced
    pub eta_next: f64,
    /// Scaled loss of the produced design at `eta_k` under the stage-2 weight.
    pub loss_k: LossBreakdown,
    pub residuals: Residuals,
    pub report: MetricReport,
    pub params: ParamVector,
    /// False when training did not beat its warm start and the warm start was kept.
    pub accepted: bool,
    pub repaired: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachTrace {
    pub objective: Objective,
    pub eta_initial: f64,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub monotonicity_violations: usize,
    /// Loss evaluations spent inside training epochs.
    pub loss_evaluations: usize,
}

impl DinkelbachTrace {
    pub fn etas(&self) -> Vec<f64> {
        std::iter::once(self.eta_initial)
            .chain(self.records.iter().map(|r| r.eta_next))
            .collect()
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save_json_lines(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_lines()?)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub design: NetworkDesign,
    pub params: ParamVector,
    /// Final ratio for the objective (IREE or EE, bit/J; SE, bit/s/Hz).
    pub eta: f64,
    pub report: MetricReport,
    pub residuals: Residuals,
    /// Residual tolerances met.
    pub feasible: bool,
    pub trace: DinkelbachTrace,
}

/// `min{C,D}(1−ξ)/P_T` of the design.
pub fn update_iree(design: &NetworkDesign, scenario: &Scenario) -> Result<f64> {
    let c = capacity_field(design, scenario, CapacityModel::LowerBound)?;
    crate::metrics::iree(&c, &scenario.traffic, design, scenario)
}

pub fn update_ee(design: &NetworkDesign, scenario: &Scenario) -> Result<f64> {
    let c = capacity_field(design, scenario, CapacityModel::LowerBound)?;
    Ok(c.total() / crate::metrics::power_total(design, &scenario.power_model))
}

fn update_ratio(objective: Objective, design: &NetworkDesign, scenario: &Scenario) -> Result<f64> {
    match objective {
        Objective::Iree => update_iree(design, scenario),
        Objective::Ee => update_ee(design, scenario),
        Objective::Se => Ok(evaluate(design, scenario, CapacityModel::LowerBound)?.se),
    }
}

/// `F(η) = min{C,D}(1−ξ) − η·P_T`, unscaled.
pub fn optimal_condition_residual(design: &NetworkDesign, scenario: &Scenario, eta: f64) -> Result<f64> {
    given_iree_utility(design, scenario, eta)
}

/// Scales bandwidths and powers down proportionally onto their budgets.
pub fn repair_budgets(params: &ParamVector, scenario: &Scenario) -> (ParamVector, bool) {
    let mut out = params.clone();
    let l = out.layout;
    let mut changed = false;
    let b_sum = params.total_bandwidth();
    if b_sum > scenario.b_max {
        let f = scenario.b_max / b_sum;
        for n in 0..l.n_bs {
            out.values[l.bandwidth(n)] = (out.values[l.bandwidth(n)] * f).max(B_FLOOR);
        }
        changed = true;
    }
    let p_sum = params.total_power();
    if p_sum > scenario.p_max {
        let f = scenario.p_max / p_sum;
        for n in 0..l.n_bs {
            out.values[l.power(n)] = (out.values[l.power(n)] * f).max(P_FLOOR);
        }
        changed = true;
    }
    (out, changed)
}

/// Residual tolerances for a design to count as feasible.
pub fn within_tolerance(res: &Residuals, scenario: &Scenario) -> bool {
    res.bandwidth <= 1e-6 * scenario.b_max && res.power <= 1e-6 * scenario.p_max && res.zeta <= 1e-3
}

/// Scale dividing capacities inside the loss.
pub fn capacity_scale(objective: Objective, scenario: &Scenario, initial: &NetworkDesign) -> Result<f64> {
    match objective {
        Objective::Iree => Ok(scenario.d_tot()),
        Objective::Ee | Objective::Se => {
            let c = capacity_field(initial, scenario, CapacityModel::LowerBound)?.total();
            if c > 0.0 {
                Ok(c)
            } else {
                Err(Error::ZeroTotal("capacity"))
            }
        }
    }
}

pub fn solve(scenario: &Scenario, config: &DinkelbachConfig, seed: u64) -> Result<SolveOutcome> {
    solve_objective(scenario, Objective::Iree, config, seed)
}

pub fn solve_objective(
    scenario: &Scenario,
    objective: Objective,
    config: &DinkelbachConfig,
    seed: u64,
) -> Result<SolveOutcome> {
    solve_from(scenario, objective, config, initial_params(scenario, seed))
}

/// Dinkelbach iterations from a given starting design. The SE objective has
/// no ratio to update and runs a single penalised stage.
pub fn solve_from(
    scenario: &Scenario,
    objective: Objective,
    config: &DinkelbachConfig,
    start: ParamVector,
) -> Result<SolveOutcome> {
    scenario.validate()?;
    config.validate()?;
    let start_design = start.to_design(scenario);
    let scale = capacity_scale(objective, scenario, &start_design)?;
    let omega = config.schedule.omega_stage2;
    // Without the budget penalties the EE and SE losses are unbounded below,
    // so they train with the penalty active from the first epoch.
    let (schedule, max_iterations) = match objective {
        Objective::Iree => (config.schedule, config.max_iterations),
        Objective::Ee => (StageSchedule::one_shot(omega), config.max_iterations),
        Objective::Se => (StageSchedule::one_shot(omega), 1),
    };
    let ratio = |p: &ParamVector| update_ratio(objective, &p.to_design(scenario), scenario);

    let mut params = start;
    let mut eta = match objective {
        Objective::Se => 0.0,
        _ => ratio(&params)?,
    };
    let mut trace = DinkelbachTrace {
        objective,
        eta_initial: eta,
        records: Vec::new(),
        converged: false,
        monotonicity_violations: 0,
        loss_evaluations: 0,
    };

    for k in 1..=max_iterations {
        let problem_eta = if objective == Objective::Se { 0.0 } else { eta };
        let problem = LossProblem::new(scenario, objective, problem_eta, omega, scale)?;
        let warm_loss = problem.loss(&params)?;
        let trained = two_stage_train(
            &TrainerState::new(params.clone(), scenario),
            &problem,
            &config.adam,
            &schedule,
            &config.options,
        )
        .map_err(|e| Error::Iteration {
            iteration: k,
            source: Box::new(e),
        })?;
        trace.loss_evaluations += trained.trace.len();
        let (candidate, repaired) = repair_budgets(&trained.best, scenario);
        let cand_loss = problem.loss(&candidate)?;
        let accepted = cand_loss.total < warm_loss.total;
        let (next, loss_k) = if accepted {
            (candidate, cand_loss)
        } else {
            (params.clone(), warm_loss)
        };
        let design = next.to_design(scenario);
        let eta_next = ratio(&next)?;
        if objective != Objective::Se && eta_next < eta * (1.0 - MONOTONE_SLACK) {
            trace.monotonicity_violations += 1;
        }
        trace.records.push(IterationRecord {
            k,
            eta_k: eta,
            eta_next,
            loss_k,
            residuals: feasibility_residual(&design, scenario)?,
            report: evaluate(&design, scenario, CapacityModel::LowerBound)?,
            params: next.clone(),
            accepted,
            repaired: repaired && accepted,
            epochs: if config.keep_epochs { trained.trace } else { Vec::new() },
        });
        params = next;
        eta = eta_next;
        if loss_k.total.abs() <= config.epsilon {
            trace.converged = true;
            break;
        }
    }
    if objective == Objective::Se {
        // A single penalised stage has no ratio fixed point to reach.
        trace.converged = true;
    }

    let design = params.to_design(scenario);
    let residuals = feasibility_residual(&design, scenario)?;
    let report = evaluate(&design, scenario, CapacityModel::LowerBound)?;
    let feasible = match objective {
        Objective::Iree => within_tolerance(&residuals, scenario),
        _ => within_tolerance(&Residuals { zeta: 0.0, ..residuals }, scenario),
    };
    Ok(SolveOutcome {
        design,
        params,
        eta,
        report,
        residuals,
        feasible,
        trace,
    })
}

/// η sequence summary for logs.
pub fn format_eta_sequence(trace: &DinkelbachTrace) -> String {
    let mut out = String::new();
    for (i, e) in trace.etas().iter().enumerate() {
        let _ = write!(out, "{}{e:.6e}", if i == 0 { "" } else { " " });
    }
    out
}
