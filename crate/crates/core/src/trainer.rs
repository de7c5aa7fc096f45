//! Full-batch Adam over the scaled parameters, the two-stage penalty
//! schedule, and the first/second-order gradient diagnostic.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gradients::{power_block_norms, Layout, LossBreakdown, LossProblem, ParamScaling, ParamVector};
use crate::metrics::Scenario;
use crate::numeric::l2_norm;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub n_epoch: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            n_epoch: 2000,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid Adam configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub params: ParamVector,
    /// Moments live in the scaled coordinates.
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub scaling: Vec<f64>,
}

impl TrainerState {
    pub fn new(params: ParamVector, scenario: &Scenario) -> Self {
        let n = params.values.len();
        let scaling = ParamScaling::for_scenario(scenario, params.layout).scale;
        Self {
            params,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            scaling,
        }
    }

    /// Same parameters, fresh optimizer moments.
    pub fn restart(&self) -> Self {
        let n = self.params.values.len();
        Self {
            params: self.params.clone(),
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            scaling: self.scaling.clone(),
        }
    }
}

/// Uniform random locations, equal bandwidth split, half the power budget.
pub fn initial_params(scenario: &Scenario, seed: u64) -> ParamVector {
    let layout = Layout { n_bs: scenario.n_bs };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &scenario.grid.bounds;
    let n = scenario.n_bs as f64;
    let mut values = vec![0.0; layout.len()];
    for k in 0..scenario.n_bs {
        values[layout.x(k)] = b.x_min + rng.gen::<f64>() * b.width();
        values[layout.y(k)] = b.y_min + rng.gen::<f64>() * b.height();
        values[layout.bandwidth(k)] = scenario.b_max / n;
        values[layout.power(k)] = 0.5 * scenario.p_max / n;
    }
    ParamVector { values, layout }
}

/// Bias-corrected Adam update. `gradient` is in physical units.
pub fn adam_step(state: &TrainerState, gradient: &[f64], config: &AdamConfig) -> TrainerState {
    let mut next = state.clone();
    next.step_count += 1;
    let t = next.step_count as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for i in 0..gradient.len() {
        let s = state.scaling[i];
        let g = gradient[i] * s;
        let m = config.beta1 * state.first_moment[i] + (1.0 - config.beta1) * g;
        let v = config.beta2 * state.second_moment[i] + (1.0 - config.beta2) * g * g;
        next.first_moment[i] = m;
        next.second_moment[i] = v;
        let step = config.learning_rate * (m / c1) / ((v / c2).sqrt() + config.epsilon);
        next.params.values[i] = (state.params.values[i] / s - step) * s;
    }
    next.params.apply_floors();
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauRule {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self {
            window: 200,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSchedule {
    pub omega_stage1: f64,
    pub omega_stage2: f64,
    /// Share of the epoch budget given to stage 1.
    pub stage1_fraction: f64,
    /// Ends stage 1 early once the loss stops moving.
    pub plateau: Option<PlateauRule>,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            omega_stage1: 0.0,
            omega_stage2: 100.0,
            stage1_fraction: 0.7,
            plateau: Some(PlateauRule::default()),
        }
    }
}

impl StageSchedule {
    /// Penalty active from the first epoch.
    pub fn one_shot(omega: f64) -> Self {
        Self {
            omega_stage1: omega,
            omega_stage2: omega,
            stage1_fraction: 1.0,
            plateau: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_stage1 >= 0.0 && self.omega_stage2 >= 0.0 && (0.0..=1.0).contains(&self.stage1_fraction)) {
            return Err(invalid(format!("invalid stage schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub g1_norm: f64,
    pub g2_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Compute the second-order power-block norm every this many epochs.
    pub diagnostic_every: Option<usize>,
    /// Hold station locations at their starting values.
    #[serde(default)]
    pub fixed_locations: bool,
}

#[derive(Clone, Debug)]
pub struct StageResult {
    /// Continuation state after the last update.
    pub state: TrainerState,
    pub best: ParamVector,
    pub best_loss: LossBreakdown,
    pub trace: Vec<EpochRecord>,
}

fn plateaued(trace: &[EpochRecord], rule: &PlateauRule) -> bool {
    let n = trace.len();
    if rule.window == 0 || n <= rule.window {
        return false;
    }
    let now = trace[n - 1].loss.total;
    let then = trace[n - 1 - rule.window].loss.total;
    (now - then).abs() <= rule.rel_tol * now.abs().max(then.abs()).max(f64::MIN_POSITIVE)
}

fn run_epochs(
    state: &TrainerState,
    problem: &LossProblem<'_>,
    config: &AdamConfig,
    n_epoch: usize,
    first_epoch: usize,
    options: &TrainOptions,
    plateau: Option<&PlateauRule>,
) -> Result<StageResult> {
    config.validate()?;
    let power_block = state.params.layout.power_block();
    let mut state = state.clone();
    let mut best = state.params.clone();
    let mut best_loss: Option<LossBreakdown> = None;
    let mut trace = Vec::with_capacity(n_epoch);
    for e in 0..n_epoch {
        let epoch = first_epoch + e;
        let eval = problem.evaluate(&state.params, true).map_err(|err| Error::NonFiniteLoss {
            epoch,
            detail: format!("{err}; params {:?}", state.params.values),
        })?;
        let mut grad = eval.grad.expect("gradient requested");
        if options.fixed_locations {
            grad[..2 * state.params.layout.n_bs].fill(0.0);
        }
        let g1_norm = l2_norm(
            &power_block
                .clone()
                .map(|i| grad[i] * state.scaling[i])
                .collect::<Vec<_>>(),
        );
        let g2_norm = match options.diagnostic_every {
            Some(k) if k > 0 && e % k == 0 => Some(power_block_norms(problem, &state.params, 1e-4)?.1),
            _ => None,
        };
        if best_loss.map_or(true, |b| eval.loss.total < b.total) {
            best = state.params.clone();
            best_loss = Some(eval.loss);
        }
        trace.push(EpochRecord {
            epoch,
            loss: eval.loss,
            g1_norm,
            g2_norm,
        });
        state = adam_step(&state, &grad, config);
        if plateau.is_some_and(|rule| plateaued(&trace, rule)) {
            break;
        }
    }
    let best_loss = match best_loss {
        Some(l) => l,
        None => problem.loss(&best)?,
    };
    Ok(StageResult {
        state,
        best,
        best_loss,
        trace,
    })
}

/// Runs `config.n_epoch` Adam epochs at fixed (η, ω). Each epoch evaluates
/// the loss once; the lowest-loss iterate is returned as `best`.
pub fn train_stage(state: &TrainerState, problem: &LossProblem<'_>, config: &AdamConfig) -> Result<StageResult> {
    train_stage_with(state, problem, config, &TrainOptions::default())
}

pub fn train_stage_with(
    state: &TrainerState,
    problem: &LossProblem<'_>,
    config: &AdamConfig,
    options: &TrainOptions,
) -> Result<StageResult> {
    run_epochs(state, problem, config, config.n_epoch, 0, options, None)
}

#[derive(Clone, Debug)]
pub struct TwoStageResult {
    pub state: TrainerState,
    pub best: ParamVector,
    /// Loss of `best` under the stage-2 weight.
    pub best_loss: LossBreakdown,
    pub trace: Vec<EpochRecord>,
    pub stage1_epochs: usize,
}

/// Stage 1 at `omega_stage1`, then stage 2 at `omega_stage2` continuing from
/// stage 1's last iterate. Both stages share the `n_epoch` budget.
pub fn two_stage_train(
    state: &TrainerState,
    problem: &LossProblem<'_>,
    config: &AdamConfig,
    schedule: &StageSchedule,
    options: &TrainOptions,
) -> Result<TwoStageResult> {
    schedule.validate()?;
    let stage1_budget = ((config.n_epoch as f64) * schedule.stage1_fraction).round() as usize;
    let p1 = problem.with_omega(schedule.omega_stage1);
    let s1 = run_epochs(state, &p1, config, stage1_budget, 0, options, schedule.plateau.as_ref())?;
    let stage1_epochs = s1.trace.len();
    let p2 = problem.with_omega(schedule.omega_stage2);
    let s2 = run_epochs(&s1.state, &p2, config, config.n_epoch - stage1_epochs, stage1_epochs, options, None)?;

    let mut best = s1.best.clone();
    let mut best_loss = if schedule.omega_stage1 == schedule.omega_stage2 {
        s1.best_loss
    } else {
        p2.loss(&s1.best)?
    };
    if !s2.trace.is_empty() && s2.best_loss.total < best_loss.total {
        best = s2.best;
        best_loss = s2.best_loss;
    }
    let mut trace = s1.trace;
    trace.extend(s2.trace);
    Ok(TwoStageResult {
        state: s2.state,
        best,
        best_loss,
        trace,
        stage1_epochs,
    })
}

pub fn format_trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss_total,loss_utility,loss_power,loss_penalty,g1_norm,g2_norm\n");
    for r in trace {
        let g2 = r.g2_norm.map(|v| format!("{v:.12e}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            r.epoch, r.loss.total, r.loss.utility_term, r.loss.power_term, r.loss.penalty_term, r.g1_norm, g2
        );
    }
    out
}

pub fn save_trace_csv(trace: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(format_trace_csv(trace).as_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationClass {
    ExponentialLike,
    PiecewiseLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub pairs: Vec<(f64, f64)>,
    pub r2_exponential: f64,
    pub r2_piecewise: f64,
    pub class: RelationClass,
}

fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot <= f64::EPSILON * y.iter().map(|v| v * v).sum::<f64>() {
        // Constant response: perfect fit iff the residuals vanish too.
        return if ss_res <= f64::EPSILON * (1.0 + ss_tot) { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Best continuous two-segment fit `y = a + b·x + c·max(x − k, 0)` with the
/// knot `k` searched over the interior sample abscissae.
fn piecewise_fit(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut xs: Vec<f64> = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = x.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let lo = n / 10;
    let hi = n - n / 10;
    for &knot in xs.get(lo.max(1)..hi.saturating_sub(1).max(lo.max(1))).unwrap_or(&[]) {
        let hinge: Vec<f64> = x.iter().map(|v| (v - knot).max(0.0)).collect();
        if let Some(fitted) = least_squares_3(x, &hinge, y) {
            let sse: f64 = fitted.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().map_or(true, |(s, _)| sse < *s) {
                best = Some((sse, fitted));
            }
        }
    }
    match best {
        Some((_, f)) => f,
        None => {
            let (a, b) = linear_fit(x, y);
            x.iter().map(|v| a + b * v).collect()
        }
    }
}

/// Least squares on columns [1, u, w]; returns fitted values.
fn least_squares_3(u: &[f64], w: &[f64], y: &[f64]) -> Option<Vec<f64>> {
    let cols = [vec![1.0; u.len()], u.to_vec(), w.to_vec()];
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            ata[i][j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
        }
        aty[i] = cols[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    let coef = solve3(ata, aty)?;
    Some((0..u.len()).map(|k| coef[0] + coef[1] * u[k] + coef[2] * w[k]).collect())
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Classifies (g1, g2) pairs: exponential-like when a log-linear fit of g2
/// on g1 explains more variance than a two-segment linear fit.
pub fn classify_relation(pairs: &[(f64, f64)]) -> Result<SmoothnessReport> {
    let usable: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(a, b)| a.is_finite() && b.is_finite() && *b > 0.0)
        .collect();
    if usable.len() < 4 {
        return Err(invalid("need at least four positive (g1, g2) pairs"));
    }
    let x: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let y: Vec<f64> = usable.iter().map(|p| p.1).collect();
    let log_y: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (a, b) = linear_fit(&x, &log_y);
    let r2_exponential = r_squared(&log_y, &x.iter().map(|v| a + b * v).collect::<Vec<_>>());
    let r2_piecewise = r_squared(&y, &piecewise_fit(&x, &y));
    let class = if r2_exponential > r2_piecewise {
        RelationClass::ExponentialLike
    } else {
        RelationClass::PiecewiseLinear
    };
    Ok(SmoothnessReport {
        pairs: pairs.to_vec(),
        r2_exponential,
        r2_piecewise,
        class,
    })
}

/// Gradient-norm pairs along a parameter trajectory, then classified.
pub fn smoothness_diagnostic(trajectory: &[ParamVector], problem: &LossProblem<'_>) -> Result<SmoothnessReport> {
    let mut pairs = Vec::with_capacity(trajectory.len());
    for params in trajectory {
        pairs.push(power_block_norms(problem, params, 1e-4)?);
    }
    classify_relation(&pairs)
}

/// Pairs already recorded in a training trace.
pub fn trace_pairs(trace: &[EpochRecord]) -> Vec<(f64, f64)> {
    trace.iter().filter_map(|r| r.g2_norm.map(|g2| (r.g1_norm, g2))).collect()
}

pub fn format_pairs_csv(pairs: &[(f64, f64)]) -> String {
    let mut out = String::from("g1_norm,g2_norm\n");
    for (a, b) in pairs {
        let _ = writeln!(out, "{a:.12e},{b:.12e}");
    }
    out
}
