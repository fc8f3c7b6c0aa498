//! Full-batch gradient descent near a minimizer, its linearization, and the
//! escape experiment comparing step sizes against the `2 / λ_max` threshold.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directional::{loss_and_gradient, perturb, Direction};
use crate::factors::{make_minimizer, DimSignature, EntryLaw, FactorChain, Target};
use crate::hessian_oracle::{dense_hessian_at_minimum, DenseHessian, DEFAULT_ENTRY_CAP, FULL_EIGEN_LIMIT};
use crate::sharpness::{extremal_direction, lambda_max};
use crate::{Error, Result};

/// Relative band around `2/η` classified as marginal.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum InitDirection {
    /// `v_1` of the Hessian at the minimizer.
    TopHessianEigenvector,
    Custom(Direction),
    /// Seeded isotropic unit direction.
    RandomUnit,
}

#[derive(Debug, Clone)]
pub struct GdConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// ℓ² distance of the start from the minimizer.
    pub init_radius: f64,
    pub init_direction: InitDirection,
    pub seed: u64,
    pub record_every: usize,
    /// Keep flattened parameters in every snapshot.
    pub record_params: bool,
    /// Only stop on convergence after this many steps.
    pub min_iters: usize,
    /// Escape means the ℓ² distance exceeds this multiple of the initial one.
    pub escape_factor: f64,
}

impl GdConfig {
    pub fn new(step_size: f64) -> Self {
        Self {
            step_size,
            max_iters: 100_000,
            init_radius: 1e-9,
            init_direction: InitDirection::TopHessianEigenvector,
            seed: 0,
            record_every: 1,
            record_params: false,
            min_iters: 0,
            escape_factor: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // A zero step is accepted as the degenerate "never move" run.
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(Error::Config(format!("step size must be ≥ 0, got {}", self.step_size)));
        }
        if !self.init_radius.is_finite() || self.init_radius < 0.0 {
            return Err(Error::Config(format!(
                "initialization radius must be ≥ 0, got {}",
                self.init_radius
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iter: usize,
    pub loss: f64,
    /// `loss / ‖M‖_F²`.
    pub norm_loss: f64,
    /// `‖w_k − w*‖₂² / ‖w*‖₂²`.
    pub norm_dist: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proj: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Converged,
    Diverged,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub outcome: RunOutcome,
    pub iterations: usize,
    pub initial_loss: f64,
    /// ℓ² distance of the start from the reference minimizer.
    pub initial_dist: f64,
    pub final_loss: f64,
    pub final_dist: f64,
    /// Largest loss seen over the whole run.
    pub peak_loss: f64,
    /// Largest loss seen before the loss first fell below 1% of its running
    /// maximum.
    pub first_peak_loss: f64,
    pub max_dist: f64,
    /// First step at which the distance exceeded `escape_factor · initial_dist`.
    pub escape_iteration: Option<usize>,
    pub final_params: DVector<f64>,
}

impl Trajectory {
    /// `first_peak_loss / initial_loss`; `None` when the start has zero loss.
    pub fn catapult_ratio(&self) -> Option<f64> {
        (self.initial_loss > 0.0).then(|| self.first_peak_loss / self.initial_loss)
    }

    /// CSV with header `iter,loss,norm_loss,norm_dist,proj_x,proj_y`; floats
    /// carry 17 significant digits and missing projections are empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,loss,norm_loss,norm_dist,proj_x,proj_y")?;
        for s in &self.snapshots {
            let (px, py) = match s.proj {
                Some((x, y)) => (fmt_f64(x), fmt_f64(y)),
                None => (String::new(), String::new()),
            };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.iter,
                fmt_f64(s.loss),
                fmt_f64(s.norm_loss),
                fmt_f64(s.norm_dist),
                px,
                py
            )?;
        }
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Unit direction for the initial perturbation.
pub fn init_direction(
    minimizer: &FactorChain,
    target: &Target,
    config: &GdConfig,
) -> Result<Direction> {
    let sig = minimizer.signature();
    let dir = match &config.init_direction {
        InitDirection::Custom(d) => {
            d.check_compatible(minimizer)?;
            d.normalized()
        }
        InitDirection::RandomUnit => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            Direction::random_unit(sig, &mut rng)
        }
        InitDirection::TopHessianEigenvector => top_hessian_direction(minimizer, target)?,
    };
    Ok(dir)
}

/// `v_1` from the dense Hessian when it fits, otherwise the closed-form
/// extremal direction (also a top eigenvector).
pub fn top_hessian_direction(minimizer: &FactorChain, target: &Target) -> Result<Direction> {
    let sig = minimizer.signature();
    if sig.num_params() <= FULL_EIGEN_LIMIT {
        let h = dense_hessian_at_minimum(minimizer, target, DEFAULT_ENTRY_CAP)?;
        let v = h.top_eigenvector().expect("full spectrum below the limit");
        Direction::from_flat(sig, v.as_slice())
    } else {
        Ok(extremal_direction(minimizer, target)?.0)
    }
}

/// Runs GD from `w* + r · d`, with `r` and `d` taken from the config.
pub fn gd_run(minimizer: &FactorChain, target: &Target, config: &GdConfig) -> Result<Trajectory> {
    config.validate()?;
    let dir = init_direction(minimizer, target, config)?;
    let start = perturb(minimizer, &dir, config.init_radius)?;
    gd_from(&start, target, minimizer, config)
}

/// Runs GD from an explicit start, measuring distances to `reference`.
///
/// Stops when the loss is at most `1e-14 ‖M‖_F²` with gradient norm at most
/// `1e-10 · max(1, ‖M‖_F)` (after `min_iters` steps), when the loss reaches
/// `1e6 ‖M‖_F²` or stops being finite, or when the budget is spent.
pub fn gd_from(
    start: &FactorChain,
    target: &Target,
    reference: &FactorChain,
    config: &GdConfig,
) -> Result<Trajectory> {
    config.validate()?;
    target.check_compatible(start)?;
    if start.signature() != reference.signature() {
        return Err(Error::Shape("start and reference chains differ in signature".into()));
    }
    let sig = start.signature().clone();
    let m_sq = target.frobenius_sq();
    let loss_scale = if m_sq > 0.0 { m_sq } else { 1.0 };
    let grad_tol = 1e-10 * m_sq.sqrt().max(1.0);
    let w_ref = reference.flatten();
    let ref_sq = w_ref.norm_squared();
    let dist_scale = if ref_sq > 0.0 { ref_sq } else { 1.0 };

    let mut w = start.flatten();
    let mut chain = start.clone();
    let (mut loss, mut grad) = loss_and_gradient(&chain, target)?;
    let initial_loss = loss;
    let initial_dist = (&w - &w_ref).norm();

    let snapshot = |k: usize, loss: f64, w: &DVector<f64>| {
        let d = (w - &w_ref).norm_squared();
        Snapshot {
            iter: k,
            loss,
            norm_loss: loss / loss_scale,
            norm_dist: d / dist_scale,
            params: config.record_params.then(|| w.as_slice().to_vec()),
            proj: None,
        }
    };

    let mut snapshots = vec![snapshot(0, loss, &w)];
    let mut peak_loss = loss;
    let mut running_max = loss;
    let mut descended = false;
    let mut max_dist = initial_dist;
    let mut escape_iteration = None;
    let mut outcome = RunOutcome::BudgetExhausted;
    let mut k = 0;

    while k < config.max_iters {
        let converged = loss <= 1e-14 * loss_scale && grad.norm_sq().sqrt() <= grad_tol;
        if converged && k >= config.min_iters {
            outcome = RunOutcome::Converged;
            break;
        }
        w.axpy(-config.step_size, &grad.flatten(), 1.0);
        k += 1;
        chain = FactorChain::from_flat(&sig, w.as_slice())?;
        let (l, g) = loss_and_gradient(&chain, target)?;
        loss = l;
        grad = g;

        let dist = (&w - &w_ref).norm();
        if !loss.is_finite() || !dist.is_finite() {
            max_dist = f64::INFINITY;
            peak_loss = f64::INFINITY;
            if !descended {
                running_max = f64::INFINITY;
            }
            escape_iteration.get_or_insert(k);
            outcome = RunOutcome::Diverged;
            break;
        }
        peak_loss = peak_loss.max(loss);
        if !descended {
            running_max = running_max.max(loss);
            if loss < 0.01 * running_max {
                descended = true;
            }
        }
        max_dist = max_dist.max(dist);
        if escape_iteration.is_none() && dist > config.escape_factor * initial_dist {
            escape_iteration = Some(k);
        }
        if k % config.record_every == 0 {
            snapshots.push(snapshot(k, loss, &w));
        }
        if loss >= 1e6 * loss_scale {
            outcome = RunOutcome::Diverged;
            break;
        }
    }
    if snapshots.last().map(|s| s.iter) != Some(k) {
        snapshots.push(snapshot(k, loss, &w));
    }
    let final_dist = (&w - &w_ref).norm();
    Ok(Trajectory {
        snapshots,
        outcome,
        iterations: k,
        initial_loss,
        initial_dist,
        final_loss: loss,
        final_dist,
        peak_loss,
        first_peak_loss: running_max,
        max_dist,
        escape_iteration,
        final_params: w,
    })
}

/// Iterates of `x_{t+1} = x_t − η H (x_t − x*)`, stored as deviations
/// `x_t − x*`.
#[derive(Debug, Clone)]
pub struct LinearizedTrajectory {
    pub step_size: f64,
    pub deviations: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentGrowth {
    pub eigenvalue: f64,
    /// `|1 − η λ_i|`.
    pub predicted: f64,
    /// Geometric mean of `|c_i(t+1) / c_i(t)|` over the run.
    pub observed: f64,
    /// The component stays far enough above round-off for `observed` to be
    /// meaningful.
    pub resolved: bool,
}

pub fn linearized_run(
    start: &DVector<f64>,
    minimizer: &DVector<f64>,
    hessian: &DenseHessian,
    step_size: f64,
    iters: usize,
) -> Result<LinearizedTrajectory> {
    let n = hessian.dim();
    if start.len() != n || minimizer.len() != n {
        return Err(Error::Shape(format!(
            "linearized run needs vectors of length {n}, got {} and {}",
            start.len(),
            minimizer.len()
        )));
    }
    let mut e = start - minimizer;
    let mut deviations = Vec::with_capacity(iters + 1);
    deviations.push(e.clone());
    for _ in 0..iters {
        let he = &hessian.matrix * &e;
        e.axpy(-step_size, &he, 1.0);
        deviations.push(e.clone());
    }
    Ok(LinearizedTrajectory {
        step_size,
        deviations,
    })
}

impl LinearizedTrajectory {
    /// Per-eigencomponent growth factors against `|1 − ηλ_i|`.
    ///
    /// A component counts as resolved when its predicted final magnitude is at
    /// least `1e-6` of the largest predicted final magnitude.
    pub fn component_growth(&self, hessian: &DenseHessian) -> Result<Vec<ComponentGrowth>> {
        let vecs = hessian
            .eigenvectors
            .as_ref()
            .ok_or_else(|| Error::Domain("growth analysis needs the full eigenbasis".into()))?;
        let steps = self.deviations.len() - 1;
        let first = &self.deviations[0];
        let last = &self.deviations[steps];
        let c0 = vecs.transpose() * first;
        let ct = vecs.transpose() * last;
        let predicted: Vec<f64> = hessian
            .eigenvalues
            .iter()
            .map(|l| (1.0 - self.step_size * l).abs())
            .collect();
        let expected_final: Vec<f64> = predicted
            .iter()
            .zip(c0.iter())
            .map(|(p, c)| c.abs() * p.powi(steps as i32))
            .collect();
        let largest = expected_final.iter().cloned().fold(0.0, f64::max);
        Ok((0..hessian.dim())
            .map(|i| {
                let observed = if steps == 0 || c0[i] == 0.0 {
                    f64::NAN
                } else {
                    (ct[i].abs() / c0[i].abs()).powf(1.0 / steps as f64)
                };
                ComponentGrowth {
                    eigenvalue: hessian.eigenvalues[i],
                    predicted: predicted[i],
                    observed,
                    resolved: steps > 0 && c0[i] != 0.0 && expected_final[i] >= 1e-6 * largest,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Marginal,
    Unstable,
}

/// Unstable iff `λ_max > 2/η`; marginal within `MARGINAL_TOL` relative.
pub fn classify(lambda_max: f64, step_size: f64) -> Stability {
    let threshold = 2.0 / step_size;
    if (lambda_max - threshold).abs() <= MARGINAL_TOL * threshold.abs() {
        Stability::Marginal
    } else if lambda_max > threshold {
        Stability::Unstable
    } else {
        Stability::Stable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub classification: Stability,
    pub lambda_max: f64,
    pub threshold: f64,
    pub escaped: bool,
    pub escape_iteration: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeConfig {
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Step sizes as multiples of `2 / λ_max`.
    pub eta_multipliers: Vec<f64>,
    pub radius: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_escape_factor")]
    pub escape_factor: f64,
    /// A run that re-converges farther than this multiple of the initial
    /// distance landed on another minimizer.
    #[serde(default = "default_other_minimum_factor")]
    pub other_minimum_factor: f64,
    /// Steps before a converged-looking run may stop.
    #[serde(default = "default_min_iters")]
    pub min_iters: usize,
    #[serde(default)]
    pub record_params: bool,
    #[serde(default)]
    pub entry_law: EntryLaw,
}

fn default_max_iters() -> usize {
    100_000
}
fn default_record_every() -> usize {
    1
}
fn default_escape_factor() -> f64 {
    1e6
}
fn default_other_minimum_factor() -> f64 {
    1e3
}
fn default_min_iters() -> usize {
    5_000
}

impl EscapeConfig {
    pub fn new(dims: Vec<usize>, seeds: Vec<u64>, eta_multipliers: Vec<f64>, radius: f64) -> Self {
        Self {
            dims,
            seeds,
            eta_multipliers,
            radius,
            max_iters: default_max_iters(),
            record_every: default_record_every(),
            escape_factor: default_escape_factor(),
            other_minimum_factor: default_other_minimum_factor(),
            min_iters: default_min_iters(),
            record_params: false,
            entry_law: EntryLaw::default(),
        }
    }

    pub fn validate(&self) -> Result<DimSignature> {
        let sig = DimSignature::new(self.dims.clone())?;
        if self.eta_multipliers.is_empty() {
            return Err(Error::Config("the step-size multiplier grid is empty".into()));
        }
        if let Some(m) = self.eta_multipliers.iter().find(|m| !m.is_finite() || **m <= 0.0) {
            return Err(Error::Config(format!("step-size multipliers must be positive, got {m}")));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(sig)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub seed: u64,
    pub multiplier: f64,
    pub step_size: f64,
    pub radius: f64,
    pub verdict: StabilityVerdict,
    pub outcome: RunOutcome,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub peak_loss: f64,
    pub catapult_ratio: Option<f64>,
    pub initial_dist: f64,
    pub final_dist: f64,
    pub max_dist_ratio: f64,
    pub converged_elsewhere: bool,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EscapeReport {
    pub config: EscapeConfig,
    pub cells: Vec<CellReport>,
}

/// Builds `make_minimizer(dims, seed)` for every seed and runs GD from
/// `w* + r v_1` with `η = multiplier · 2/λ_max` for every multiplier.
pub fn escape_experiment(config: &EscapeConfig) -> Result<EscapeReport> {
    let sig = config.validate()?;
    let instances = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let (chain, target) = make_minimizer(&sig, seed, config.entry_law)?;
            let lambda = lambda_max(&chain, &target)?.lambda_max;
            let dir = top_hessian_direction(&chain, &target)?;
            Ok((seed, chain, target, lambda, dir))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<_> = instances
        .iter()
        .flat_map(|inst| config.eta_multipliers.iter().map(move |&m| (inst, m)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|((seed, chain, target, lambda, dir), mult)| {
            run_cell(config, *seed, chain, target, *lambda, dir, *mult)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EscapeReport {
        config: config.clone(),
        cells,
    })
}

fn run_cell(
    config: &EscapeConfig,
    seed: u64,
    chain: &FactorChain,
    target: &Target,
    lambda: f64,
    dir: &Direction,
    multiplier: f64,
) -> Result<CellReport> {
    let step_size = multiplier * 2.0 / lambda;
    let mut gd = GdConfig::new(step_size);
    gd.max_iters = config.max_iters;
    gd.init_radius = config.radius;
    gd.init_direction = InitDirection::Custom(dir.clone());
    gd.seed = seed;
    gd.record_every = config.record_every;
    gd.record_params = config.record_params;
    gd.min_iters = config.min_iters;
    gd.escape_factor = config.escape_factor;
    let traj = gd_run(chain, target, &gd)?;

    let tol = 1e-10 * target.frobenius_sq().max(f64::MIN_POSITIVE);
    let converged_elsewhere = traj.final_loss <= tol
        && traj.final_dist > config.other_minimum_factor * traj.initial_dist;
    let escaped = traj.escape_iteration.is_some() || converged_elsewhere;
    let verdict = StabilityVerdict {
        classification: classify(lambda, step_size),
        lambda_max: lambda,
        threshold: 2.0 / step_size,
        escaped,
        escape_iteration: traj.escape_iteration,
    };
    Ok(CellReport {
        seed,
        multiplier,
        step_size,
        radius: config.radius,
        verdict,
        outcome: traj.outcome,
        iterations: traj.iterations,
        initial_loss: traj.initial_loss,
        final_loss: traj.final_loss,
        peak_loss: traj.peak_loss,
        catapult_ratio: traj.catapult_ratio(),
        initial_dist: traj.initial_dist,
        final_dist: traj.final_dist,
        max_dist_ratio: traj.max_dist / traj.initial_dist,
        converged_elsewhere,
        trajectory: Some(traj),
    })
}
