use nalgebra::{DVector, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{Filter, FilterKind, FilterModel, FilterStepInput};
use crate::fleet::{error_state, ErrorState, FleetBelief, FleetState, POSE_DIM};
use crate::models::{propagate_fleet, NoiseSpec};
use crate::observability::LinearizationRecord;
use crate::sim::noise::{corrupt_odometry, gaussian, generate_measurements, stream_rng, StreamPurpose};
use crate::sim::scenario::{generate_truth, SimConfig, Truth};

/// 99.7% quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_4_Q997: f64 = 16.014326314940615;

/// `x_i^T P_ii^-1 x_i` on robot `i`'s 4x4 marginal.
pub fn nees(error: &ErrorState, belief: &FleetBelief, robot: usize) -> Result<f64> {
    belief.mean.check_index(robot)?;
    if error.n() != belief.mean.n() {
        return Err(Error::FleetSizeMismatch {
            expected: belief.mean.n(),
            actual: error.n(),
        });
    }
    let chol = belief
        .marginal(robot)
        .cholesky()
        .ok_or(Error::Singular("robot marginal covariance"))?;
    let e = error.robot(robot);
    Ok(e.dot(&chol.solve(&e)).max(0.0))
}

/// Metrics of one robot at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotMetrics {
    pub error: Vector4<f64>,
    /// `3 * sqrt(diag(P_ii))`.
    pub sigma3: Vector4<f64>,
    pub nees: f64,
}

impl RobotMetrics {
    pub fn yaw_outside(&self) -> bool {
        self.error[3].abs() > self.sigma3[3]
    }
}

/// Time averages of one filter over one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrialSummary {
    pub kind: FilterKind,
    pub rmse_pos: f64,
    pub rmse_ori: f64,
    pub nees: f64,
    pub nees_per_robot: Vec<f64>,
    /// Robot-steps whose yaw error lies outside its 3-sigma envelope.
    pub yaw_outside: usize,
    /// Robot-steps whose NEES exceeds [`CHI2_4_Q997`].
    pub nees_exceed_997: usize,
    /// Robot-steps recorded; `steps * n` unless the filter failed.
    pub samples: usize,
    pub failure: Option<String>,
}

impl FilterTrialSummary {
    pub fn yaw_inside_fraction(&self) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        1.0 - self.yaw_outside as f64 / self.samples as f64
    }
}

/// Per-step record of one filter over one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub kind: FilterKind,
    pub prior_error: ErrorState,
    /// `steps[k - 1][i]` is robot `i` after step `k`. Truncated at a failure.
    pub steps: Vec<Vec<RobotMetrics>>,
    pub summary: FilterTrialSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: usize,
    pub filters: Vec<FilterTrace>,
}

impl TrialResult {
    pub fn trace(&self, kind: FilterKind) -> Option<&FilterTrace> {
        self.filters.iter().find(|f| f.kind == kind)
    }

    pub fn failed(&self) -> bool {
        self.filters.iter().any(|f| f.summary.failure.is_some())
    }
}

/// What an observer sees after every successful filter step.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub trial: usize,
    pub kind: FilterKind,
    pub step: usize,
    pub record: &'a LinearizationRecord,
    pub belief: &'a FleetBelief,
    pub truth: &'a FleetState,
}

/// Prior belief of a trial: truth plus one Gaussian draw per robot, with the
/// matching diagonal covariance.
pub fn draw_prior(config: &SimConfig, truth0: &FleetState, trial: usize) -> Result<FleetBelief> {
    let n = truth0.n();
    let mut delta = DVector::zeros(POSE_DIM * n);
    let mut var = DVector::zeros(POSE_DIM * n);
    for i in 0..n {
        let mut rng = stream_rng(config.master_seed, trial as u64, i as u64, StreamPurpose::Prior);
        for a in 0..POSE_DIM {
            let sigma = if a < 3 { config.prior_sigma_pos } else { config.prior_sigma_yaw };
            delta[POSE_DIM * i + a] = gaussian(&mut rng, sigma);
            var[POSE_DIM * i + a] = sigma * sigma;
        }
    }
    FleetBelief::new(truth0.boxplus(&delta)?, nalgebra::DMatrix::from_diagonal(&var))
}

/// Noisy odometry and measurements of every step of one trial.
struct TrialNoise {
    odometry: Vec<Vec<crate::models::OdometryInput>>,
    measurements: Vec<crate::models::MeasurementSet>,
}

fn draw_trial_noise(config: &SimConfig, truth: &Truth, trial: usize) -> TrialNoise {
    let t = trial as u64;
    let mut odo_rngs: Vec<_> = (0..config.n)
        .map(|i| stream_rng(config.master_seed, t, i as u64, StreamPurpose::Odometry))
        .collect();
    let mut meas_rng = stream_rng(config.master_seed, t, config.n as u64, StreamPurpose::Measurement);
    let odometry = truth
        .controls
        .iter()
        .map(|step| {
            step.iter()
                .zip(&mut odo_rngs)
                .map(|(u, rng)| corrupt_odometry(u, rng, config))
                .collect()
        })
        .collect();
    let measurements = truth.states[1..]
        .iter()
        .map(|s| generate_measurements(s, &mut meas_rng, config))
        .collect();
    TrialNoise { odometry, measurements }
}

#[derive(Default)]
struct Accum {
    sq_pos: f64,
    sq_ori: f64,
    nees: f64,
    nees_robot: Vec<f64>,
    yaw_outside: usize,
    exceed: usize,
    samples: usize,
    steps: usize,
}

impl Accum {
    fn new(n: usize) -> Self {
        Self { nees_robot: vec![0.0; n], ..Self::default() }
    }

    // Same summation order as `digest`, so one-trial aggregates are bit-equal.
    fn push(&mut self, robots: &[RobotMetrics]) {
        let (mut cp, mut co, mut cn) = (0.0, 0.0, 0.0);
        for (i, r) in robots.iter().enumerate() {
            cp += r.error.fixed_rows::<3>(0).norm_squared();
            co += r.error[3] * r.error[3];
            cn += r.nees;
            self.nees_robot[i] += r.nees;
            self.yaw_outside += r.yaw_outside() as usize;
            self.exceed += (r.nees > CHI2_4_Q997) as usize;
            self.samples += 1;
        }
        self.sq_pos += cp;
        self.sq_ori += co;
        self.nees += cn;
        self.steps += 1;
    }

    fn finish(self, kind: FilterKind, failure: Option<String>) -> FilterTrialSummary {
        let s = self.samples as f64;
        let per = |v: f64, count: f64| if count > 0.0 { v / count } else { f64::NAN };
        FilterTrialSummary {
            kind,
            rmse_pos: per(self.sq_pos, s).sqrt(),
            rmse_ori: per(self.sq_ori, s).sqrt(),
            nees: per(self.nees, s),
            nees_per_robot: self
                .nees_robot
                .iter()
                .map(|v| per(*v, self.steps as f64))
                .collect(),
            yaw_outside: self.yaw_outside,
            nees_exceed_997: self.exceed,
            samples: self.samples,
            failure,
        }
    }
}

fn robot_metrics(truth: &FleetState, belief: &FleetBelief) -> Result<Vec<RobotMetrics>> {
    let err = error_state(truth, &belief.mean)?;
    (0..truth.n())
        .map(|i| {
            let m = belief.marginal(i);
            Ok(RobotMetrics {
                error: err.robot(i),
                sigma3: m.diagonal().map(|v| 3.0 * v.max(0.0).sqrt()),
                nees: nees(&err, belief, i)?,
            })
        })
        .collect()
}

/// Runs every configured filter over one trial against a precomputed truth,
/// calling `observer` after each successful step.
///
/// All filters consume the same noise realization. A filter that fails is
/// stopped and its trace truncated; the others continue.
pub fn run_trial_with(
    config: &SimConfig,
    truth: &Truth,
    trial_index: usize,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> Result<TrialResult> {
    config.validate()?;
    if truth.states.len() != config.steps + 1 {
        return Err(Error::DimensionMismatch(format!(
            "truth has {} states for {} steps",
            truth.states.len(),
            config.steps
        )));
    }
    let noise = draw_trial_noise(config, truth, trial_index);
    let prior = draw_prior(config, &truth.states[0], trial_index)?;
    let prior_error = error_state(&truth.states[0], &prior.mean)?;
    let model = FilterModel::new(NoiseSpec::uniform(
        config.n,
        config.sigma_v,
        config.sigma_omega,
        config.sigma_meas,
    ));

    let mut filters = Vec::with_capacity(config.filters.len());
    for &kind in &config.filters {
        let filter = Filter::init(kind, &prior, model.clone())?.with_initial_truth(truth.states[0].clone());
        filters.push((filter, Accum::new(config.n), Vec::with_capacity(config.steps), None::<String>));
    }

    for k in 1..=config.steps {
        let input = FilterStepInput {
            odometry: noise.odometry[k - 1].clone(),
            measurements: noise.measurements[k - 1].clone(),
            dt: config.dt,
            truth: Some(truth.states[k].clone()),
        };
        for (filter, acc, steps, failure) in filters.iter_mut() {
            if failure.is_some() {
                continue;
            }
            let outcome = filter.step(&input).and_then(|record| {
                let belief = filter.reported_belief()?;
                let metrics = robot_metrics(&truth.states[k], &belief)?;
                observer(&StepView {
                    trial: trial_index,
                    kind: filter.kind(),
                    step: k,
                    record: &record,
                    belief: &belief,
                    truth: &truth.states[k],
                });
                Ok(metrics)
            });
            match outcome {
                Ok(metrics) => {
                    acc.push(&metrics);
                    steps.push(metrics);
                }
                Err(e) => *failure = Some(format!("step {k}: {e}")),
            }
        }
    }

    let filters = filters
        .into_iter()
        .map(|(filter, acc, steps, failure)| FilterTrace {
            kind: filter.kind(),
            prior_error: prior_error.clone(),
            steps,
            summary: acc.finish(filter.kind(), failure),
        })
        .collect();
    Ok(TrialResult { trial_index, filters })
}

/// One trial of `config` with its own truth.
pub fn run_trial(config: &SimConfig, trial_index: usize) -> Result<TrialResult> {
    let truth = generate_truth(config)?;
    run_trial_with(config, &truth, trial_index, &mut |_| {})
}

/// Per-step curves averaged over trials and robots.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCurves {
    pub rmse_pos: Vec<f64>,
    pub rmse_ori: Vec<f64>,
    pub nees: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterMetrics {
    pub kind: FilterKind,
    pub rmse_pos: f64,
    pub rmse_ori: f64,
    /// Average per-robot NEES over trials, robots and steps.
    pub nees: f64,
    pub nees_per_robot: Vec<f64>,
    /// Robot-step samples behind the averages.
    pub samples: usize,
    /// Trials excluded from the averages because the filter failed.
    pub failed_trials: Vec<usize>,
    pub curves: MeanCurves,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub trials: usize,
    pub steps: usize,
    pub n: usize,
    pub filters: Vec<FilterMetrics>,
    /// Trial summaries in trial order.
    pub per_trial: Vec<Vec<FilterTrialSummary>>,
}

impl AggregateMetrics {
    pub fn filter(&self, kind: FilterKind) -> Option<&FilterMetrics> {
        self.filters.iter().find(|f| f.kind == kind)
    }

    /// Summaries of `kind` in trial order.
    pub fn trial_summaries(&self, kind: FilterKind) -> impl Iterator<Item = &FilterTrialSummary> + '_ {
        self.per_trial.iter().filter_map(move |t| t.iter().find(|s| s.kind == kind))
    }
}

/// Sums over one trial that aggregation needs. Curves hold per-step sums over
/// robots of `|p~|^2`, `psi~^2` and NEES.
struct TrialDigest {
    summaries: Vec<FilterTrialSummary>,
    sums: Vec<Sums>,
}

struct Sums {
    sq_pos: f64,
    sq_ori: f64,
    nees: f64,
    nees_robot: Vec<f64>,
    curve_pos: Vec<f64>,
    curve_ori: Vec<f64>,
    curve_nees: Vec<f64>,
}

fn digest(result: TrialResult) -> TrialDigest {
    let mut summaries = Vec::with_capacity(result.filters.len());
    let mut sums = Vec::with_capacity(result.filters.len());
    for trace in result.filters {
        let n = trace.prior_error.n();
        let mut s = Sums {
            sq_pos: 0.0,
            sq_ori: 0.0,
            nees: 0.0,
            nees_robot: vec![0.0; n],
            curve_pos: Vec::with_capacity(trace.steps.len()),
            curve_ori: Vec::with_capacity(trace.steps.len()),
            curve_nees: Vec::with_capacity(trace.steps.len()),
        };
        for robots in &trace.steps {
            let (mut cp, mut co, mut cn) = (0.0, 0.0, 0.0);
            for (i, r) in robots.iter().enumerate() {
                cp += r.error.fixed_rows::<3>(0).norm_squared();
                co += r.error[3] * r.error[3];
                cn += r.nees;
                s.nees_robot[i] += r.nees;
            }
            s.sq_pos += cp;
            s.sq_ori += co;
            s.nees += cn;
            s.curve_pos.push(cp);
            s.curve_ori.push(co);
            s.curve_nees.push(cn);
        }
        summaries.push(trace.summary);
        sums.push(s);
    }
    TrialDigest { summaries, sums }
}

fn aggregate(config: &SimConfig, digests: Vec<TrialDigest>) -> AggregateMetrics {
    let (n, steps) = (config.n, config.steps);
    let mut filters = Vec::with_capacity(config.filters.len());
    for (f, &kind) in config.filters.iter().enumerate() {
        let mut sq_pos = 0.0;
        let mut sq_ori = 0.0;
        let mut nees = 0.0;
        let mut nees_robot = vec![0.0; n];
        let mut curve_pos = vec![0.0; steps];
        let mut curve_ori = vec![0.0; steps];
        let mut curve_nees = vec![0.0; steps];
        let mut ok = 0usize;
        let mut failed_trials = Vec::new();
        for (t, d) in digests.iter().enumerate() {
            if d.summaries[f].failure.is_some() {
                failed_trials.push(t);
                continue;
            }
            let s = &d.sums[f];
            ok += 1;
            sq_pos += s.sq_pos;
            sq_ori += s.sq_ori;
            nees += s.nees;
            for (acc, v) in nees_robot.iter_mut().zip(&s.nees_robot) {
                *acc += v;
            }
            for k in 0..steps {
                curve_pos[k] += s.curve_pos[k];
                curve_ori[k] += s.curve_ori[k];
                curve_nees[k] += s.curve_nees[k];
            }
        }
        let samples = ok * n * steps;
        let per_sample = |v: f64| v / samples as f64;
        let per_step = (ok * n) as f64;
        filters.push(FilterMetrics {
            kind,
            rmse_pos: per_sample(sq_pos).sqrt(),
            rmse_ori: per_sample(sq_ori).sqrt(),
            nees: per_sample(nees),
            nees_per_robot: nees_robot.iter().map(|v| v / (ok * steps) as f64).collect(),
            samples,
            failed_trials,
            curves: MeanCurves {
                rmse_pos: curve_pos.iter().map(|v| (v / per_step).sqrt()).collect(),
                rmse_ori: curve_ori.iter().map(|v| (v / per_step).sqrt()).collect(),
                nees: curve_nees.iter().map(|v| v / per_step).collect(),
            },
        });
    }
    AggregateMetrics {
        trials: digests.len(),
        steps,
        n,
        filters,
        per_trial: digests.into_iter().map(|d| d.summaries).collect(),
    }
}

/// [`monte_carlo`] with an observer called from the worker threads.
///
/// Trials run concurrently; the reduction runs afterwards in trial order, so
/// the result does not depend on scheduling.
pub fn monte_carlo_with(
    config: &SimConfig,
    observer: &(dyn Fn(&StepView<'_>) + Sync),
) -> Result<AggregateMetrics> {
    let truth = generate_truth(config)?;
    let digests = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial_with(config, &truth, t, &mut |v| observer(v)).map(digest))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(config, digests))
}

/// Runs `config.trials` trials of every configured filter and averages them.
pub fn monte_carlo(config: &SimConfig) -> Result<AggregateMetrics> {
    monte_carlo_with(config, &|_| {})
}

/// RMSE of the propagate-only baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadReckoning {
    pub rmse_pos: f64,
    pub rmse_ori: f64,
}

/// Propagates the trial priors with the trials' noisy odometry and no
/// measurements, averaging like [`monte_carlo`].
pub fn dead_reckoning(config: &SimConfig) -> Result<DeadReckoning> {
    let truth = generate_truth(config)?;
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let noise = draw_trial_noise(config, &truth, t);
            let mut mean = draw_prior(config, &truth.states[0], t)?.mean;
            let (mut sp, mut so) = (0.0, 0.0);
            for k in 1..=config.steps {
                mean = propagate_fleet(&mean, &noise.odometry[k - 1], config.dt)?;
                let e = error_state(&truth.states[k], &mean)?;
                for i in 0..config.n {
                    let r = e.robot(i);
                    sp += r.fixed_rows::<3>(0).norm_squared();
                    so += r[3] * r[3];
                }
            }
            Ok((sp, so))
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = (config.trials * config.n * config.steps) as f64;
    let (sp, so) = per_trial.iter().fold((0.0, 0.0), |(a, b), (p, o)| (a + p, b + o));
    Ok(DeadReckoning {
        rmse_pos: (sp / samples).sqrt(),
        rmse_ori: (so / samples).sqrt(),
    })
}
