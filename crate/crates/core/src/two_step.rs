//! Two-step optimization: pin the parameters that barely affect the error to
//! cheap or known-good values, optimize the impactful ones, then fine-tune
//! whatever is left.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{interval_reduction, run_algorithm1, AnalysisOptions, GoalSet, ReductionCurve, ReductionOptions, SensitivityReport};
use crate::error::{Error, Result};
use crate::gp::{gpbo_with_initial, GpboOptions, GpboResult, Seeded};
use crate::objectives::Objective;
use crate::rng;
use crate::space::{Configuration, ParamKind, SearchSpace, SpeedDirection, Value};
use crate::trial::Trial;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixingMode {
    /// Step 2 keeps the speed-rule values and tunes the rest.
    #[serde(rename = "acc+speed")]
    AccuracyAndSpeed,
    /// Step 2 keeps only the step-1 optima.
    #[serde(rename = "acc")]
    AccuracyOnly,
}

impl std::str::FromStr for FixingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc+speed" => Ok(FixingMode::AccuracyAndSpeed),
            "acc" => Ok(FixingMode::AccuracyOnly),
            _ => Err(Error::InvalidArgument(format!("unknown mode `{s}` (expected acc or acc+speed)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixingPolicy {
    pub mode: FixingMode,
    pub speed_directions: BTreeMap<String, SpeedDirection>,
    pub interaction_pairs: Vec<(String, String)>,
    /// Half-width, in rank units, of the window used to match a partner's
    /// fixed value when copying an interacting parameter.
    pub match_window: f64,
}

impl FixingPolicy {
    /// Speed directions declared in the space, pairs flagged by the report.
    pub fn from_space(space: &SearchSpace, report: &SensitivityReport, mode: FixingMode) -> Self {
        FixingPolicy {
            mode,
            speed_directions: space.params().iter().filter_map(|p| p.speed.map(|s| (p.name.clone(), s))).collect(),
            interaction_pairs: report.interactions.as_ref().map(|m| m.flagged.clone()).unwrap_or_default(),
            match_window: 0.1,
        }
    }

    pub fn validate(&self, space: &SearchSpace) -> Result<()> {
        for name in self.speed_directions.keys() {
            let p = space.param(name).ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
            if !p.is_ordered() {
                return Err(Error::InvalidParam { param: name.clone(), reason: "speed direction on an unordered parameter".into() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SpeedRule,
    BestTrialCopy,
    InteractionAdjustment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedValue {
    pub param: String,
    pub value: Value,
    pub provenance: Provenance,
    /// Trial the value was copied from, if any.
    pub source_trial: Option<u64>,
}

fn best_ok<'a, I: Iterator<Item = &'a Trial>>(it: I) -> Option<&'a Trial> {
    it.filter(|t| t.is_ok()).fold(None, |best: Option<&Trial>, t| match best {
        Some(b) if b.score <= t.score => Some(b),
        _ => Some(t),
    })
}

fn speed_value(space: &SearchSpace, param: &str, dir: SpeedDirection, curve: Option<&ReductionCurve>) -> Result<Option<Value>> {
    let spec = space.param(param).expect("validated");
    let from_top = match dir {
        SpeedDirection::Minimize => false,
        SpeedDirection::Maximize => true,
        SpeedDirection::Neutral => return Ok(None),
    };
    let cheap_end = match spec.kind {
        ParamKind::Integer { lo, hi } => Value::Int(if from_top { hi } else { lo }),
        ParamKind::Continuous { lo, hi, .. } => Value::Float(if from_top { hi } else { lo }),
        _ => unreachable!("speed directions are validated as ordered"),
    };
    let reduced = curve.filter(|c| c.from_top == from_top).and_then(|c| c.cutoff_point()).map(|p| p.bound);
    match reduced {
        Some(b) => Ok(Some(spec.canonical(&Value::Float(b))?)),
        None => Ok(Some(cheap_end)),
    }
}

/// Choose values for every non-impactful parameter. Speed-directed ones go to
/// the cheap end of their (possibly reduced) range, the rest are copied from
/// the best trial; a copied parameter that interacts with a speed-fixed one
/// is instead copied from the best trial whose partner lies near the fixed
/// value. Impactful parameters are left free.
pub fn select_fixed_values(
    space: &SearchSpace,
    report: &SensitivityReport,
    trials: &[Trial],
    policy: &FixingPolicy,
    curves: &[ReductionCurve],
) -> Result<Vec<FixedValue>> {
    policy.validate(space)?;
    let best = best_ok(trials.iter()).ok_or(Error::NoOkTrials)?;
    let mut fixed: Vec<FixedValue> = Vec::new();
    let free: Vec<&str> = space.params().iter().map(|p| p.name.as_str()).filter(|p| !report.is_impactful(p)).collect();
    for &name in &free {
        if let Some(dir) = policy.speed_directions.get(name) {
            let curve = curves.iter().find(|c| c.param == name);
            if let Some(v) = speed_value(space, name, *dir, curve)? {
                fixed.push(FixedValue { param: name.into(), value: v, provenance: Provenance::SpeedRule, source_trial: None });
            }
        }
    }
    let speed_fixed: BTreeMap<String, Value> = fixed.iter().map(|f| (f.param.clone(), f.value.clone())).collect();
    for &name in &free {
        if speed_fixed.contains_key(name) {
            continue;
        }
        let partner = policy.interaction_pairs.iter().find_map(|(a, b)| {
            let other = if a == name { b } else if b == name { a } else { return None };
            speed_fixed.get(other).map(|v| (other.as_str(), v))
        });
        let adjusted = match partner {
            Some((other, v)) => {
                let spec = space.param(other).expect("fixed param");
                let target = spec.midpoint_rank(v)?;
                let near = |t: &&Trial| {
                    t.config.get(other).is_some_and(|x| {
                        spec.midpoint_rank(x).is_ok_and(|r| (r - target).abs() <= policy.match_window + 1e-12)
                    }) && t.config.get(name).is_some()
                };
                best_ok(trials.iter().filter(near)).map(|t| (t, Provenance::InteractionAdjustment))
            }
            None => None,
        };
        let source = adjusted.or_else(|| {
            let src = if best.config.get(name).is_some() {
                Some(best)
            } else {
                best_ok(trials.iter().filter(|t| t.config.get(name).is_some()))
            };
            src.map(|t| (t, Provenance::BestTrialCopy))
        });
        if let Some((t, provenance)) = source {
            fixed.push(FixedValue {
                param: name.into(),
                value: t.config.get(name).expect("filtered").clone(),
                provenance,
                source_trial: Some(t.index),
            });
        }
    }
    Ok(fixed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub n_init: usize,
    pub n_iter: usize,
}

impl Budget {
    pub fn total(&self) -> usize {
        self.n_init + self.n_iter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepOptions {
    pub mode: FixingMode,
    pub step1: Budget,
    pub step2: Budget,
    pub analysis: AnalysisOptions,
    /// Reduce the range of speed-directed parameters before fixing them.
    pub reduce: Option<ReductionOptions>,
    /// Template for both optimizers; budgets and seeds are overridden.
    pub gpbo: GpboOptions,
}

impl Default for TwoStepOptions {
    fn default() -> Self {
        TwoStepOptions {
            mode: FixingMode::AccuracyAndSpeed,
            step1: Budget { n_init: 10, n_iter: 25 },
            step2: Budget { n_init: 10, n_iter: 25 },
            analysis: AnalysisOptions::default(),
            reduce: Some(ReductionOptions::default()),
            gpbo: GpboOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepResult {
    pub mode: FixingMode,
    pub fixed: Vec<FixedValue>,
    pub curves: Vec<ReductionCurve>,
    pub step1: GpboResult,
    /// Values held during step 2: the step-1 optima, plus the speed-rule
    /// values in `acc+speed` mode.
    pub step2_fixed: Configuration,
    /// `None` when step 2 had nothing left to tune.
    pub step2: Option<GpboResult>,
    pub notes: Vec<String>,
}

impl TwoStepResult {
    pub fn step1_incumbent(&self) -> Option<&Trial> {
        self.step1.best_trial()
    }

    pub fn step2_incumbent(&self) -> Option<&Trial> {
        self.step2.as_ref().and_then(|r| r.best_trial())
    }

    /// Best trial over both steps.
    pub fn best(&self) -> Option<&Trial> {
        best_ok(self.step1.history.iter().chain(self.step2.iter().flat_map(|r| r.history.iter())))
    }

    pub fn n_evaluations(&self) -> usize {
        self.step1.history.len() + self.step2.as_ref().map_or(0, |r| r.history.len())
    }

    pub fn fixed_configuration(&self) -> Configuration {
        self.fixed.iter().map(|f| (f.param.clone(), f.value.clone())).collect()
    }
}

/// Step-1 trials whose active parameters disagree with the fixed assignment.
pub fn audit_fixed(space: &SearchSpace, fixed: &Configuration, history: &[Trial]) -> Vec<u64> {
    history
        .iter()
        .filter(|t| {
            fixed.0.iter().any(|(k, v)| space.is_active(k, &t.config) && t.config.get(k) != Some(v))
        })
        .map(|t| t.index)
        .collect()
}

/// Run the sensitivity analysis on `trials`, then both optimization steps.
pub fn two_step_optimize(
    objective: &dyn Objective,
    trials: &[Trial],
    goal: &GoalSet,
    opts: &TwoStepOptions,
    seed: u64,
) -> Result<TwoStepResult> {
    let space = objective.space();
    let report = run_algorithm1(space, trials, goal, rng::derive_named(seed, "analysis", &[]), &opts.analysis)?;
    two_step_from_report(objective, trials, &report, goal, opts, seed)
}

/// As `two_step_optimize` with an existing report.
pub fn two_step_from_report(
    objective: &dyn Objective,
    trials: &[Trial],
    report: &SensitivityReport,
    goal: &GoalSet,
    opts: &TwoStepOptions,
    seed: u64,
) -> Result<TwoStepResult> {
    let space = objective.space();
    let policy = FixingPolicy::from_space(space, report, opts.mode);
    let mut curves = Vec::new();
    if let Some(ropts) = &opts.reduce {
        for (name, dir) in &policy.speed_directions {
            if report.is_impactful(name) || *dir == SpeedDirection::Neutral {
                continue;
            }
            let ro = ReductionOptions { from_top: *dir == SpeedDirection::Maximize, ..ropts.clone() };
            let rseed = rng::derive_named(seed, "reduce", &[]);
            curves.push(interval_reduction(space, name, trials, goal, report.noise_floor(), rseed, &ro)?);
        }
    }
    let fixed = select_fixed_values(space, report, trials, &policy, &curves)?;
    run_steps(objective, trials, fixed, curves, opts, seed)
}

fn run_steps(
    objective: &dyn Objective,
    trials: &[Trial],
    fixed: Vec<FixedValue>,
    curves: Vec<ReductionCurve>,
    opts: &TwoStepOptions,
    seed: u64,
) -> Result<TwoStepResult> {
    let space = objective.space();
    let mut notes = Vec::new();
    let fixed_cfg: Configuration = fixed.iter().map(|f| (f.param.clone(), f.value.clone())).collect();
    let step1_opts = GpboOptions {
        n_init: opts.step1.n_init,
        n_iter: opts.step1.n_iter,
        seed: rng::derive_named(seed, "step1", &[]),
        ..opts.gpbo.clone()
    };
    // the random search's best configuration, projected onto the fixed values
    let warm: Vec<Seeded> = best_ok(trials.iter()).map(|t| Seeded { config: t.config.clone(), seed: None }).into_iter().collect();
    let step1 = gpbo_with_initial(objective, space, &fixed_cfg, &warm, &step1_opts)?;
    let inc = step1.best_trial().ok_or(Error::NoOkTrials)?.clone();

    let mut step2_fixed = Configuration::new();
    for p in space.params() {
        if fixed_cfg.get(&p.name).is_none() {
            if let Some(v) = inc.config.get(&p.name) {
                step2_fixed.insert(&p.name, v.clone());
            }
        }
    }
    if opts.mode == FixingMode::AccuracyAndSpeed {
        for f in fixed.iter().filter(|f| f.provenance == Provenance::SpeedRule) {
            step2_fixed.insert(&f.param, f.value.clone());
        }
    }
    let remaining = crate::gp::Encoding::new(space, &step2_fixed)?.dim();
    let step2 = if remaining == 0 {
        notes.push("step 2 skipped: no parameter left to tune".into());
        None
    } else {
        let step2_opts = GpboOptions {
            n_init: opts.step2.n_init,
            n_iter: opts.step2.n_iter,
            seed: rng::derive_named(seed, "step2", &[]),
            ..opts.gpbo.clone()
        };
        let start = [Seeded { config: inc.config.clone(), seed: Some(inc.seed) }];
        Some(gpbo_with_initial(objective, space, &step2_fixed, &start, &step2_opts)?)
    };
    Ok(TwoStepResult { mode: opts.mode, fixed, curves, step1, step2_fixed, step2, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterSpec;

    #[test]
    fn mode_parses() {
        assert_eq!("acc".parse::<FixingMode>().unwrap(), FixingMode::AccuracyOnly);
        assert_eq!("acc+speed".parse::<FixingMode>().unwrap(), FixingMode::AccuracyAndSpeed);
        assert!("fast".parse::<FixingMode>().is_err());
    }

    #[test]
    fn speed_value_uses_the_reduced_bound() {
        let space = SearchSpace::new(vec![ParameterSpec::integer("n_units", 7, 512)], vec![]).unwrap();
        assert_eq!(speed_value(&space, "n_units", SpeedDirection::Minimize, None).unwrap(), Some(Value::Int(7)));
        assert_eq!(speed_value(&space, "n_units", SpeedDirection::Maximize, None).unwrap(), Some(Value::Int(512)));
        assert_eq!(speed_value(&space, "n_units", SpeedDirection::Neutral, None).unwrap(), None);
    }

    #[test]
    fn audit_catches_drift() {
        let space = SearchSpace::new(vec![ParameterSpec::integer("a", 1, 3), ParameterSpec::continuous("b", 0.0, 1.0)], vec![])
            .unwrap();
        let mut fixed = Configuration::new();
        fixed.insert("a", Value::Int(1));
        let mk = |i: u64, a: i64| {
            let mut c = Configuration::new();
            c.insert("a", Value::Int(a));
            c.insert("b", Value::Float(0.5));
            Trial::ok(i, c, 0.0, 0)
        };
        assert_eq!(audit_fixed(&space, &fixed, &[mk(0, 1), mk(1, 2), mk(2, 1)]), vec![1]);
    }
}
