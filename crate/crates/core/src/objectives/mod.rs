//! Built-in objectives and the trait the harness and optimizers evaluate.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use crate::analysis::GoalSet;
use crate::error::{Error, Result};
use crate::space::{Configuration, SearchSpace};
use crate::trial::{Trial, TrialStatus};

pub mod bateman;
pub mod mlp;
pub mod runge;
pub mod synthetic;

pub use bateman::{bateman_dataset, bateman_rhs, bateman_solve, BatemanSample, BatemanSystem};
pub use mlp::{mlp_forward_backward, mlp_train_eval, Activation, Dataset, Loss, Mlp, MlpConfig, OptimizerKind};
pub use runge::{runge, RungeGrid, RungeObjective};
pub use synthetic::{example1, example2, example3, Branin, DepthThreshold, Example1, Example2, Example3, Quadratic, ThreeTerm};

/// Result of one objective call, before it is stamped with index and timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: TrialStatus,
    pub error: Option<f64>,
    pub tags: BTreeMap<String, serde_json::Value>,
}

impl Outcome {
    pub fn ok(error: f64) -> Self {
        Outcome { status: TrialStatus::Ok, error: Some(error), tags: BTreeMap::new() }
    }

    pub fn diverged() -> Self {
        Outcome { status: TrialStatus::Diverged, error: None, tags: BTreeMap::new() }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        let mut o = Outcome { status: TrialStatus::Failed, error: None, tags: BTreeMap::new() };
        o.tags.insert("failure".into(), serde_json::Value::String(message.into()));
        o
    }

    pub fn with_tag(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.tags.insert(key.to_string(), value.into());
        self
    }
}

/// A function F(config, seed) to minimize. Must be deterministic in its
/// arguments and safe to call from several threads at once.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;
    fn space(&self) -> &SearchSpace;
    fn evaluate(&self, config: &Configuration, seed: u64) -> Outcome;

    /// Goal set to analyze against when the caller does not choose one.
    fn default_goal(&self) -> Option<GoalSet> {
        None
    }
}

/// Wraps a closure as an objective.
pub struct FnObjective<F> {
    name: String,
    space: SearchSpace,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&Configuration, u64) -> Outcome + Send + Sync,
{
    pub fn new(name: &str, space: SearchSpace, f: F) -> Self {
        FnObjective { name: name.to_string(), space, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&Configuration, u64) -> Outcome + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, config: &Configuration, seed: u64) -> Outcome {
        (self.f)(config, seed)
    }
}

/// Evaluate once, timing the call. A panic inside the objective becomes a
/// `failed` trial instead of tearing down the run.
pub fn evaluate_trial(objective: &dyn Objective, config: &Configuration, index: u64, seed: u64) -> Trial {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| objective.evaluate(config, seed))).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "objective panicked".into());
        Outcome::failed(msg)
    });
    let mut t = Trial {
        index,
        config: config.clone(),
        score: outcome.error,
        status: outcome.status,
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        tags: outcome.tags,
    };
    t.normalize_status();
    t
}

pub const BUILTIN_NAMES: &[&str] =
    &["example1", "example2", "example3", "quadratic", "branin", "three-term", "depth-threshold", "runge"];

/// Look up a built-in objective. `example3` takes its threshold as
/// `example3:<t>` (default 1).
pub fn builtin(name: &str) -> Result<Box<dyn Objective>> {
    let obj: Box<dyn Objective> = match name {
        "example1" => Box::new(Example1::new()),
        "example2" => Box::new(Example2::new()),
        "example3" => Box::new(Example3::new(1.0)?),
        "quadratic" => Box::new(Quadratic::new()),
        "branin" => Box::new(Branin::new()),
        "three-term" => Box::new(ThreeTerm::new()),
        "depth-threshold" => Box::new(DepthThreshold::new()),
        "runge" => Box::new(RungeObjective::new(RungeGrid::Symmetric)),
        "runge-unit" => Box::new(RungeObjective::new(RungeGrid::Unit)),
        _ => match name.strip_prefix("example3:") {
            Some(t) => {
                let t: f64 = t.parse().map_err(|_| Error::UnknownObjective(name.to_string()))?;
                Box::new(Example3::new(t)?)
            }
            None => return Err(Error::UnknownObjective(name.to_string())),
        },
    };
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{ParameterSpec, Value};

    #[test]
    fn panics_become_failed_trials() {
        let space = SearchSpace::new(vec![ParameterSpec::continuous("x", 0.0, 1.0)], vec![]).unwrap();
        let obj = FnObjective::new("boom", space, |c: &Configuration, _| {
            if c.f64("x").unwrap() > 0.5 {
                panic!("bad config");
            }
            Outcome::ok(1.0)
        });
        let mut c = Configuration::new();
        c.insert("x", Value::Float(0.7));
        let t = evaluate_trial(&obj, &c, 3, 9);
        assert_eq!(t.status, TrialStatus::Failed);
        assert_eq!(t.score, None);
        assert_eq!(t.tags["failure"], "bad config");
        c.insert("x", Value::Float(0.2));
        assert_eq!(evaluate_trial(&obj, &c, 4, 9).score, Some(1.0));
    }

    #[test]
    fn builtins_resolve() {
        for n in BUILTIN_NAMES {
            assert_eq!(builtin(n).unwrap().name().split(':').next().unwrap(), *n);
        }
        assert!(builtin("example3:1.5").is_ok());
        assert!(matches!(builtin("nope"), Err(Error::UnknownObjective(_))));
    }
}
