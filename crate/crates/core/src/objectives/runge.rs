//! Approximation of the Runge function by a small dense network.

use super::mlp::{mlp_train_eval, Dataset, MlpConfig};
use super::{Objective, Outcome};
use crate::error::{Error, Result};
use crate::rng;
use crate::space::{ConditionalRule, Configuration, ParameterSpec, SearchSpace, SpeedDirection, Value};
use crate::trial::TrialStatus;

pub fn runge(x: f64) -> f64 {
    1.0 / (1.0 + 15.0 * x * x)
}

/// Where the equally spaced train and test points lie.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RungeGrid {
    /// [-1, 1], the function's natural domain.
    Symmetric,
    /// [0, 1].
    Unit,
}

impl RungeGrid {
    fn bounds(self) -> (f64, f64) {
        match self {
            RungeGrid::Symmetric => (-1.0, 1.0),
            RungeGrid::Unit => (0.0, 1.0),
        }
    }

    pub fn dataset(self, n: usize) -> Dataset {
        let (lo, hi) = self.bounds();
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Dataset::new(xs.iter().map(|x| vec![*x]).collect(), xs.iter().map(|x| vec![runge(*x)]).collect())
            .expect("nonempty grid")
    }
}

pub fn runge_space() -> SearchSpace {
    let params = vec![
        ParameterSpec::integer("n_layers", 1, 5).with_speed(SpeedDirection::Minimize),
        ParameterSpec::integer("n_units", 4, 64).with_speed(SpeedDirection::Minimize),
        ParameterSpec::categorical("activation", &["elu", "relu", "tanh", "sigmoid"]),
        ParameterSpec::categorical("loss_function", &["L2", "L1"]),
        ParameterSpec::categorical("optimizer", &["sgd", "adam"]),
        ParameterSpec::continuous("adam_beta1", 0.5, 0.99),
        ParameterSpec::log_continuous("learning_rate", 1e-4, 1.0),
        ParameterSpec::integer("batch_size", 1, 11).with_speed(SpeedDirection::Maximize),
    ];
    let rules = vec![ConditionalRule {
        child: "adam_beta1".into(),
        parent: "optimizer".into(),
        activating: vec![Value::Str("adam".into())],
    }];
    SearchSpace::new(params, rules).expect("static space")
}

/// Test mean squared error after training on 11 points, measured on 1000.
/// With `n_seeds > 1` the error is averaged over independently seeded
/// trainings; any divergence makes the trial diverge.
pub struct RungeObjective {
    space: SearchSpace,
    name: &'static str,
    pub n_epochs: usize,
    pub n_seeds: usize,
    train: Dataset,
    test: Dataset,
}

impl RungeObjective {
    pub fn new(grid: RungeGrid) -> Self {
        RungeObjective {
            space: runge_space(),
            name: match grid {
                RungeGrid::Symmetric => "runge",
                RungeGrid::Unit => "runge-unit",
            },
            n_epochs: 100,
            n_seeds: 1,
            train: grid.dataset(11),
            test: grid.dataset(1000),
        }
    }

    pub fn mlp_config(&self, c: &Configuration, seed: u64) -> Result<MlpConfig> {
        let int = |k: &str| c.f64(k).map(|v| v as usize).ok_or_else(|| Error::ConfigMismatch(format!("missing `{k}`")));
        let text = |k: &str| c.str(k).ok_or_else(|| Error::ConfigMismatch(format!("missing `{k}`")));
        let optimizer = text("optimizer")?.parse()?;
        Ok(MlpConfig {
            n_layers: int("n_layers")?,
            n_units: int("n_units")?,
            activation: text("activation")?.parse()?,
            loss: text("loss_function")?.parse()?,
            optimizer,
            learning_rate: c.f64("learning_rate").ok_or_else(|| Error::ConfigMismatch("missing `learning_rate`".into()))?,
            batch_size: int("batch_size")?,
            n_epochs: self.n_epochs,
            adam_beta1: c.f64("adam_beta1").unwrap_or(0.9),
            seed,
        })
    }
}

impl Objective for RungeObjective {
    fn name(&self) -> &str {
        self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, c: &Configuration, seed: u64) -> Outcome {
        let mut total = 0.0;
        let mut last = Outcome::diverged();
        for s in 0..self.n_seeds.max(1) {
            let cfg = match self.mlp_config(c, rng::derive(seed, &[s as u64])) {
                Ok(cfg) => cfg,
                Err(e) => return Outcome::failed(e.to_string()),
            };
            last = mlp_train_eval(&cfg, &self.train, &self.test);
            match (last.status, last.error) {
                (TrialStatus::Ok, Some(e)) => total += e,
                _ => return last,
            }
        }
        last.error = Some(total / self.n_seeds.max(1) as f64);
        last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runge_values() {
        assert_eq!(runge(0.0), 1.0);
        assert_eq!(runge(1.0), 0.0625);
        let mut r = rng::stream(5);
        for _ in 0..100 {
            let x: f64 = rand::Rng::gen_range(&mut r, -3.0..3.0);
            assert_eq!(runge(x), runge(-x));
        }
    }

    #[test]
    fn grids() {
        let d = RungeGrid::Symmetric.dataset(11);
        assert_eq!(d.inputs[0][0], -1.0);
        assert_eq!(d.inputs[10][0], 1.0);
        assert_eq!(RungeGrid::Unit.dataset(1000).inputs[999][0], 1.0);
    }

    #[test]
    fn space_has_one_conditional() {
        let s = runge_space();
        assert_eq!(s.params().len(), 8);
        assert!(s.is_conditional("adam_beta1"));
    }
}
