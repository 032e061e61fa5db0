//! Analytic test functions. Intervals are closed on both ends.

use rand::Rng;

use super::{Objective, Outcome};
use crate::analysis::GoalSet;
use crate::error::{Error, Result};
use crate::rng;
use crate::space::{Configuration, ParameterSpec, SearchSpace, SpeedDirection};

fn check_domain(name: &str, x: f64) -> Result<f64> {
    if (0.0..=2.0).contains(&x) {
        Ok(x)
    } else {
        Err(Error::Domain { param: name.to_string(), value: x.to_string() })
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    lo <= x && x <= hi
}

pub fn example1(x1: f64, x2: f64) -> Result<u8> {
    let x1 = check_domain("x1", x1)?;
    let x2 = check_domain("x2", x2)?;
    Ok(u8::from(within(x1, 0.0, 1.0) && within(x2, 0.0, 1.0)))
}

/// `x[3]` and `x[4]` are dummies; they are only domain-checked.
pub fn example2(x: [f64; 5]) -> Result<u8> {
    for (i, v) in x.iter().enumerate() {
        check_domain(&format!("x{}", i + 1), *v)?;
    }
    let [x1, x2, x3, _, _] = x;
    let a = within(x2, 1.0, 2.0) && within(x3, 0.0, 1.0);
    let b = within(x2, 0.0, 1.0) && within(x3, 1.0, 2.0);
    Ok(u8::from(within(x1, 0.0, 1.0) && (a || b)))
}

/// `bernoulli` is only consulted in the random cell.
pub fn example3<R: Rng + ?Sized>(x1: f64, x2: f64, x3: f64, t: f64, bernoulli: &mut R) -> Result<u8> {
    let x1 = check_domain("x1", x1)?;
    let x2 = check_domain("x2", x2)?;
    let x3 = check_domain("x3", x3)?;
    check_domain("t", t)?;
    if !within(x1, 0.0, 1.0) {
        return Ok(0);
    }
    if within(x2, 0.0, t) {
        return Ok(u8::from(bernoulli.gen_bool(0.5)));
    }
    Ok(u8::from(within(x3, 0.0, 1.0)))
}

fn unit_box(names: &[&str], lo: f64, hi: f64) -> SearchSpace {
    SearchSpace::new(names.iter().map(|n| ParameterSpec::continuous(n, lo, hi)).collect(), vec![])
        .expect("static space")
}

fn get(c: &Configuration, name: &str) -> Result<f64> {
    c.f64(name).ok_or_else(|| Error::ConfigMismatch(format!("missing `{name}`")))
}

/// The indicator examples target f = 1, i.e. error 0.
fn indicator_goal() -> Option<GoalSet> {
    Some(GoalSet::Threshold { bound: 0.5, below: true })
}

fn indicator_outcome(r: Result<u8>) -> Outcome {
    match r {
        Ok(f) => Outcome::ok(1.0 - f64::from(f)),
        Err(e) => Outcome::failed(e.to_string()),
    }
}

/// Error 1 - f on [0,2]².
pub struct Example1 {
    space: SearchSpace,
}

impl Example1 {
    pub fn new() -> Self {
        Example1 { space: unit_box(&["x1", "x2"], 0.0, 2.0) }
    }
}

impl Default for Example1 {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for Example1 {
    fn name(&self) -> &str {
        "example1"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn default_goal(&self) -> Option<GoalSet> {
        indicator_goal()
    }

    fn evaluate(&self, c: &Configuration, _seed: u64) -> Outcome {
        indicator_outcome((|| example1(get(c, "x1")?, get(c, "x2")?))())
    }
}

pub struct Example2 {
    space: SearchSpace,
}

impl Example2 {
    pub fn new() -> Self {
        Example2 { space: unit_box(&["x1", "x2", "x3", "x4", "x5"], 0.0, 2.0) }
    }
}

impl Default for Example2 {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for Example2 {
    fn name(&self) -> &str {
        "example2"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn default_goal(&self) -> Option<GoalSet> {
        indicator_goal()
    }

    fn evaluate(&self, c: &Configuration, _seed: u64) -> Outcome {
        indicator_outcome((|| {
            example2([get(c, "x1")?, get(c, "x2")?, get(c, "x3")?, get(c, "x4")?, get(c, "x5")?])
        })())
    }
}

/// The Bernoulli draw comes from the trial seed.
pub struct Example3 {
    t: f64,
    name: String,
    space: SearchSpace,
}

impl Example3 {
    pub fn new(t: f64) -> Result<Self> {
        check_domain("t", t)?;
        Ok(Example3 { t, name: format!("example3:{t}"), space: unit_box(&["x1", "x2", "x3"], 0.0, 2.0) })
    }

    pub fn t(&self) -> f64 {
        self.t
    }
}

impl Objective for Example3 {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn default_goal(&self) -> Option<GoalSet> {
        indicator_goal()
    }

    fn evaluate(&self, c: &Configuration, seed: u64) -> Outcome {
        let mut b = rng::stream(rng::derive_named(seed, "bernoulli", &[]));
        indicator_outcome((|| example3(get(c, "x1")?, get(c, "x2")?, get(c, "x3")?, self.t, &mut b))())
    }
}

pub const QUADRATIC_ARGMIN: f64 = 0.37;

/// (x - 0.37)² on [0, 1].
pub struct Quadratic {
    space: SearchSpace,
}

impl Quadratic {
    pub fn new() -> Self {
        Quadratic { space: unit_box(&["x"], 0.0, 1.0) }
    }
}

impl Default for Quadratic {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, c: &Configuration, _seed: u64) -> Outcome {
        match get(c, "x") {
            Ok(x) => Outcome::ok((x - QUADRATIC_ARGMIN).powi(2)),
            Err(e) => Outcome::failed(e.to_string()),
        }
    }
}

pub const BRANIN_MIN: f64 = 0.397_887_357_729_738;

pub fn branin(x1: f64, x2: f64) -> f64 {
    use std::f64::consts::PI;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Branin on [-5, 10] × [0, 15].
pub struct Branin {
    space: SearchSpace,
}

impl Branin {
    pub fn new() -> Self {
        let space = SearchSpace::new(
            vec![ParameterSpec::continuous("x1", -5.0, 10.0), ParameterSpec::continuous("x2", 0.0, 15.0)],
            vec![],
        )
        .expect("static space");
        Branin { space }
    }
}

impl Default for Branin {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for Branin {
    fn name(&self) -> &str {
        "branin"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, c: &Configuration, _seed: u64) -> Outcome {
        match (|| Ok::<_, Error>(branin(get(c, "x1")?, get(c, "x2")?)))() {
            Ok(v) => Outcome::ok(v),
            Err(e) => Outcome::failed(e.to_string()),
        }
    }
}

/// (x1 - 0.7)² + 0.01 (x2 - 0.2)² + 1e-4 (x3 - 1), with x3 ∈ {1..8} the
/// cost knob (smaller runs faster).
pub struct ThreeTerm {
    space: SearchSpace,
}

impl ThreeTerm {
    pub fn new() -> Self {
        let space = SearchSpace::new(
            vec![
                ParameterSpec::continuous("x1", 0.0, 1.0),
                ParameterSpec::continuous("x2", 0.0, 1.0),
                ParameterSpec::integer("x3", 1, 8).with_speed(SpeedDirection::Minimize),
            ],
            vec![],
        )
        .expect("static space");
        ThreeTerm { space }
    }

    pub fn value(x1: f64, x2: f64, x3: f64) -> f64 {
        (x1 - 0.7).powi(2) + 0.01 * (x2 - 0.2).powi(2) + 1e-4 * (x3 - 1.0)
    }
}

impl Default for ThreeTerm {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for ThreeTerm {
    fn name(&self) -> &str {
        "three-term"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, c: &Configuration, _seed: u64) -> Outcome {
        match (|| Ok::<_, Error>(Self::value(get(c, "x1")?, get(c, "x2")?, get(c, "x3")?)))() {
            Ok(v) => Outcome::ok(v),
            Err(e) => Outcome::failed(e.to_string()),
        }
    }
}

/// Good iff n_layers ≥ 3: error is `x` plus a unit penalty for shallower
/// networks.
pub struct DepthThreshold {
    space: SearchSpace,
}

impl DepthThreshold {
    pub fn new() -> Self {
        let space = SearchSpace::new(
            vec![
                ParameterSpec::integer("n_layers", 1, 10).with_speed(SpeedDirection::Minimize),
                ParameterSpec::continuous("x", 0.0, 1.0),
            ],
            vec![],
        )
        .expect("static space");
        DepthThreshold { space }
    }
}

impl Default for DepthThreshold {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for DepthThreshold {
    fn name(&self) -> &str {
        "depth-threshold"
    }

    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn evaluate(&self, c: &Configuration, _seed: u64) -> Outcome {
        match (|| Ok::<_, Error>((get(c, "n_layers")?, get(c, "x")?)))() {
            Ok((l, x)) => Outcome::ok(x + if l < 3.0 { 1.0 } else { 0.0 }),
            Err(e) => Outcome::failed(e.to_string()),
        }
    }
}
