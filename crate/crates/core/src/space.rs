//! Search-space declaration, sampling, and the rank (CDF) transform that maps
//! every hyperparameter onto [0, 1).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::trial::Trial;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

/// Which end of an ordered parameter's range is cheaper to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedDirection {
    /// Smaller values run faster.
    Minimize,
    /// Larger values run faster.
    Maximize,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Str(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Continuous { lo: f64, hi: f64, scale: Scale },
    Integer { lo: i64, hi: i64 },
    Categorical { levels: Vec<String>, weights: Vec<f64> },
    Boolean { weight_true: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub kind: ParamKind,
    pub speed: Option<SpeedDirection>,
}

impl ParameterSpec {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self::new(name, ParamKind::Continuous { lo, hi, scale: Scale::Linear })
    }

    pub fn log_continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self::new(name, ParamKind::Continuous { lo, hi, scale: Scale::Log })
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Self::new(name, ParamKind::Integer { lo, hi })
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        let w = 1.0 / levels.len() as f64;
        Self::new(
            name,
            ParamKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                weights: vec![w; levels.len()],
            },
        )
    }

    pub fn boolean(name: &str) -> Self {
        Self::new(name, ParamKind::Boolean { weight_true: 0.5 })
    }

    pub fn new(name: &str, kind: ParamKind) -> Self {
        ParameterSpec { name: name.to_string(), kind, speed: None }
    }

    pub fn with_speed(mut self, speed: SpeedDirection) -> Self {
        self.speed = Some(speed);
        self
    }

    pub fn is_ordered(&self) -> bool {
        matches!(self.kind, ParamKind::Continuous { .. } | ParamKind::Integer { .. })
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.kind, ParamKind::Continuous { .. })
    }

    /// Number of levels of a discrete parameter, `None` for continuous ones.
    pub fn level_count(&self) -> Option<usize> {
        match &self.kind {
            ParamKind::Continuous { .. } => None,
            ParamKind::Integer { lo, hi } => Some((hi - lo + 1) as usize),
            ParamKind::Categorical { levels, .. } => Some(levels.len()),
            ParamKind::Boolean { .. } => Some(2),
        }
    }

    /// Prior probability of each level. Integers are equally weighted.
    pub fn level_weights(&self) -> Option<Vec<f64>> {
        match &self.kind {
            ParamKind::Continuous { .. } => None,
            ParamKind::Integer { lo, hi } => {
                let n = (hi - lo + 1) as usize;
                Some(vec![1.0 / n as f64; n])
            }
            ParamKind::Categorical { weights, .. } => Some(weights.clone()),
            ParamKind::Boolean { weight_true } => Some(vec![1.0 - weight_true, *weight_true]),
        }
    }

    pub fn level_value(&self, idx: usize) -> Option<Value> {
        match &self.kind {
            ParamKind::Continuous { .. } => None,
            ParamKind::Integer { lo, hi } => {
                let v = lo + idx as i64;
                (v <= *hi).then_some(Value::Int(v))
            }
            ParamKind::Categorical { levels, .. } => levels.get(idx).map(|s| Value::Str(s.clone())),
            ParamKind::Boolean { .. } => match idx {
                0 => Some(Value::Bool(false)),
                1 => Some(Value::Bool(true)),
                _ => None,
            },
        }
    }

    pub fn level_index(&self, value: &Value) -> Result<usize> {
        let bad = || Error::Domain { param: self.name.clone(), value: value.to_string() };
        match (&self.kind, value) {
            (ParamKind::Integer { lo, hi }, _) => {
                let v = match value {
                    Value::Int(i) => *i,
                    Value::Float(f) if f.fract() == 0.0 => *f as i64,
                    _ => return Err(bad()),
                };
                if v < *lo || v > *hi {
                    return Err(bad());
                }
                Ok((v - lo) as usize)
            }
            (ParamKind::Categorical { levels, .. }, Value::Str(s)) => {
                levels.iter().position(|l| l == s).ok_or_else(bad)
            }
            (ParamKind::Boolean { .. }, Value::Bool(b)) => Ok(usize::from(*b)),
            _ => Err(bad()),
        }
    }

    /// Coerce a value to this parameter's canonical representation, checking
    /// the domain.
    pub fn canonical(&self, value: &Value) -> Result<Value> {
        match &self.kind {
            ParamKind::Continuous { lo, hi, .. } => {
                let x = value.as_f64().ok_or_else(|| Error::Domain {
                    param: self.name.clone(),
                    value: value.to_string(),
                })?;
                if !(x >= *lo && x <= *hi) {
                    return Err(Error::Domain { param: self.name.clone(), value: value.to_string() });
                }
                Ok(Value::Float(x))
            }
            _ => {
                let idx = self.level_index(value)?;
                Ok(self.level_value(idx).expect("index in range"))
            }
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        self.canonical(value).is_ok()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match &self.kind {
            ParamKind::Continuous { lo, hi, scale: Scale::Linear } => Value::Float(rng.gen_range(*lo..*hi)),
            ParamKind::Continuous { lo, hi, scale: Scale::Log } => {
                Value::Float(rng.gen_range(lo.ln()..hi.ln()).exp().clamp(*lo, *hi))
            }
            ParamKind::Integer { lo, hi } => Value::Int(rng.gen_range(*lo..=*hi)),
            ParamKind::Categorical { levels, weights } => {
                let idx = pick_weighted(weights, rng.gen::<f64>());
                Value::Str(levels[idx].clone())
            }
            ParamKind::Boolean { weight_true } => Value::Bool(rng.gen::<f64>() < *weight_true),
        }
    }

    /// Deterministic position of a value in [0, 1]: the CDF for continuous
    /// parameters, the level midpoint for discrete ones.
    pub fn midpoint_rank(&self, value: &Value) -> Result<f64> {
        match &self.kind {
            ParamKind::Continuous { lo, hi, scale } => {
                let x = value.as_f64().ok_or_else(|| Error::Domain {
                    param: self.name.clone(),
                    value: value.to_string(),
                })?;
                Ok(continuous_cdf(x, *lo, *hi, *scale))
            }
            _ => {
                let idx = self.level_index(value)?;
                let w = self.level_weights().expect("discrete");
                let start: f64 = w[..idx].iter().sum();
                Ok(start + 0.5 * w[idx])
            }
        }
    }

    /// Inverse of `midpoint_rank` up to level resolution.
    pub fn from_rank(&self, u: f64) -> Value {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            ParamKind::Continuous { lo, hi, scale: Scale::Linear } => Value::Float((lo + u * (hi - lo)).clamp(*lo, *hi)),
            ParamKind::Continuous { lo, hi, scale: Scale::Log } => {
                Value::Float((lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(*lo, *hi))
            }
            _ => {
                let w = self.level_weights().expect("discrete");
                self.level_value(pick_weighted(&w, u)).expect("index in range")
            }
        }
    }
}

fn pick_weighted(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u at or beyond the rounded total: last level with positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

fn continuous_cdf(x: f64, lo: f64, hi: f64, scale: Scale) -> f64 {
    let u = match scale {
        Scale::Linear => (x - lo) / (hi - lo),
        Scale::Log => (x.ln() - lo.ln()) / (hi.ln() - lo.ln()),
    };
    below_one(u.clamp(0.0, 1.0))
}

const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

fn below_one(u: f64) -> f64 {
    if u >= 1.0 {
        ONE_MINUS
    } else {
        u
    }
}

/// Rank transform of one value: exact CDF for continuous parameters, a
/// uniform draw inside the level's CDF interval for discrete ones.
pub fn cdf_transform<R: Rng + ?Sized>(spec: &ParameterSpec, value: &Value, rng: &mut R) -> Result<f64> {
    match &spec.kind {
        ParamKind::Continuous { lo, hi, scale } => {
            let x = spec.canonical(value)?.as_f64().expect("float");
            Ok(continuous_cdf(x, *lo, *hi, *scale))
        }
        _ => {
            let idx = spec.level_index(value)?;
            let w = spec.level_weights().expect("discrete");
            let start: f64 = w[..idx].iter().sum();
            Ok(below_one(start + w[idx] * rng.gen::<f64>()))
        }
    }
}

/// `child` exists only when `parent` takes one of the `activating` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRule {
    pub child: String,
    pub parent: String,
    pub activating: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub BTreeMap<String, Value>);

impl Configuration {
    pub fn new() -> Self {
        Configuration(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: &str, v: Value) {
        self.0.insert(name.to_string(), v);
    }

    pub fn f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Value::as_f64)
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        match self.get(name) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn bool(&self, name: &str) -> Option<bool> {
        match self.get(name) {
            Some(Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }
}

impl Default for Configuration {
    fn default() -> Self {
        Self::new()
    }
}

impl FromIterator<(String, Value)> for Configuration {
    fn from_iter<T: IntoIterator<Item = (String, Value)>>(iter: T) -> Self {
        Configuration(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    params: Vec<ParameterSpec>,
    rules: Vec<ConditionalRule>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParameterSpec>, rules: Vec<ConditionalRule>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &params {
            validate_param(p)?;
            if !seen.insert(p.name.clone()) {
                return Err(Error::InvalidParam { param: p.name.clone(), reason: "duplicate name".into() });
            }
        }
        let mut space = SearchSpace { params, rules: Vec::new() };
        let children: BTreeSet<&str> = rules.iter().map(|r| r.child.as_str()).collect();
        let mut canon_rules = Vec::with_capacity(rules.len());
        let mut seen_children = BTreeSet::new();
        for r in &rules {
            let bad = |reason: &str| Error::InvalidRule { child: r.child.clone(), reason: reason.to_string() };
            if space.param(&r.child).is_none() {
                return Err(bad("unknown child parameter"));
            }
            let parent = space.param(&r.parent).ok_or_else(|| bad("unknown parent parameter"))?;
            if r.child == r.parent {
                return Err(bad("a parameter cannot condition itself"));
            }
            if children.contains(r.parent.as_str()) {
                return Err(bad("two-level conditioning: the parent is itself conditional"));
            }
            if !seen_children.insert(r.child.clone()) {
                return Err(bad("child appears in more than one rule"));
            }
            if !parent.is_discrete() {
                return Err(bad("parent must be integer, categorical or boolean"));
            }
            if r.activating.is_empty() {
                return Err(bad("empty activating value set"));
            }
            let mut act = Vec::new();
            for v in &r.activating {
                let c = parent.canonical(v).map_err(|_| bad(&format!("activating value {v} is not a level of `{}`", r.parent)))?;
                if !act.contains(&c) {
                    act.push(c);
                }
            }
            canon_rules.push(ConditionalRule { child: r.child.clone(), parent: r.parent.clone(), activating: act });
        }
        space.rules = canon_rules;
        Ok(space)
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn rules(&self) -> &[ConditionalRule] {
        &self.rules
    }

    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn rule_for(&self, child: &str) -> Option<&ConditionalRule> {
        self.rules.iter().find(|r| r.child == child)
    }

    pub fn is_conditional(&self, name: &str) -> bool {
        self.rule_for(name).is_some()
    }

    pub fn main_params(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.params.iter().filter(|p| !self.is_conditional(&p.name))
    }

    /// Whether `name` should be present given the values already in `config`.
    pub fn is_active(&self, name: &str, config: &Configuration) -> bool {
        match self.rule_for(name) {
            None => true,
            Some(r) => config.get(&r.parent).is_some_and(|v| r.activating.contains(v)),
        }
    }

    /// Checks that exactly the active parameters are present and in domain,
    /// and returns the configuration with canonical value types.
    pub fn validate(&self, config: &Configuration) -> Result<Configuration> {
        for k in config.0.keys() {
            if self.param(k).is_none() {
                return Err(Error::ConfigMismatch(format!("unknown parameter `{k}`")));
            }
        }
        let mut out = Configuration::new();
        for p in self.main_params() {
            let v = config.get(&p.name).ok_or_else(|| Error::ConfigMismatch(format!("missing `{}`", p.name)))?;
            out.insert(&p.name, p.canonical(v)?);
        }
        for r in &self.rules {
            let p = self.param(&r.child).expect("validated");
            let active = self.is_active(&r.child, &out);
            match (active, config.get(&r.child)) {
                (true, Some(v)) => out.insert(&r.child, p.canonical(v)?),
                (true, None) => return Err(Error::ConfigMismatch(format!("active `{}` is missing", r.child))),
                (false, Some(_)) => return Err(Error::ConfigMismatch(format!("inactive `{}` is present", r.child))),
                (false, None) => {}
            }
        }
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        self.sample_with_fixed(&Configuration::new(), rng)
    }

    /// Sample a configuration with some values pinned. Conditional children
    /// follow whatever their (possibly pinned) parent ends up being.
    pub fn sample_with_fixed<R: Rng + ?Sized>(&self, fixed: &Configuration, rng: &mut R) -> Configuration {
        let mut c = Configuration::new();
        for p in self.main_params() {
            let v = p.sample(rng);
            c.insert(&p.name, fixed.get(&p.name).cloned().unwrap_or(v));
        }
        for r in &self.rules {
            if self.is_active(&r.child, &c) {
                let p = self.param(&r.child).expect("validated");
                let v = p.sample(rng);
                c.insert(&r.child, fixed.get(&r.child).cloned().unwrap_or(v));
            }
        }
        c
    }

    /// Drop children whose parent no longer activates them.
    pub fn prune_inactive(&self, config: &mut Configuration) {
        for r in &self.rules {
            if !self.is_active(&r.child, config) {
                config.0.remove(&r.child);
            }
        }
    }

    pub fn to_doc(&self) -> SpaceDoc {
        SpaceDoc {
            params: self.params.iter().map(ParamDoc::from_spec).collect(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleDoc { child: r.child.clone(), parent: r.parent.clone(), when: r.activating.clone() })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("space serializes")
    }

    /// Content hash of the canonical serialization.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(&self.to_doc()).expect("space serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

fn validate_param(p: &ParameterSpec) -> Result<()> {
    let bad = |reason: &str| Err(Error::InvalidParam { param: p.name.clone(), reason: reason.to_string() });
    if p.name.is_empty() {
        return bad("empty name");
    }
    match &p.kind {
        ParamKind::Continuous { lo, hi, scale } => {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return bad("bounds must be finite with lo < hi");
            }
            if *scale == Scale::Log && *lo <= 0.0 {
                return bad("log scale needs lo > 0");
            }
        }
        ParamKind::Integer { lo, hi } => {
            if lo >= hi {
                return bad("bounds must satisfy lo < hi");
            }
        }
        ParamKind::Categorical { levels, weights } => {
            if levels.is_empty() {
                return bad("no levels");
            }
            let distinct: BTreeSet<&String> = levels.iter().collect();
            if distinct.len() != levels.len() {
                return bad("duplicate levels");
            }
            if weights.len() != levels.len() {
                return bad("one weight per level is required");
            }
            if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return bad("weights must be non-negative");
            }
            if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("weights must sum to 1");
            }
        }
        ParamKind::Boolean { weight_true } => {
            if !(0.0..=1.0).contains(weight_true) {
                return bad("weight_true must lie in [0, 1]");
            }
        }
    }
    if p.speed.is_some_and(|s| s != SpeedDirection::Neutral) && !p.is_ordered() {
        return bad("a speed direction needs an ordered (integer or continuous) domain");
    }
    Ok(())
}

/// On-disk form of a search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDoc {
    pub params: Vec<ParamDoc>,
    #[serde(default)]
    pub rules: Vec<RuleDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDoc {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<serde_json::Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<serde_json::Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_true: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<SpeedDirection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleDoc {
    pub child: String,
    pub parent: String,
    pub when: Vec<Value>,
}

impl ParamDoc {
    fn from_spec(p: &ParameterSpec) -> Self {
        let mut d = ParamDoc {
            name: p.name.clone(),
            kind: String::new(),
            lo: None,
            hi: None,
            scale: None,
            levels: None,
            weights: None,
            weight_true: None,
            speed: p.speed,
        };
        match &p.kind {
            ParamKind::Continuous { lo, hi, scale } => {
                d.kind = "continuous".into();
                d.lo = serde_json::Number::from_f64(*lo);
                d.hi = serde_json::Number::from_f64(*hi);
                d.scale = Some(*scale);
            }
            ParamKind::Integer { lo, hi } => {
                d.kind = "integer".into();
                d.lo = Some((*lo).into());
                d.hi = Some((*hi).into());
            }
            ParamKind::Categorical { levels, weights } => {
                d.kind = "categorical".into();
                d.levels = Some(levels.clone());
                d.weights = Some(weights.clone());
            }
            ParamKind::Boolean { weight_true } => {
                d.kind = "boolean".into();
                d.weight_true = Some(*weight_true);
            }
        }
        d
    }

    fn to_spec(&self) -> Result<ParameterSpec> {
        let bad = |reason: &str| Error::InvalidParam { param: self.name.clone(), reason: reason.to_string() };
        let unexpected = |field: &str, present: bool| -> Result<()> {
            if present {
                Err(bad(&format!("`{field}` does not apply to kind `{}`", self.kind)))
            } else {
                Ok(())
            }
        };
        let kind = match self.kind.as_str() {
            "continuous" => {
                unexpected("levels", self.levels.is_some())?;
                unexpected("weights", self.weights.is_some())?;
                unexpected("weight_true", self.weight_true.is_some())?;
                let lo = self.lo.as_ref().and_then(|n| n.as_f64()).ok_or_else(|| bad("missing `lo`"))?;
                let hi = self.hi.as_ref().and_then(|n| n.as_f64()).ok_or_else(|| bad("missing `hi`"))?;
                ParamKind::Continuous { lo, hi, scale: self.scale.unwrap_or(Scale::Linear) }
            }
            "integer" => {
                unexpected("levels", self.levels.is_some())?;
                unexpected("weights", self.weights.is_some())?;
                unexpected("weight_true", self.weight_true.is_some())?;
                unexpected("scale", self.scale.is_some())?;
                let lo = self.lo.as_ref().and_then(|n| n.as_i64()).ok_or_else(|| bad("`lo` must be an integer"))?;
                let hi = self.hi.as_ref().and_then(|n| n.as_i64()).ok_or_else(|| bad("`hi` must be an integer"))?;
                ParamKind::Integer { lo, hi }
            }
            "categorical" => {
                unexpected("lo", self.lo.is_some())?;
                unexpected("hi", self.hi.is_some())?;
                unexpected("scale", self.scale.is_some())?;
                unexpected("weight_true", self.weight_true.is_some())?;
                let levels = self.levels.clone().ok_or_else(|| bad("missing `levels`"))?;
                let n = levels.len().max(1);
                let weights = self.weights.clone().unwrap_or_else(|| vec![1.0 / n as f64; levels.len()]);
                ParamKind::Categorical { levels, weights }
            }
            "boolean" => {
                unexpected("lo", self.lo.is_some())?;
                unexpected("hi", self.hi.is_some())?;
                unexpected("scale", self.scale.is_some())?;
                unexpected("levels", self.levels.is_some())?;
                unexpected("weights", self.weights.is_some())?;
                ParamKind::Boolean { weight_true: self.weight_true.unwrap_or(0.5) }
            }
            other => return Err(bad(&format!("unknown kind `{other}`"))),
        };
        Ok(ParameterSpec { name: self.name.clone(), kind, speed: self.speed })
    }
}

impl SpaceDoc {
    pub fn to_space(&self) -> Result<SearchSpace> {
        let params = self.params.iter().map(ParamDoc::to_spec).collect::<Result<Vec<_>>>()?;
        let rules = self
            .rules
            .iter()
            .map(|r| ConditionalRule { child: r.child.clone(), parent: r.parent.clone(), activating: r.when.clone() })
            .collect();
        SearchSpace::new(params, rules)
    }
}

/// Parse a JSON space document.
pub fn parse_space(text: &str) -> Result<SearchSpace> {
    let doc: SpaceDoc = serde_json::from_str(text)
        .map_err(|e| Error::Syntax { line: e.line(), column: e.column(), message: e.to_string() })?;
    doc.to_space()
}

pub fn sample_configuration<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Configuration {
    space.sample(rng)
}

/// Rank-transformed trial matrix. Column `j` holds parameter `names[j]`;
/// `active[j][r]` is false where the parameter is absent from row `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub active: Vec<Vec<bool>>,
    pub row_keys: Vec<u64>,
}

impl NormalizedMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<(&[f64], &[bool])> {
        self.column_index(name).map(|j| (self.columns[j].as_slice(), self.active[j].as_slice()))
    }

    /// Append a synthetic parameter that is independent of everything else.
    pub fn push_dummy(&mut self, name: &str, seed: u64) {
        let col = self.row_keys.iter().map(|k| rng::unit_from_key(rng::derive_named(seed, name, &[*k]))).collect();
        self.names.push(name.to_string());
        self.columns.push(col);
        self.active.push(vec![true; self.row_keys.len()]);
    }
}

/// Rank-transform configurations keyed by a stable row id (the trial index).
/// Discrete draws use a sub-stream of `seed` keyed by parameter name and row
/// id, so a row's ranks never depend on which other rows are present.
pub fn normalize_configs<'a, I>(space: &SearchSpace, rows: I, seed: u64) -> Result<NormalizedMatrix>
where
    I: IntoIterator<Item = (u64, &'a Configuration)>,
{
    let rows: Vec<(u64, &Configuration)> = rows.into_iter().collect();
    let n = rows.len();
    let mut columns = vec![vec![0.0; n]; space.params.len()];
    let mut active = vec![vec![false; n]; space.params.len()];
    for (r, (key, config)) in rows.iter().enumerate() {
        let config = space.validate(config)?;
        for (j, p) in space.params.iter().enumerate() {
            if let Some(v) = config.get(&p.name) {
                let mut s = rng::stream(rng::derive_named(seed, &p.name, &[*key]));
                columns[j][r] = cdf_transform(p, v, &mut s)?;
                active[j][r] = true;
            }
        }
    }
    Ok(NormalizedMatrix {
        names: space.params.iter().map(|p| p.name.clone()).collect(),
        columns,
        active,
        row_keys: rows.iter().map(|(k, _)| *k).collect(),
    })
}

pub fn normalize_trials(space: &SearchSpace, trials: &[Trial], seed: u64) -> Result<NormalizedMatrix> {
    normalize_configs(space, trials.iter().map(|t| (t.index, &t.config)), seed)
}

/// Selects the rows a group is analysed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupFilter {
    All,
    ParentIn { parent: String, values: Vec<Value> },
    /// Rows where an ordered parameter is strictly above a threshold.
    Above { param: String, threshold: f64 },
}

impl GroupFilter {
    pub fn admits(&self, config: &Configuration) -> bool {
        match self {
            GroupFilter::All => true,
            GroupFilter::ParentIn { parent, values } => config.get(parent).is_some_and(|v| values.contains(v)),
            GroupFilter::Above { param, threshold } => config.f64(param).is_some_and(|x| x > *threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub id: String,
    pub members: Vec<String>,
    pub filter: GroupFilter,
}

impl GroupSpec {
    pub fn row_mask(&self, trials: &[Trial]) -> Vec<bool> {
        trials.iter().map(|t| self.filter.admits(&t.config)).collect()
    }
}

/// The main group of unconditional parameters plus one group per conditioning
/// key (parent and activating set). A conditional group holds every main
/// parameter and the children sharing that key.
pub fn build_groups(space: &SearchSpace) -> Vec<GroupSpec> {
    let main: Vec<String> = space.main_params().map(|p| p.name.clone()).collect();
    let mut groups = vec![GroupSpec { id: "main".into(), members: main.clone(), filter: GroupFilter::All }];
    let mut keys: Vec<(String, Vec<Value>, Vec<String>)> = Vec::new();
    for r in space.rules() {
        let mut act = r.activating.clone();
        let parent = space.param(&r.parent).expect("validated");
        act.sort_by_key(|v| parent.level_index(v).unwrap_or(usize::MAX));
        match keys.iter_mut().find(|(p, a, _)| *p == r.parent && *a == act) {
            Some((_, _, children)) => children.push(r.child.clone()),
            None => keys.push((r.parent.clone(), act, vec![r.child.clone()])),
        }
    }
    for (parent, values, children) in keys {
        let mut members = main.clone();
        members.extend(children.iter().cloned());
        groups.push(GroupSpec {
            id: children.join("+"),
            members,
            filter: GroupFilter::ParentIn { parent, values },
        });
    }
    groups
}

/// Narrowed domain for `restrict`.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Range { lo: f64, hi: f64 },
    IntRange { lo: i64, hi: i64 },
    Levels(Vec<Value>),
}

/// Copy of the space with one parameter's domain narrowed. Categorical
/// weights are renormalized over the kept levels.
pub fn restrict(space: &SearchSpace, param: &str, domain: &Domain) -> Result<SearchSpace> {
    let idx = space
        .index_of(param)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{param}`")))?;
    let old = &space.params[idx];
    let bad = |reason: &str| Error::InvalidArgument(format!("cannot restrict `{param}`: {reason}"));
    let kind = match (&old.kind, domain) {
        (ParamKind::Continuous { lo, hi, scale }, Domain::Range { lo: a, hi: b }) => {
            if a < lo || b > hi || a >= b {
                return Err(bad("range must be a non-empty subset of the current one"));
            }
            ParamKind::Continuous { lo: *a, hi: *b, scale: *scale }
        }
        (ParamKind::Integer { lo, hi }, Domain::IntRange { lo: a, hi: b }) => {
            if a < lo || b > hi || a >= b {
                return Err(bad("range must hold at least two levels of the current one"));
            }
            ParamKind::Integer { lo: *a, hi: *b }
        }
        (ParamKind::Categorical { levels, weights }, Domain::Levels(keep)) => {
            let mut nl = Vec::new();
            let mut nw = Vec::new();
            for (l, w) in levels.iter().zip(weights) {
                if keep.contains(&Value::Str(l.clone())) {
                    nl.push(l.clone());
                    nw.push(*w);
                }
            }
            if nl.len() != keep.len() || nl.is_empty() {
                return Err(bad("levels must be a non-empty subset of the current ones"));
            }
            let total: f64 = nw.iter().sum();
            if total <= 0.0 {
                return Err(bad("kept levels have zero prior weight"));
            }
            ParamKind::Categorical { levels: nl, weights: nw.iter().map(|w| w / total).collect() }
        }
        (ParamKind::Boolean { weight_true }, Domain::Levels(keep)) => match keep.as_slice() {
            [Value::Bool(true)] => ParamKind::Boolean { weight_true: 1.0 },
            [Value::Bool(false)] => ParamKind::Boolean { weight_true: 0.0 },
            [_, _] => ParamKind::Boolean { weight_true: *weight_true },
            _ => return Err(bad("boolean levels must be true and/or false")),
        },
        _ => return Err(bad("domain kind does not match the parameter kind")),
    };
    let mut params = space.params.clone();
    params[idx] = ParameterSpec { name: old.name.clone(), kind, speed: old.speed };
    let mut rules = space.rules.clone();
    for r in rules.iter_mut().filter(|r| r.parent == param) {
        let p = &params[idx];
        r.activating.retain(|v| p.contains(v) && prior_of(p, v) > 0.0);
        if r.activating.is_empty() {
            return Err(bad(&format!("restriction would never activate `{}`", r.child)));
        }
    }
    SearchSpace::new(params, rules)
}

fn prior_of(p: &ParameterSpec, v: &Value) -> f64 {
    match (p.level_index(v), p.level_weights()) {
        (Ok(i), Some(w)) => w[i],
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MLP_SPACE: &str = r#"{
        "params": [
            {"name": "n_layers", "kind": "integer", "lo": 1, "hi": 10, "speed": "minimize"},
            {"name": "activation", "kind": "categorical", "levels": ["elu", "relu", "tanh", "sigmoid"]},
            {"name": "learning_rate", "kind": "continuous", "lo": 1e-6, "hi": 1e-2, "scale": "log"},
            {"name": "dropout", "kind": "boolean"},
            {"name": "dropout_rate", "kind": "continuous", "lo": 0, "hi": 1}
        ],
        "rules": [{"child": "dropout_rate", "parent": "dropout", "when": [true]}]
    }"#;

    #[test]
    fn parses_a_conditional_space() {
        let s = parse_space(MLP_SPACE).unwrap();
        assert_eq!(s.params().len(), 5);
        assert_eq!(s.rules()[0].activating, vec![Value::Bool(true)]);
        assert_eq!(s.param("n_layers").unwrap().speed, Some(SpeedDirection::Minimize));
        let again = parse_space(&s.to_json()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.hash(), s.hash());
    }

    #[test]
    fn syntax_errors_carry_a_location() {
        let err = parse_space("{\n  \"params\": [,]\n}").unwrap_err();
        match err {
            Error::Syntax { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_space(r#"{"params": [{"name": "a", "kind": "boolean", "colour": 1}]}"#).unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }), "{err}");
    }

    #[test]
    fn two_level_conditioning_is_rejected() {
        let text = r#"{
            "params": [
                {"name": "a", "kind": "boolean"},
                {"name": "b", "kind": "boolean"},
                {"name": "c", "kind": "continuous", "lo": 0, "hi": 1}
            ],
            "rules": [
                {"child": "b", "parent": "a", "when": [true]},
                {"child": "c", "parent": "b", "when": [true]}
            ]
        }"#;
        let err = parse_space(text).unwrap_err();
        assert!(err.to_string().contains("two-level conditioning"), "{err}");
    }

    #[test]
    fn inverted_bounds_are_rejected() {
        let err = parse_space(r#"{"params": [{"name": "x", "kind": "continuous", "lo": 2, "hi": 1}]}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidParam { .. }));
    }

    #[test]
    fn continuous_rank_is_the_cdf() {
        let p = ParameterSpec::continuous("x", 0.0, 2.0);
        let mut r = rng::stream(0);
        assert_eq!(cdf_transform(&p, &Value::Float(0.5), &mut r).unwrap(), 0.25);
        let lp = ParameterSpec::log_continuous("lr", 1e-6, 1e-2);
        let u = cdf_transform(&lp, &Value::Float(1e-4), &mut r).unwrap();
        assert!((u - 0.5).abs() < 1e-12);
        let top = cdf_transform(&p, &Value::Float(2.0), &mut r).unwrap();
        assert!(top < 1.0);
    }

    #[test]
    fn categorical_rank_falls_in_its_interval() {
        let p = ParameterSpec::categorical("act", &["elu", "relu", "tanh", "sigmoid"]);
        let mut r = rng::stream(3);
        for _ in 0..1000 {
            let u = cdf_transform(&p, &Value::Str("relu".into()), &mut r).unwrap();
            assert!((0.25..0.5).contains(&u));
        }
    }

    #[test]
    fn out_of_domain_values_are_errors() {
        let p = ParameterSpec::integer("n", 1, 10);
        let mut r = rng::stream(0);
        assert!(cdf_transform(&p, &Value::Int(11), &mut r).is_err());
        let c = ParameterSpec::categorical("act", &["elu"]);
        assert!(cdf_transform(&c, &Value::Str("swish".into()), &mut r).is_err());
    }

    #[test]
    fn children_follow_their_parent() {
        let s = parse_space(MLP_SPACE).unwrap();
        let mut r = rng::stream(11);
        for _ in 0..500 {
            let c = s.sample(&mut r);
            assert_eq!(c.get("dropout_rate").is_some(), c.bool("dropout") == Some(true));
            s.validate(&c).unwrap();
        }
    }

    #[test]
    fn groups_for_a_dropout_space() {
        let s = parse_space(MLP_SPACE).unwrap();
        let g = build_groups(&s);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].members.len(), 4);
        assert!(!g[0].members.contains(&"dropout_rate".to_string()));
        assert_eq!(g[1].id, "dropout_rate");
        assert!(g[1].members.contains(&"dropout_rate".to_string()));
        assert!(g[1].members.contains(&"dropout".to_string()));
    }

    #[test]
    fn children_sharing_a_key_share_a_group() {
        let text = r#"{
            "params": [
                {"name": "optimizer", "kind": "categorical", "levels": ["sgd", "adam", "nadam"]},
                {"name": "beta1", "kind": "continuous", "lo": 0.8, "hi": 0.99},
                {"name": "beta2", "kind": "continuous", "lo": 0.9, "hi": 0.9999},
                {"name": "momentum", "kind": "continuous", "lo": 0, "hi": 0.99}
            ],
            "rules": [
                {"child": "beta1", "parent": "optimizer", "when": ["adam", "nadam"]},
                {"child": "beta2", "parent": "optimizer", "when": ["nadam", "adam"]},
                {"child": "momentum", "parent": "optimizer", "when": ["sgd"]}
            ]
        }"#;
        let g = build_groups(&parse_space(text).unwrap());
        assert_eq!(g.len(), 3);
        assert_eq!(g[1].id, "beta1+beta2");
        assert_eq!(g[2].id, "momentum");
    }

    #[test]
    fn restrict_narrows_and_renormalizes() {
        let s = parse_space(MLP_SPACE).unwrap();
        let r = restrict(&s, "n_layers", &Domain::IntRange { lo: 3, hi: 10 }).unwrap();
        assert_eq!(r.param("n_layers").unwrap().kind, ParamKind::Integer { lo: 3, hi: 10 });
        let same = restrict(&s, "n_layers", &Domain::IntRange { lo: 1, hi: 10 }).unwrap();
        assert_eq!(same, s);
        let c = restrict(&s, "activation", &Domain::Levels(vec![Value::Str("elu".into()), Value::Str("tanh".into())])).unwrap();
        assert_eq!(
            c.param("activation").unwrap().kind,
            ParamKind::Categorical { levels: vec!["elu".into(), "tanh".into()], weights: vec![0.5, 0.5] }
        );
        assert!(restrict(&s, "n_layers", &Domain::IntRange { lo: 0, hi: 10 }).is_err());
    }
}
