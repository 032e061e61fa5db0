//! Goal sets, per-group rankings against a synthetic noise floor, pairwise
//! interactions, level histograms and interval reduction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsic::{hsic_goal, hsic_pair, HsicOptions, HsicScore};
use crate::rng;
use crate::space::{build_groups, cdf_transform, normalize_trials, restrict, Domain, GroupSpec, NormalizedMatrix, ParamKind, SearchSpace, Value};
use crate::trial::Trial;

/// Percentile goals need at least this many successful trials.
pub const MIN_OK_TRIALS: usize = 10;

pub const DUMMY_A: &str = "__dummy_a";
pub const DUMMY_B: &str = "__dummy_b";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalSet {
    /// The fraction `p` of successful trials with the lowest error.
    BestPercentile { p: f64 },
    /// The fraction `p` of all trials with the highest error; diverged and
    /// failed trials count as worst.
    WorstPercentile { p: f64 },
    /// Successful trials with error at most `bound` (or, with `below` false,
    /// trials with error at least `bound` plus every non-ok trial).
    Threshold { bound: f64, below: bool },
}

/// Boolean goal flag per trial.
///
/// Percentile cuts that fall inside a run of equal errors leave the whole
/// run unflagged, since membership there is arbitrary. With all errors equal
/// the goal set is therefore empty and an error is returned.
pub fn make_goal_flags(trials: &[Trial], goal: &GoalSet) -> Result<Vec<bool>> {
    let n_ok = trials.iter().filter(|t| t.is_ok()).count();
    if n_ok < MIN_OK_TRIALS {
        return Err(Error::TooFewTrials { got: n_ok, need: MIN_OK_TRIALS });
    }
    let mut flags = vec![false; trials.len()];
    match goal {
        GoalSet::BestPercentile { p } => {
            let k = percentile_count(*p, n_ok)?;
            let mut ok: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].is_ok()).collect();
            ok.sort_by(|&a, &b| score(trials, a).total_cmp(&score(trials, b)).then(trials[a].index.cmp(&trials[b].index)));
            let edge = ok.get(k).map(|&i| score(trials, i));
            for &i in &ok[..k] {
                flags[i] = edge != Some(score(trials, i));
            }
        }
        GoalSet::WorstPercentile { p } => {
            let k = percentile_count(*p, trials.len())?;
            let mut order: Vec<usize> = (0..trials.len()).filter(|&i| !trials[i].is_ok()).collect();
            order.sort_by_key(|&i| trials[i].index);
            let n_bad = order.len();
            let mut ok: Vec<usize> = (0..trials.len()).filter(|&i| trials[i].is_ok()).collect();
            ok.sort_by(|&a, &b| score(trials, b).total_cmp(&score(trials, a)).then(trials[a].index.cmp(&trials[b].index)));
            order.extend(ok);
            let edge = order.get(k).filter(|_| k >= n_bad).map(|&i| score(trials, i));
            for (pos, &i) in order[..k].iter().enumerate() {
                flags[i] = pos < n_bad || edge != Some(score(trials, i));
            }
        }
        GoalSet::Threshold { bound, below } => {
            if !bound.is_finite() {
                return Err(Error::InvalidArgument("threshold must be finite".into()));
            }
            for (f, t) in flags.iter_mut().zip(trials) {
                *f = match (t.score, below) {
                    (Some(s), true) => s <= *bound,
                    (Some(s), false) => s >= *bound,
                    (None, true) => false,
                    (None, false) => true,
                };
            }
        }
    }
    let m = flags.iter().filter(|f| **f).count();
    if m == 0 {
        return Err(Error::GoalTooSmall { got: 0, need: 1 });
    }
    Ok(flags)
}

fn score(trials: &[Trial], i: usize) -> f64 {
    trials[i].score.unwrap_or(f64::INFINITY)
}

fn percentile_count(p: f64, n: usize) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside (0, 1]")));
    }
    Ok(((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub hsic: HsicOptions,
    /// Standard errors above the noise floor needed to call a score impactful.
    pub sigmas: f64,
    pub interactions: bool,
    /// Scan every pair instead of only pairs of non-impactful parameters.
    pub full_interactions: bool,
    pub hist_bins: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { hsic: HsicOptions::default(), sigmas: 2.0, interactions: true, full_interactions: false, hist_bins: 20 }
    }
}

pub fn boot_seed(seed: u64, key: &str) -> u64 {
    rng::derive_named(seed, key, &[0xB007])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedParam {
    pub param: String,
    pub score: HsicScore,
    pub impactful: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRanking {
    pub group: GroupSpec,
    pub n_rows: usize,
    pub n_goal: usize,
    /// Sorted by decreasing score.
    pub ranking: Vec<RankedParam>,
    pub noise_floor: Option<HsicScore>,
}

impl GroupRanking {
    pub fn get(&self, param: &str) -> Option<&RankedParam> {
        self.ranking.iter().find(|r| r.param == param)
    }
}

fn and_masks(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x && *y).collect()
}

/// Score every member of `group` on the group's rows. When the matrix
/// carries the synthetic `DUMMY_A` column, its score becomes the noise floor
/// and members are classified against it.
pub fn rank_group(
    group: &GroupSpec,
    trials: &[Trial],
    matrix: &NormalizedMatrix,
    z: &[bool],
    seed: u64,
    opts: &AnalysisOptions,
) -> Result<GroupRanking> {
    if trials.len() != matrix.n_rows() || z.len() != matrix.n_rows() {
        return Err(Error::DimensionMismatch { expected: matrix.n_rows(), got: trials.len().min(z.len()) });
    }
    let rows = group.row_mask(trials);
    let n_rows = rows.iter().filter(|r| **r).count();
    let n_goal = rows.iter().zip(z).filter(|(r, z)| **r && **z).count();
    let score_of = |name: &str| -> Result<HsicScore> {
        let (col, act) = matrix
            .column(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column `{name}` in the matrix")))?;
        hsic_goal(col, z, Some(&and_masks(&rows, act)), &opts.hsic.with_seed(boot_seed(seed, name)))
    };
    let noise_floor = if matrix.column_index(DUMMY_A).is_some() { Some(score_of(DUMMY_A)?) } else { None };
    let scores = group.members.par_iter().map(|m| score_of(m)).collect::<Result<Vec<_>>>()?;
    let mut ranking: Vec<RankedParam> = group
        .members
        .iter()
        .zip(scores)
        .map(|(p, s)| RankedParam {
            param: p.clone(),
            impactful: noise_floor.as_ref().map(|f| s.exceeds(f, opts.sigmas)),
            score: s,
        })
        .collect();
    ranking.sort_by(|a, b| b.score.value.total_cmp(&a.score.value).then(a.param.cmp(&b.param)));
    Ok(GroupRanking { group: group.clone(), n_rows, n_goal, ranking, noise_floor })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub params: Vec<String>,
    /// Symmetric; the diagonal holds one-dimensional scores.
    pub scores: Vec<Vec<HsicScore>>,
    pub pair_floor: Option<HsicScore>,
    pub flagged: Vec<(String, String)>,
}

impl InteractionMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<&HsicScore> {
        let i = self.params.iter().position(|p| p == a)?;
        let j = self.params.iter().position(|p| p == b)?;
        Some(&self.scores[i][j])
    }
}

/// Pairwise scores of `params` on the rows selected by `rows` (jointly
/// active rows only). With both dummy columns present, pairs are flagged
/// against the dummy pair's score.
pub fn interaction_matrix(
    params: &[String],
    matrix: &NormalizedMatrix,
    rows: &[bool],
    z: &[bool],
    seed: u64,
    opts: &AnalysisOptions,
) -> Result<InteractionMatrix> {
    let col = |name: &str| {
        matrix.column(name).ok_or_else(|| Error::InvalidArgument(format!("no column `{name}` in the matrix")))
    };
    let pair = |a: &str, b: &str| -> Result<HsicScore> {
        let (ca, ma) = col(a)?;
        let (cb, mb) = col(b)?;
        let mask = and_masks(&and_masks(rows, ma), mb);
        let key = format!("{a}|{b}");
        if a == b {
            hsic_goal(ca, z, Some(&mask), &opts.hsic.with_seed(boot_seed(seed, a)))
        } else {
            hsic_pair(ca, cb, z, Some(&mask), &opts.hsic.with_seed(boot_seed(seed, &key)))
        }
    };
    let k = params.len();
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let computed = cells.par_iter().map(|&(i, j)| pair(&params[i], &params[j])).collect::<Result<Vec<_>>>()?;
    let mut scores: Vec<Vec<Option<HsicScore>>> = vec![vec![None; k]; k];
    for (&(i, j), s) in cells.iter().zip(computed) {
        scores[j][i] = Some(s.clone());
        scores[i][j] = Some(s);
    }
    let scores: Vec<Vec<HsicScore>> = scores.into_iter().map(|r| r.into_iter().map(|s| s.expect("filled")).collect()).collect();
    let pair_floor = if matrix.column_index(DUMMY_A).is_some() && matrix.column_index(DUMMY_B).is_some() {
        Some(pair(DUMMY_A, DUMMY_B)?)
    } else {
        None
    };
    let mut flagged = Vec::new();
    if let Some(f) = &pair_floor {
        for i in 0..k {
            for j in i + 1..k {
                if scores[i][j].exceeds(f, opts.sigmas) {
                    flagged.push((params[i].clone(), params[j].clone()));
                }
            }
        }
    }
    Ok(InteractionMatrix { params: params.to_vec(), scores, pair_floor, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count_all: usize,
    pub count_goal: usize,
}

/// Counts of all and goal rows per bin of the rank scale. Discrete
/// parameters get one bin per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub param: String,
    pub bins: Vec<HistBin>,
}

pub fn histogram(space: &SearchSpace, param: &str, matrix: &NormalizedMatrix, z: &[bool], n_bins: usize) -> Result<Histogram> {
    let spec = space.param(param).ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{param}`")))?;
    let (col, act) = matrix.column(param).ok_or_else(|| Error::InvalidArgument(format!("no column `{param}`")))?;
    let edges: Vec<f64> = match spec.level_weights() {
        Some(w) => std::iter::once(0.0)
            .chain(w.iter().scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            }))
            .collect(),
        None => (0..=n_bins.max(1)).map(|i| i as f64 / n_bins.max(1) as f64).collect(),
    };
    let mut bins: Vec<HistBin> = edges.windows(2).map(|e| HistBin { lo: e[0], hi: e[1], count_all: 0, count_goal: 0 }).collect();
    for ((u, a), g) in col.iter().zip(act).zip(z) {
        if !*a {
            continue;
        }
        let b = bins.iter().position(|b| *u < b.hi).unwrap_or(bins.len() - 1);
        bins[b].count_all += 1;
        if *g {
            bins[b].count_goal += 1;
        }
    }
    Ok(Histogram { param: param.to_string(), bins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub goal: GoalSet,
    pub seed: u64,
    pub n_trials: usize,
    pub n_goal: usize,
    pub groups: Vec<GroupRanking>,
    /// Groups left out because too few of their rows were in the goal set.
    pub skipped_groups: Vec<String>,
    pub interactions: Option<InteractionMatrix>,
    pub histograms: Vec<Histogram>,
}

impl SensitivityReport {
    pub fn main(&self) -> &GroupRanking {
        &self.groups[0]
    }

    pub fn noise_floor(&self) -> &HsicScore {
        self.groups[0].noise_floor.as_ref().expect("analysis always injects a dummy")
    }

    pub fn group(&self, id: &str) -> Option<&GroupRanking> {
        self.groups.iter().find(|g| g.group.id == id)
    }

    /// Whether `param` is impactful in any group that contains it.
    pub fn is_impactful(&self, param: &str) -> bool {
        self.groups.iter().filter_map(|g| g.get(param)).any(|r| r.impactful == Some(true))
    }
}

/// Full analysis: goal flags, rank transform, per-group rankings with a
/// noise floor, interaction scan on the main group, and histograms.
pub fn run_algorithm1(space: &SearchSpace, trials: &[Trial], goal: &GoalSet, seed: u64, opts: &AnalysisOptions) -> Result<SensitivityReport> {
    let z = make_goal_flags(trials, goal)?;
    let mut matrix = normalize_trials(space, trials, seed)?;
    let dummy_seed = rng::derive_named(seed, "dummy", &[]);
    matrix.push_dummy(DUMMY_A, dummy_seed);
    matrix.push_dummy(DUMMY_B, dummy_seed);
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    for g in build_groups(space) {
        match rank_group(&g, trials, &matrix, &z, seed, opts) {
            Ok(r) => groups.push(r),
            Err(e @ (Error::GoalTooSmall { .. } | Error::TooFewTrials { .. })) if g.id != "main" => {
                log::warn!("skipping group `{}`: {e}", g.id);
                skipped.push(g.id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    let interactions = if opts.interactions {
        let main = &groups[0];
        let params: Vec<String> = main
            .group
            .members
            .iter()
            .filter(|p| opts.full_interactions || main.get(p).and_then(|r| r.impactful) != Some(true))
            .cloned()
            .collect();
        if params.len() >= 2 {
            let rows = vec![true; trials.len()];
            Some(interaction_matrix(&params, &matrix, &rows, &z, seed, opts)?)
        } else {
            None
        }
    } else {
        None
    };
    let histograms = space
        .params()
        .iter()
        .map(|p| histogram(space, &p.name, &matrix, &z, opts.hist_bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport {
        goal: goal.clone(),
        seed,
        n_trials: trials.len(),
        n_goal: z.iter().filter(|b| **b).count(),
        groups,
        skipped_groups: skipped,
        interactions,
        histograms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: Value,
    pub prior: f64,
    pub count_all: usize,
    pub count_worst: usize,
    pub count_best: usize,
    pub worst_share: f64,
    pub best_share: f64,
    pub flagged: bool,
}

/// Levels over-represented among the worst trials and under-represented
/// among the best ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub param: String,
    pub factor: f64,
    pub levels: Vec<LevelRow>,
}

impl LevelReport {
    pub fn flagged(&self) -> Vec<&Value> {
        self.levels.iter().filter(|l| l.flagged).map(|l| &l.level).collect()
    }
}

pub fn worst_level_report(space: &SearchSpace, param: &str, trials: &[Trial], p: f64, factor: f64) -> Result<LevelReport> {
    let worst = make_goal_flags(trials, &GoalSet::WorstPercentile { p })?;
    let best = make_goal_flags(trials, &GoalSet::BestPercentile { p })?;
    level_report_from_flags(space, param, trials, &worst, &best, factor)
}

pub fn level_report_from_flags(
    space: &SearchSpace,
    param: &str,
    trials: &[Trial],
    worst: &[bool],
    best: &[bool],
    factor: f64,
) -> Result<LevelReport> {
    let spec = space.param(param).ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{param}`")))?;
    let weights = spec
        .level_weights()
        .ok_or_else(|| Error::InvalidArgument(format!("`{param}` is continuous; level reports need discrete levels")))?;
    let mut rows: Vec<LevelRow> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| LevelRow {
            level: spec.level_value(i).expect("level"),
            prior: *w,
            count_all: 0,
            count_worst: 0,
            count_best: 0,
            worst_share: 0.0,
            best_share: 0.0,
            flagged: false,
        })
        .collect();
    for ((t, w), b) in trials.iter().zip(worst).zip(best) {
        if let Some(v) = t.config.get(param) {
            let i = spec.level_index(v)?;
            rows[i].count_all += 1;
            rows[i].count_worst += usize::from(*w);
            rows[i].count_best += usize::from(*b);
        }
    }
    let nw: usize = rows.iter().map(|r| r.count_worst).sum();
    let nb: usize = rows.iter().map(|r| r.count_best).sum();
    for r in &mut rows {
        r.worst_share = if nw > 0 { r.count_worst as f64 / nw as f64 } else { 0.0 };
        r.best_share = if nb > 0 { r.count_best as f64 / nb as f64 } else { 0.0 };
        r.flagged = nw > 0 && r.worst_share > factor * r.prior && r.best_share < r.prior;
    }
    Ok(LevelReport { param: param.to_string(), factor, levels: rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionOptions {
    pub hsic: HsicOptions,
    pub min_goal: usize,
    /// Number of equal cuts of a continuous range.
    pub steps: usize,
    pub sigmas: f64,
    /// Cut from the top of the range instead of the bottom.
    pub from_top: bool,
}

impl Default for ReductionOptions {
    fn default() -> Self {
        ReductionOptions { hsic: HsicOptions::default(), min_goal: 10, steps: 10, sigmas: 2.0, from_top: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionPoint {
    pub offset: usize,
    /// Retained values satisfy `x >= bound` (or `x <= bound` from the top).
    pub bound: f64,
    pub score: HsicScore,
    pub n_retained: usize,
    pub n_goal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionCurve {
    pub param: String,
    pub from_top: bool,
    pub points: Vec<ReductionPoint>,
    /// Smallest offset whose score is back at the noise floor.
    pub cutoff: Option<usize>,
    pub noise_floor: HsicScore,
    /// The curve stopped because the retained goal set became too small.
    pub truncated: bool,
}

impl ReductionCurve {
    pub fn cutoff_point(&self) -> Option<&ReductionPoint> {
        self.cutoff.and_then(|c| self.points.iter().find(|p| p.offset == c))
    }
}

/// Score of `param` on nested sub-populations `x >= a + c`, re-taking the
/// goal set inside each one.
pub fn interval_reduction(
    space: &SearchSpace,
    param: &str,
    trials: &[Trial],
    goal: &GoalSet,
    noise_floor: &HsicScore,
    seed: u64,
    opts: &ReductionOptions,
) -> Result<ReductionCurve> {
    let spec = space.param(param).ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{param}`")))?;
    let (n_offsets, bound_at): (usize, Box<dyn Fn(usize) -> f64>) = match spec.kind {
        ParamKind::Integer { lo, hi } => {
            let n = (hi - lo) as usize;
            if opts.from_top {
                (n, Box::new(move |c| (hi - c as i64) as f64))
            } else {
                (n, Box::new(move |c| (lo + c as i64) as f64))
            }
        }
        ParamKind::Continuous { lo, hi, .. } => {
            let steps = opts.steps.max(1);
            let w = (hi - lo) / steps as f64;
            if opts.from_top {
                (steps, Box::new(move |c| hi - c as f64 * w))
            } else {
                (steps, Box::new(move |c| lo + c as f64 * w))
            }
        }
        _ => return Err(Error::InvalidArgument(format!("`{param}` has no ordered domain"))),
    };
    let mut points: Vec<ReductionPoint> = Vec::new();
    let mut truncated = false;
    let hopts = opts.hsic.with_seed(boot_seed(seed, param));
    for c in 0..n_offsets {
        let bound = bound_at(c);
        let keep = |x: f64| if opts.from_top { x <= bound } else { x >= bound };
        let sub: Vec<Trial> = trials
            .iter()
            .filter(|t| t.config.f64(param).is_some_and(keep))
            .cloned()
            .collect();
        if points.last().is_some_and(|p| p.n_retained == sub.len()) {
            continue;
        }
        let z = match make_goal_flags(&sub, goal) {
            Ok(z) => z,
            Err(Error::TooFewTrials { .. } | Error::GoalTooSmall { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let n_goal = z.iter().filter(|b| **b).count();
        if n_goal < opts.min_goal {
            truncated = true;
            break;
        }
        let sub_space = if c == 0 {
            space.clone()
        } else {
            let domain = match (&spec.kind, opts.from_top) {
                (ParamKind::Integer { lo, .. }, true) => Domain::IntRange { lo: *lo, hi: bound as i64 },
                (ParamKind::Integer { hi, .. }, false) => Domain::IntRange { lo: bound as i64, hi: *hi },
                (ParamKind::Continuous { lo, .. }, true) => Domain::Range { lo: *lo, hi: bound },
                (ParamKind::Continuous { hi, .. }, false) => Domain::Range { lo: bound, hi: *hi },
                _ => unreachable!("ordered"),
            };
            restrict(space, param, &domain)?
        };
        let rspec = sub_space.param(param).expect("kept");
        let col = sub
            .iter()
            .map(|t| {
                let mut s = rng::stream(rng::derive_named(seed, param, &[t.index]));
                cdf_transform(rspec, t.config.get(param).expect("filtered"), &mut s)
            })
            .collect::<Result<Vec<f64>>>()?;
        let score = hsic_goal(&col, &z, None, &hopts)?;
        points.push(ReductionPoint { offset: c, bound, score, n_retained: sub.len(), n_goal });
    }
    let cutoff = points
        .iter()
        .find(|p| p.score.value <= noise_floor.value + opts.sigmas * (p.score.std_error + noise_floor.std_error))
        .map(|p| p.offset);
    Ok(ReductionCurve { param: param.to_string(), from_top: opts.from_top, points, cutoff, noise_floor: noise_floor.clone(), truncated })
}

/// The group a parameter is ranked in: its conditional group if it is a
/// child, the main group otherwise.
pub fn home_group<'a>(space: &SearchSpace, report: &'a SensitivityReport, param: &str) -> Option<&'a GroupRanking> {
    if space.is_conditional(param) {
        report.groups.iter().find(|g| g.group.id != "main" && g.get(param).is_some())
    } else {
        Some(report.main())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Configuration, ParameterSpec};
    use crate::trial::TrialStatus;

    fn trial(i: u64, score: Option<f64>) -> Trial {
        let mut t = Trial::ok(i, Configuration::new(), score.unwrap_or(f64::NAN), i);
        t.normalize_status();
        t
    }

    fn scored(errs: &[f64]) -> Vec<Trial> {
        errs.iter().enumerate().map(|(i, e)| trial(i as u64, Some(*e))).collect()
    }

    #[test]
    fn best_percentile_flags_the_lowest() {
        let t = scored(&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]);
        let f = make_goal_flags(&t, &GoalSet::BestPercentile { p: 0.1 }).unwrap();
        assert_eq!(f, [true, false, false, false, false, false, false, false, false, false]);
        let f = make_goal_flags(&t, &GoalSet::BestPercentile { p: 0.7 }).unwrap();
        assert_eq!(f.iter().filter(|x| **x).count(), 7);
    }

    #[test]
    fn worst_percentile_counts_diverged_first() {
        let mut t = scored(&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]);
        t.push(trial(10, None));
        t.push(trial(11, None));
        assert_eq!(t[10].status, TrialStatus::Diverged);
        let f = make_goal_flags(&t, &GoalSet::WorstPercentile { p: 0.25 }).unwrap();
        let flagged: Vec<usize> = (0..12).filter(|&i| f[i]).collect();
        assert_eq!(flagged, [9, 10, 11]);
    }

    #[test]
    fn too_few_ok_trials() {
        let t = scored(&[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        assert!(matches!(make_goal_flags(&t, &GoalSet::BestPercentile { p: 0.5 }), Err(Error::TooFewTrials { .. })));
    }

    #[test]
    fn ties_at_the_cut_stay_out() {
        let t = scored(&[0.5; 20]);
        assert!(matches!(make_goal_flags(&t, &GoalSet::BestPercentile { p: 0.1 }), Err(Error::GoalTooSmall { .. })));
        let t = scored(&[1., 2., 2., 2., 5., 6., 7., 8., 9., 10.]);
        let f = make_goal_flags(&t, &GoalSet::BestPercentile { p: 0.2 }).unwrap();
        assert_eq!(f.iter().filter(|x| **x).count(), 1);
    }

    #[test]
    fn flags_depend_only_on_order() {
        let errs: Vec<f64> = (0..40).map(|i| ((i * 17) % 40) as f64 / 7.0).collect();
        let a = scored(&errs);
        let b = scored(&errs.iter().map(|e| (3.0 * e).exp()).collect::<Vec<_>>());
        for g in [GoalSet::BestPercentile { p: 0.1 }, GoalSet::WorstPercentile { p: 0.3 }] {
            assert_eq!(make_goal_flags(&a, &g).unwrap(), make_goal_flags(&b, &g).unwrap());
        }
    }

    #[test]
    fn equal_flag_vectors_never_flag_a_level() {
        let space = SearchSpace::new(vec![ParameterSpec::categorical("opt", &["a", "b", "c", "d"])], vec![]).unwrap();
        let trials: Vec<Trial> = (0..40)
            .map(|i| {
                let mut c = Configuration::new();
                c.insert("opt", Value::Str(["a", "a", "a", "b"][i % 4].into()));
                Trial::ok(i as u64, c, 1.0, 0)
            })
            .collect();
        let flags: Vec<bool> = (0..40).map(|i| i % 4 != 3).collect();
        let r = level_report_from_flags(&space, "opt", &trials, &flags, &flags, 2.0).unwrap();
        assert!(r.flagged().is_empty());
    }
}
