//! Report bundle: plain CSV tables for plotting plus a JSON summary.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{GroupRanking, Histogram, InteractionMatrix, LevelReport, ReductionCurve, SensitivityReport, DUMMY_A};
use crate::error::Result;
use crate::two_step::TwoStepResult;

/// File-name-safe form of a parameter or group id.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '+' | '.') { c } else { '_' }).collect()
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(dir.join(name))?))
}

pub fn write_ranking(dir: &Path, g: &GroupRanking) -> Result<PathBuf> {
    let name = format!("ranking_{}.csv", file_stem(&g.group.id));
    let mut w = writer(dir, &name)?;
    w.write_record(["param", "hsic", "se", "n", "m", "impactful"])?;
    for r in &g.ranking {
        let imp = r.impactful.map_or(String::new(), |b| b.to_string());
        w.write_record([
            r.param.clone(),
            r.score.value.to_string(),
            r.score.std_error.to_string(),
            r.score.n_total.to_string(),
            r.score.n_goal.to_string(),
            imp,
        ])?;
    }
    if let Some(f) = &g.noise_floor {
        w.write_record([
            DUMMY_A.to_string(),
            f.value.to_string(),
            f.std_error.to_string(),
            f.n_total.to_string(),
            f.n_goal.to_string(),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(dir.join(name))
}

pub fn write_interactions(dir: &Path, m: &InteractionMatrix) -> Result<PathBuf> {
    let mut w = writer(dir, "interactions.csv")?;
    w.write_record(["i", "j", "hsic", "se", "flagged"])?;
    for (a, pa) in m.params.iter().enumerate() {
        for (b, pb) in m.params.iter().enumerate().skip(a) {
            let s = &m.scores[a][b];
            let flagged = m.flagged.iter().any(|(x, y)| (x == pa && y == pb) || (x == pb && y == pa));
            w.write_record([pa.clone(), pb.clone(), s.value.to_string(), s.std_error.to_string(), flagged.to_string()])?;
        }
    }
    w.flush()?;
    Ok(dir.join("interactions.csv"))
}

pub fn write_reduction(dir: &Path, c: &ReductionCurve) -> Result<PathBuf> {
    let name = format!("reduction_{}.csv", file_stem(&c.param));
    let mut w = writer(dir, &name)?;
    w.write_record(["c", "bound", "hsic", "se", "n_retained", "n_goal", "is_cutoff"])?;
    for p in &c.points {
        w.write_record([
            p.offset.to_string(),
            p.bound.to_string(),
            p.score.value.to_string(),
            p.score.std_error.to_string(),
            p.n_retained.to_string(),
            p.n_goal.to_string(),
            (c.cutoff == Some(p.offset)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(dir.join(name))
}

pub fn write_histogram(dir: &Path, h: &Histogram) -> Result<PathBuf> {
    let name = format!("hist_{}.csv", file_stem(&h.param));
    let mut w = writer(dir, &name)?;
    w.write_record(["bin_lo", "bin_hi", "count_all", "count_goal"])?;
    for b in &h.bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count_all.to_string(), b.count_goal.to_string()])?;
    }
    w.flush()?;
    Ok(dir.join(name))
}

pub fn write_levels(dir: &Path, l: &LevelReport) -> Result<PathBuf> {
    let name = format!("levels_{}.csv", file_stem(&l.param));
    let mut w = writer(dir, &name)?;
    w.write_record(["level", "prior", "count_all", "count_worst", "count_best", "worst_share", "best_share", "flagged"])?;
    for r in &l.levels {
        w.write_record([
            r.level.to_string(),
            r.prior.to_string(),
            r.count_all.to_string(),
            r.count_worst.to_string(),
            r.count_best.to_string(),
            r.worst_share.to_string(),
            r.best_share.to_string(),
            r.flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(dir.join(name))
}

#[derive(Serialize)]
struct Summary<'a> {
    report: &'a SensitivityReport,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    reductions: &'a [ReductionCurve],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    levels: &'a [LevelReport],
}

/// Write every table of an analysis into `dir` (created if needed) and
/// return the paths written, summary last.
pub fn write_bundle(dir: &Path, report: &SensitivityReport, curves: &[ReductionCurve], levels: &[LevelReport]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for g in &report.groups {
        out.push(write_ranking(dir, g)?);
    }
    if let Some(m) = &report.interactions {
        out.push(write_interactions(dir, m)?);
    }
    for c in curves {
        out.push(write_reduction(dir, c)?);
    }
    for h in &report.histograms {
        out.push(write_histogram(dir, h)?);
    }
    for l in levels {
        out.push(write_levels(dir, l)?);
    }
    let path = dir.join("summary.json");
    let mut f = File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, &Summary { report, reductions: curves, levels })?;
    out.push(path);
    Ok(out)
}

/// Curves only, for a standalone reduction run.
pub fn write_reduction_bundle(dir: &Path, curves: &[ReductionCurve]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = curves.iter().map(|c| write_reduction(dir, c)).collect::<Result<Vec<_>>>()?;
    let path = dir.join("reductions.json");
    serde_json::to_writer_pretty(File::create(&path)?, curves)?;
    out.push(path);
    Ok(out)
}

/// The two-step result as JSON plus the incumbent trace of both steps.
pub fn write_two_step(dir: &Path, result: &TwoStepResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join("two_step.json");
    serde_json::to_writer_pretty(File::create(&json)?, result)?;
    let trace = dir.join("incumbent.csv");
    let mut w = csv::Writer::from_writer(File::create(&trace)?);
    w.write_record(["step", "eval", "score", "incumbent"])?;
    let steps = std::iter::once((1, &result.step1)).chain(result.step2.iter().map(|r| (2, r)));
    for (step, r) in steps {
        for (i, (t, inc)) in r.history.iter().zip(&r.incumbent).enumerate() {
            let score = t.score.map_or(String::new(), |s| s.to_string());
            w.write_record([step.to_string(), i.to_string(), score, inc.to_string()])?;
        }
    }
    w.flush()?;
    Ok(vec![json, trace])
}
