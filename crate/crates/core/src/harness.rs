//! Parallel random search persisted as JSON lines: a manifest record, then one
//! trial per line in index order.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{evaluate_trial, Objective};
use crate::rng;
use crate::space::{Configuration, SearchSpace, SpaceDoc};
use crate::trial::Trial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub space_hash: String,
    pub objective: String,
    pub master_seed: u64,
    pub n_s: u64,
    pub version: String,
    pub created_unix_s: u64,
    pub space: SpaceDoc,
}

impl RunManifest {
    pub fn new(space: &SearchSpace, objective: &str, master_seed: u64, n_s: u64) -> Self {
        RunManifest {
            space_hash: space.hash(),
            objective: objective.to_string(),
            master_seed,
            n_s,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            space: space.to_doc(),
        }
    }

    /// Rebuild the embedded space and check it against the recorded hash.
    pub fn space(&self) -> Result<SearchSpace> {
        let space = self.space.to_space()?;
        let actual = space.hash();
        if actual != self.space_hash {
            return Err(Error::HashMismatch { expected: self.space_hash.clone(), actual });
        }
        Ok(space)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    manifest: RunManifest,
}

/// Configuration of trial `index`; a pure function of the master seed.
pub fn trial_config(space: &SearchSpace, master_seed: u64, index: u64) -> Configuration {
    space.sample(&mut rng::stream(rng::derive_named(master_seed, "config", &[index])))
}

/// Evaluate trial `index` of a run exactly as the search does.
pub fn replay_trial(objective: &dyn Objective, master_seed: u64, index: u64) -> Trial {
    let config = trial_config(objective.space(), master_seed, index);
    evaluate_trial(objective, &config, index, rng::trial_seed(master_seed, index))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSummary {
    pub existing: usize,
    pub evaluated: usize,
}

/// Evaluate trials `0..n_s` with `jobs` workers, appending to `out`. Indices
/// already in the file are skipped, and a partially written last line is
/// discarded first. Records are written in index order whatever `jobs` is.
pub fn run_random_search(objective: &dyn Objective, n_s: u64, jobs: usize, master_seed: u64, out: &Path) -> Result<SearchSummary> {
    let space = objective.space();
    let mut manifest = RunManifest::new(space, objective.name(), master_seed, n_s);
    let mut done: BTreeSet<u64> = BTreeSet::new();
    if out.exists() && fs::metadata(out)?.len() > 0 {
        drop_partial_line(out)?;
        let (old, trials) = load_trials(out)?;
        if old.space_hash != manifest.space_hash || old.objective != manifest.objective || old.master_seed != master_seed {
            return Err(Error::MixedRun(format!(
                "{} was written by objective `{}` with seed {}; refusing to append a different run",
                out.display(),
                old.objective,
                old.master_seed
            )));
        }
        done.extend(trials.iter().map(|t| t.index));
        if old.n_s != n_s {
            manifest.created_unix_s = old.created_unix_s;
            rewrite_manifest(out, &manifest)?;
        }
    } else {
        let mut f = File::create(out)?;
        serde_json::to_writer(&mut f, &ManifestRecord { manifest: manifest.clone() })?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    let todo: Vec<u64> = (0..n_s).filter(|i| !done.contains(i)).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut w = BufWriter::new(OpenOptions::new().append(true).open(out)?);
    for chunk in todo.chunks(jobs.max(1) * 8) {
        let trials: Vec<Trial> = pool.install(|| chunk.par_iter().map(|&i| replay_trial(objective, master_seed, i)).collect());
        for t in &trials {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        log::info!("{} / {} trials", done.len() + trials.len(), n_s);
        done.extend(chunk.iter().copied());
    }
    Ok(SearchSummary { existing: (n_s as usize).saturating_sub(todo.len()), evaluated: todo.len() })
}

fn drop_partial_line(path: &Path) -> Result<()> {
    let mut f = OpenOptions::new().read(true).write(true).open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    if bytes.last() == Some(&b'\n') {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
    log::warn!("{}: discarding an incomplete last record", path.display());
    f.set_len(keep as u64)?;
    f.seek(SeekFrom::End(0))?;
    Ok(())
}

fn rewrite_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let rest = text.split_once('\n').map_or("", |(_, r)| r);
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = File::create(&tmp)?;
        serde_json::to_writer(&mut f, &ManifestRecord { manifest: manifest.clone() })?;
        f.write_all(b"\n")?;
        f.write_all(rest.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Read a trial file. The manifest must be first and its embedded space must
/// hash to the recorded value; every record must be a complete trial valid in
/// that space, with no index repeated. Trials come back sorted by index.
pub fn load_trials(path: &Path) -> Result<(RunManifest, Vec<Trial>)> {
    let corrupt = |line: usize, message: String| Error::CorruptRecord { path: path.display().to_string(), line, message };
    let mut reader = BufReader::new(File::open(path)?);
    let mut buf = String::new();
    let mut manifest: Option<RunManifest> = None;
    let mut space: Option<SearchSpace> = None;
    let mut trials = Vec::new();
    let mut seen = BTreeSet::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            return Err(corrupt(line_no, "incomplete record (no trailing newline)".into()));
        }
        let line = buf.trim_end();
        if line.is_empty() {
            continue;
        }
        if manifest.is_none() {
            let rec: ManifestRecord =
                serde_json::from_str(line).map_err(|e| corrupt(line_no, format!("expected manifest record: {e}")))?;
            space = Some(rec.manifest.space()?);
            manifest = Some(rec.manifest);
            continue;
        }
        if line.starts_with("{\"manifest\"") {
            return Err(Error::MixedRun(format!("{}: second manifest at line {line_no}", path.display())));
        }
        let mut t: Trial = serde_json::from_str(line).map_err(|e| corrupt(line_no, e.to_string()))?;
        t.config = space.as_ref().expect("manifest first").validate(&t.config).map_err(|e| corrupt(line_no, e.to_string()))?;
        if (t.score.is_some()) != t.is_ok() || t.score.is_some_and(|s| !s.is_finite()) {
            return Err(corrupt(line_no, "score must be finite exactly when status is ok".into()));
        }
        if !seen.insert(t.index) {
            return Err(Error::MixedRun(format!("{}: index {} repeated at line {line_no}", path.display(), t.index)));
        }
        trials.push(t);
    }
    let manifest = manifest.ok_or_else(|| corrupt(1, "missing manifest record".into()))?;
    trials.sort_by_key(|t| t.index);
    Ok((manifest, trials))
}

/// As `load_trials`, also requiring the file to belong to `space`.
pub fn load_trials_for(path: &Path, space: &SearchSpace) -> Result<(RunManifest, Vec<Trial>)> {
    let (m, t) = load_trials(path)?;
    let expected = space.hash();
    if m.space_hash != expected {
        return Err(Error::HashMismatch { expected, actual: m.space_hash });
    }
    Ok((m, t))
}

/// Resolve the worker count: `HSIC_TUNE_JOBS` wins over the flag.
pub fn resolve_jobs(flag: Option<usize>) -> usize {
    std::env::var("HSIC_TUNE_JOBS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|j| *j > 0)
        .or(flag)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
