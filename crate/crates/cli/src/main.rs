use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hsic_tune::analysis::{
    interval_reduction, run_algorithm1, worst_level_report, AnalysisOptions, GoalSet, LevelReport, ReductionOptions,
    SensitivityReport,
};
use hsic_tune::harness::{load_trials, resolve_jobs, run_random_search};
use hsic_tune::hsic::HsicOptions;
use hsic_tune::objectives::{self, bateman};
use hsic_tune::report;
use hsic_tune::space::SearchSpace;
use hsic_tune::trial::{Trial, TrialStatus};
use hsic_tune::two_step::{audit_fixed, two_step_from_report, Budget, FixingMode, TwoStepOptions};

#[derive(Parser)]
#[command(name = "hsic-tune", version, about = "Goal-oriented HSIC sensitivity analysis and two-step tuning of hyperparameters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Random search over a built-in objective, written as JSON lines.
    Search(SearchArgs),
    /// Rank hyperparameters against the goal set and write a report bundle.
    Analyze(AnalyzeArgs),
    /// Interval-reduction curves for ordered parameters.
    Reduce(ReduceArgs),
    /// Two-step optimization starting from a random-search file.
    Optimize(OptimizeArgs),
    /// Flat CSV of a trial file plus a run summary.
    Report(ReportArgs),
    /// Search then analyze a built-in objective in one go.
    Demo(DemoArgs),
    /// Export a Bateman-equations dataset as CSV.
    Bateman(BatemanArgs),
}

#[derive(Args)]
struct SearchArgs {
    /// Built-in objective (example1, example2, example3[:t], quadratic,
    /// branin, three-term, depth-threshold, runge, runge-unit).
    #[arg(long)]
    objective: String,
    #[arg(long = "n", default_value_t = 1000)]
    n_s: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; HSIC_TUNE_JOBS takes precedence.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GoalKind {
    Best,
    Worst,
    /// Errors at most --bound.
    Threshold,
}

#[derive(Args, Clone)]
struct GoalArgs {
    #[arg(long, default_value_t = 0.1)]
    percentile: f64,
    /// Defaults to the objective's own goal if it has one, else best.
    #[arg(long, value_enum)]
    goal: Option<GoalKind>,
    #[arg(long)]
    bound: Option<f64>,
}

impl GoalArgs {
    /// `objective` supplies the fallback goal when --goal is absent.
    fn goal(&self, objective: Option<&str>) -> Result<GoalSet> {
        let percentile = || {
            if !(self.percentile > 0.0 && self.percentile < 1.0) {
                bail!("--percentile must lie in (0, 1), got {}", self.percentile);
            }
            Ok(self.percentile)
        };
        Ok(match self.goal {
            Some(GoalKind::Best) => GoalSet::BestPercentile { p: percentile()? },
            Some(GoalKind::Worst) => GoalSet::WorstPercentile { p: percentile()? },
            Some(GoalKind::Threshold) => match self.bound {
                Some(bound) => GoalSet::Threshold { bound, below: true },
                None => bail!("--goal threshold needs --bound"),
            },
            None => match objective.and_then(|o| objectives::builtin(o).ok()).and_then(|o| o.default_goal()) {
                Some(g) => g,
                None => GoalSet::BestPercentile { p: percentile()? },
            },
        })
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    trials: PathBuf,
    #[command(flatten)]
    goal: GoalArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Bootstrap replicates for standard errors.
    #[arg(long, default_value_t = 100)]
    boot: usize,
    /// Scan every pair, not only pairs of non-impactful parameters.
    #[arg(long)]
    full_interactions: bool,
    #[arg(long)]
    no_interactions: bool,
    /// Over-representation factor for the worst-level report.
    #[arg(long, default_value_t = 1.5)]
    level_factor: f64,
}

#[derive(Args)]
struct ReduceArgs {
    trials: PathBuf,
    /// Parameter to reduce; repeat for several.
    #[arg(long = "param", required = true)]
    params: Vec<String>,
    #[command(flatten)]
    goal: GoalArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cut the range from the top instead of the bottom.
    #[arg(long)]
    from_top: bool,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "acc")]
    Acc,
    #[value(name = "acc+speed")]
    AccSpeed,
}

#[derive(Args)]
struct OptimizeArgs {
    trials: PathBuf,
    #[arg(long, value_enum, default_value = "acc+speed")]
    mode: ModeArg,
    /// Bayesian-optimization iterations after the initial design, step 1.
    #[arg(long, default_value_t = 25)]
    budget_step1: usize,
    #[arg(long, default_value_t = 25)]
    budget_step2: usize,
    /// Initial design size of each step.
    #[arg(long, default_value_t = 10)]
    n_init: usize,
    #[command(flatten)]
    goal: GoalArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "optimize")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    trials: PathBuf,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    objective: String,
    #[arg(long = "n", default_value_t = 2000)]
    n_s: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    goal: GoalArgs,
    #[arg(long, default_value = "demo")]
    out: PathBuf,
}

#[derive(Args)]
struct BatemanArgs {
    #[arg(long = "n", default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load(path: &Path) -> Result<(String, SearchSpace, Vec<Trial>)> {
    let (m, trials) = load_trials(path).with_context(|| format!("reading {}", path.display()))?;
    let space = m.space()?;
    Ok((m.objective, space, trials))
}

fn analysis_options(boot: usize, seed: u64) -> AnalysisOptions {
    AnalysisOptions { hsic: HsicOptions { n_boot: boot, seed, ..HsicOptions::default() }, ..AnalysisOptions::default() }
}

fn print_ranking(report: &SensitivityReport) {
    for g in &report.groups {
        println!("group {} ({} rows, {} in goal)", g.group.id, g.n_rows, g.n_goal);
        for r in &g.ranking {
            let mark = if r.impactful == Some(true) { "*" } else { " " };
            println!("  {mark} {:<24} {:>12.4e} ± {:.2e}", r.param, r.score.value, r.score.std_error);
        }
        if let Some(f) = &g.noise_floor {
            println!("    {:<24} {:>12.4e} ± {:.2e}", "(noise floor)", f.value, f.std_error);
        }
    }
    if let Some(m) = &report.interactions {
        for (a, b) in &m.flagged {
            let s = m.get(a, b).expect("flagged pair");
            println!("interaction {a} × {b}: {:.4e} ± {:.2e}", s.value, s.std_error);
        }
    }
}

fn analyze_into(
    space: &SearchSpace,
    trials: &[Trial],
    goal: &GoalSet,
    opts: &AnalysisOptions,
    seed: u64,
    level_factor: f64,
    out: &Path,
) -> Result<SensitivityReport> {
    let report = run_algorithm1(space, trials, goal, seed, opts)?;
    let mut levels: Vec<LevelReport> = Vec::new();
    if let GoalSet::WorstPercentile { p } = goal {
        for spec in space.params().iter().filter(|p| p.is_discrete()) {
            levels.push(worst_level_report(space, &spec.name, trials, *p, level_factor)?);
        }
    }
    let written = report::write_bundle(out, &report, &[], &levels)?;
    print_ranking(&report);
    for l in &levels {
        let bad: Vec<String> = l.flagged().iter().map(|v| v.to_string()).collect();
        if !bad.is_empty() {
            println!("{}: levels over-represented among the worst: {}", l.param, bad.join(", "));
        }
    }
    eprintln!("wrote {} files to {}", written.len(), out.display());
    Ok(report)
}

fn search(a: SearchArgs) -> Result<()> {
    let obj = objectives::builtin(&a.objective)?;
    let jobs = resolve_jobs(a.jobs);
    let s = run_random_search(obj.as_ref(), a.n_s, jobs, a.seed, &a.out)?;
    eprintln!("{} trials evaluated, {} already present, {}", s.evaluated, s.existing, a.out.display());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let (name, space, trials) = load(&a.trials)?;
    let goal = a.goal.goal(Some(&name))?;
    let mut opts = analysis_options(a.boot, a.seed);
    opts.full_interactions = a.full_interactions;
    opts.interactions = !a.no_interactions;
    analyze_into(&space, &trials, &goal, &opts, a.seed, a.level_factor, &a.out)?;
    Ok(())
}

fn reduce(a: ReduceArgs) -> Result<()> {
    let (name, space, trials) = load(&a.trials)?;
    let goal = a.goal.goal(Some(&name))?;
    let opts = AnalysisOptions { interactions: false, ..analysis_options(100, a.seed) };
    let report = run_algorithm1(&space, &trials, &goal, a.seed, &opts)?;
    let ropts = ReductionOptions { from_top: a.from_top, ..ReductionOptions::default() };
    let mut curves = Vec::new();
    for p in &a.params {
        let c = interval_reduction(&space, p, &trials, &goal, report.noise_floor(), a.seed, &ropts)?;
        match c.cutoff_point() {
            Some(pt) => println!("{p}: cutoff c = {} (bound {})", pt.offset, pt.bound),
            None => println!("{p}: no cutoff reached{}", if c.truncated { " (curve truncated)" } else { "" }),
        }
        curves.push(c);
    }
    report::write_reduction_bundle(&a.out, &curves)?;
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let (name, space, trials) = load(&a.trials)?;
    let obj = objectives::builtin(&name)?;
    if obj.space().hash() != space.hash() {
        bail!("trial file space does not match objective `{name}`");
    }
    let goal = a.goal.goal(Some(&name))?;
    let opts = TwoStepOptions {
        mode: match a.mode {
            ModeArg::Acc => FixingMode::AccuracyOnly,
            ModeArg::AccSpeed => FixingMode::AccuracyAndSpeed,
        },
        step1: Budget { n_init: a.n_init, n_iter: a.budget_step1 },
        step2: Budget { n_init: a.n_init, n_iter: a.budget_step2 },
        analysis: analysis_options(100, a.seed),
        ..TwoStepOptions::default()
    };
    let report = run_algorithm1(&space, &trials, &goal, a.seed, &opts.analysis)?;
    let result = two_step_from_report(obj.as_ref(), &trials, &report, &goal, &opts, a.seed)?;
    let bad = audit_fixed(&space, &result.fixed_configuration(), &result.step1.history);
    if !bad.is_empty() {
        bail!("step-1 evaluations {bad:?} drifted from the fixed assignment");
    }
    for f in &result.fixed {
        println!("fixed {} = {} ({:?})", f.param, f.value, f.provenance);
    }
    if let Some(t) = result.step1_incumbent() {
        println!("step 1 best: {:.6e}", t.score.unwrap_or(f64::NAN));
    }
    match result.step2_incumbent() {
        Some(t) => println!("step 2 best: {:.6e}", t.score.unwrap_or(f64::NAN)),
        None => println!("step 2 skipped"),
    }
    report::write_two_step(&a.out, &result)?;
    report::write_bundle(&a.out, &report, &result.curves, &[])?;
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let (m, trials) = load_trials(&a.trials)?;
    let space = m.space()?;
    std::fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_writer(File::create(a.out.join("trials.csv"))?);
    let names: Vec<&str> = space.params().iter().map(|p| p.name.as_str()).collect();
    let mut header = vec!["i", "status", "score", "seed", "wall_time_s"];
    header.extend(&names);
    w.write_record(&header)?;
    for t in &trials {
        let mut row = vec![
            t.index.to_string(),
            serde_json::to_value(t.status)?.as_str().unwrap_or_default().to_string(),
            t.score.map_or(String::new(), |s| s.to_string()),
            t.seed.to_string(),
            t.wall_time_s.to_string(),
        ];
        row.extend(names.iter().map(|n| t.config.get(n).map_or(String::new(), |v| v.to_string())));
        w.write_record(&row)?;
    }
    w.flush()?;
    let count = |s: TrialStatus| trials.iter().filter(|t| t.status == s).count();
    let best = trials.iter().filter(|t| t.is_ok()).min_by(|a, b| a.score.partial_cmp(&b.score).expect("finite"));
    let summary = serde_json::json!({
        "manifest": m,
        "n_trials": trials.len(),
        "n_ok": count(TrialStatus::Ok),
        "n_diverged": count(TrialStatus::Diverged),
        "n_failed": count(TrialStatus::Failed),
        "best": best,
    });
    serde_json::to_writer_pretty(File::create(a.out.join("run_summary.json"))?, &summary)?;
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let obj = objectives::builtin(&a.objective)?;
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join("trials.jsonl");
    if path.exists() {
        std::fs::remove_file(&path)?;
    }
    run_random_search(obj.as_ref(), a.n_s, resolve_jobs(a.jobs), a.seed, &path)?;
    let (_, space, trials) = load(&path)?;
    let goal = a.goal.goal(Some(&a.objective))?;
    analyze_into(&space, &trials, &goal, &analysis_options(100, a.seed), a.seed, 1.5, &a.out)?;
    Ok(())
}

fn bateman_cmd(a: BatemanArgs) -> Result<()> {
    let sys = bateman::BatemanSystem::default();
    let data = bateman::bateman_dataset(&sys, a.n, a.seed)?;
    bateman::write_dataset_csv(&data, sys.m, File::create(&a.out)?)?;
    let diverged = data.iter().filter(|s| s.label.is_none()).count();
    eprintln!("{} samples written to {} ({diverged} diverged)", data.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Search(a) => search(a),
        Command::Analyze(a) => analyze(a),
        Command::Reduce(a) => reduce(a),
        Command::Optimize(a) => optimize(a),
        Command::Report(a) => report_cmd(a),
        Command::Demo(a) => demo(a),
        Command::Bateman(a) => bateman_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
