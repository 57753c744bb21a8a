//! Fuzzing campaigns: risky-point selection strategies, child execution,
//! failure tallies and cumulative-failure curves.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clipper::clip;
use crate::error::{Error, Result};
use crate::forecaster::{forecast, identify_proximity, ForecastConfig};
use crate::model::ActorId;
use crate::mutator::generate_children;
use crate::scenario::Scenario;
use crate::sim::{advance_progress, route_path, run, FailureType, OutcomeKind};
use crate::telemetry::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Foresee,
    RandomRp,
    Exhaustive,
    ProximityRank,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Foresee,
        Strategy::RandomRp,
        Strategy::Exhaustive,
        Strategy::ProximityRank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Foresee => "foresee",
            Strategy::RandomRp => "random",
            Strategy::Exhaustive => "exhaustive",
            Strategy::ProximityRank => "proximity",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub o_b: f64,
    pub o_a: f64,
    pub n_rp: usize,
    pub c: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub forecast: ForecastConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Foresee,
            o_b: 5.0,
            o_a: 5.0,
            n_rp: 4,
            c: 10,
            repetitions: 3,
            seed: 0,
            forecast: ForecastConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.o_b > 0.0 && self.o_a > 0.0 && self.o_b.is_finite() && self.o_a.is_finite()) {
            return Err(Error::InvalidConfig("o_b and o_a must be positive".into()));
        }
        if self.n_rp == 0 || self.c == 0 || self.repetitions == 0 {
            return Err(Error::InvalidConfig("n_rp, c and repetitions must be >= 1".into()));
        }
        self.forecast.perturbation.validate()
    }
}

/// One executed child.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub seed_id: String,
    pub strategy: Strategy,
    pub repetition: usize,
    pub rp_frame: usize,
    pub child_idx: usize,
    pub mutation_op: String,
    pub outcome: OutcomeKind,
    pub failure_type: Option<FailureType>,
    pub sim_seconds: f64,
    /// Wall-clock seconds spent simulating the child. Not serialized.
    #[serde(default, skip_serializing)]
    pub wall_seconds: f64,
}

/// A selected risky point that produced no children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub rp_frame: usize,
    pub reason: String,
}

/// Result of one strategy on one seed in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFragment {
    pub seed_id: String,
    pub repetition: usize,
    /// Set when the seed could not be used at all.
    pub error: Option<String>,
    pub risky_frames: Vec<usize>,
    pub clips: usize,
    pub skipped: Vec<SkippedPoint>,
    pub executions: Vec<ExecutionRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub risky_points: f64,
    pub clips: f64,
    pub executions: f64,
    pub failures: f64,
    pub failures_by_type: BTreeMap<FailureType, f64>,
    pub stuck: f64,
    pub sim_seconds: f64,
    pub failure_rate: f64,
}

impl Tally {
    fn of(fragments: &[&SeedFragment]) -> Self {
        let mut t = Tally {
            failures_by_type: FailureType::ALL.iter().map(|f| (*f, 0.0)).collect(),
            ..Tally::default()
        };
        for f in fragments {
            t.risky_points += f.risky_frames.len() as f64;
            t.clips += f.clips as f64;
            for e in &f.executions {
                t.executions += 1.0;
                t.sim_seconds += e.sim_seconds;
                match e.outcome {
                    OutcomeKind::Collision => {
                        t.failures += 1.0;
                        if let Some(ft) = e.failure_type {
                            *t.failures_by_type.entry(ft).or_default() += 1.0;
                        }
                    }
                    OutcomeKind::Stuck => t.stuck += 1.0,
                    OutcomeKind::Completed => {}
                }
            }
        }
        t.failure_rate = rate(t.failures, t.risky_points);
        t
    }

    /// Mean of several tallies; the failure rate is the ratio of the means.
    fn mean(tallies: &[Tally]) -> Self {
        let n = tallies.len().max(1) as f64;
        let sum = |f: &dyn Fn(&Tally) -> f64| tallies.iter().map(f).sum::<f64>() / n;
        let mut t = Tally {
            risky_points: sum(&|t| t.risky_points),
            clips: sum(&|t| t.clips),
            executions: sum(&|t| t.executions),
            failures: sum(&|t| t.failures),
            failures_by_type: BTreeMap::new(),
            stuck: sum(&|t| t.stuck),
            sim_seconds: sum(&|t| t.sim_seconds),
            failure_rate: 0.0,
        };
        for ft in FailureType::ALL {
            t.failures_by_type
                .insert(ft, sum(&|x| x.failures_by_type.get(&ft).copied().unwrap_or(0.0)));
        }
        t.failure_rate = rate(t.failures, t.risky_points);
        t
    }

    /// Failures per simulated second of child execution.
    pub fn failures_per_second(&self) -> f64 {
        rate(self.failures, self.sim_seconds)
    }
}

fn rate(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Point of a cumulative-failure curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    /// Cumulative simulated seconds consumed.
    pub t: f64,
    /// Cumulative failures.
    pub failures: usize,
}

/// Area under the cumulative-failure step curve up to the last timeline
/// point: each failure contributes from its discovery time to the end.
pub fn compute_auc(timeline: &[TimelinePoint]) -> f64 {
    match timeline.last() {
        Some(last) => compute_auc_until(timeline, last.t),
        None => 0.0,
    }
}

/// Area under the cumulative-failure step curve over `[0, horizon]`.
pub fn compute_auc_until(timeline: &[TimelinePoint], horizon: f64) -> f64 {
    let mut area = 0.0;
    let mut prev = 0usize;
    for p in timeline {
        if p.failures > prev && p.t <= horizon {
            area += (p.failures - prev) as f64 * (horizon - p.t);
        }
        prev = prev.max(p.failures);
    }
    area
}

/// What the x-axis of a cumulative-failure curve measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeAxis {
    /// Simulated seconds of child execution. Machine independent.
    #[default]
    Sim,
    /// Wall-clock seconds of child execution, summed in execution order.
    Wall,
}

impl TimeAxis {
    pub fn label(self) -> &'static str {
        match self {
            TimeAxis::Sim => "simulated seconds",
            TimeAxis::Wall => "wall-clock seconds",
        }
    }
}

impl std::str::FromStr for TimeAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(TimeAxis::Sim),
            "wall" => Ok(TimeAxis::Wall),
            other => Err(Error::InvalidConfig(format!("unknown time axis {other:?} (sim, wall)"))),
        }
    }
}

/// Cumulative curve over executions in order, on simulated seconds.
pub fn timeline_of<'a>(executions: impl IntoIterator<Item = &'a ExecutionRecord>) -> Vec<TimelinePoint> {
    timeline_on(executions, TimeAxis::Sim)
}

pub fn timeline_on<'a>(executions: impl IntoIterator<Item = &'a ExecutionRecord>, axis: TimeAxis) -> Vec<TimelinePoint> {
    let mut t = 0.0;
    let mut failures = 0;
    let mut out = vec![TimelinePoint { t: 0.0, failures: 0 }];
    for e in executions {
        t += match axis {
            TimeAxis::Sim => e.sim_seconds,
            TimeAxis::Wall => e.wall_seconds,
        };
        if e.outcome == OutcomeKind::Collision {
            failures += 1;
        }
        out.push(TimelinePoint { t, failures });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub repetition: usize,
    pub seed: u64,
    pub tally: Tally,
    pub timeline: Vec<TimelinePoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed_id: String,
    /// Mean over repetitions.
    pub tally: Tally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: StrategyConfig,
    pub seeds: Vec<SeedSummary>,
    pub repetitions: Vec<RepetitionReport>,
    /// Mean over repetitions.
    pub aggregate: Tally,
    /// Mean AUC over repetitions.
    pub auc: f64,
    pub fragments: Vec<SeedFragment>,
    /// Wall-clock seconds; the only field that depends on the machine.
    pub wall_time: f64,
}

impl CampaignReport {
    pub fn executions(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.fragments.iter().flat_map(|f| f.executions.iter())
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_wall_clock(&self) -> Self {
        let mut r = Self {
            wall_time: 0.0,
            ..self.clone()
        };
        for e in r.fragments.iter_mut().flat_map(|f| f.executions.iter_mut()) {
            e.wall_seconds = 0.0;
        }
        r
    }

    /// Per-repetition cumulative-failure curves on the given axis.
    pub fn timelines(&self, axis: TimeAxis) -> Vec<Vec<TimelinePoint>> {
        match axis {
            TimeAxis::Sim => self.repetitions.iter().map(|r| r.timeline.clone()).collect(),
            TimeAxis::Wall => (0..self.config.repetitions)
                .map(|rep| timeline_on(self.executions().filter(|e| e.repetition == rep), axis))
                .collect(),
        }
    }

    /// Seeds whose children produced at least one collision in any repetition.
    pub fn converted_seeds(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .fragments
            .iter()
            .filter(|f| f.executions.iter().any(|e| e.outcome == OutcomeKind::Collision))
            .map(|f| f.seed_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Recorded seed run shared by every strategy and repetition.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub scenario: Scenario,
    pub trace: std::result::Result<Trace, String>,
}

impl SeedRun {
    pub fn new(scenario: Scenario) -> Self {
        let trace = match run(&scenario) {
            Ok(t) if t.outcome.is_failure() => Err(Error::SeedNotFailureFree(scenario.id.clone()).to_string()),
            Ok(t) => Ok(t),
            Err(e) => Err(e.to_string()),
        };
        Self { scenario, trace }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed derived from the repetition seed, the seed scenario and a salt.
pub fn derive_seed(rep_seed: u64, seed_id: &str, salt: u64) -> u64 {
    splitmix(splitmix(rep_seed ^ fnv1a(seed_id)) ^ salt)
}

const SALT_FORECAST: u64 = u64::MAX;
const SALT_RANDOM: u64 = u64::MAX - 1;

/// Frames at which the ego passes each route waypoint.
pub fn waypoint_arrival_frames(scenario: &Scenario, trace: &Trace) -> Result<Vec<usize>> {
    let points: Vec<_> = route_path(scenario)?.iter().map(|w| w.position).collect();
    let mut next = 0;
    let mut out = Vec::new();
    for (i, f) in trace.frames.iter().enumerate() {
        let n = advance_progress(&points, next, f.ego.pose.position);
        out.extend(std::iter::repeat_n(i, n - next));
        next = n;
    }
    Ok(out)
}

/// Clip centers, one per whole second from `o_b` up to the end of the trace.
pub fn exhaustive_frames(trace: &Trace, o_b: f64) -> Vec<usize> {
    let duration = trace.duration();
    let mut out = Vec::new();
    let mut s = o_b.ceil();
    while s < duration - 1e-9 {
        out.push((s * trace.tick_rate).round() as usize);
        s += 1.0;
    }
    out
}

/// Close NPCs ordered by the first frame they come within their threshold.
pub fn proximity_ranking(trace: &Trace, cfg: &ForecastConfig) -> Result<Vec<(ActorId, usize)>> {
    let prox = identify_proximity(trace, &cfg.thresholds)?;
    let mut ranked = Vec::new();
    for ca in &prox.close {
        let info = trace.actor(ca.actor_id).ok_or(Error::UnknownActor(ca.actor_id))?;
        let th = cfg.thresholds.for_class(info.class);
        let first = (0..trace.frames.len())
            .find(|&i| trace.distance(i, ca.actor_id).is_ok_and(|d| d <= th))
            .unwrap_or(ca.frame);
        ranked.push((first, ca.actor_id, ca.frame));
    }
    ranked.sort();
    Ok(ranked.into_iter().map(|(_, id, frame)| (id, frame)).collect())
}

/// Risky frames chosen by a strategy on one seed trace.
pub fn select_frames(cfg: &StrategyConfig, seed: &Scenario, trace: &Trace, rep_seed: u64) -> Result<Vec<usize>> {
    Ok(match cfg.strategy {
        Strategy::Foresee => {
            let mut fc = cfg.forecast;
            fc.perturbation.seed = derive_seed(rep_seed, &seed.id, SALT_FORECAST);
            forecast(trace, &fc)?
                .risky_points
                .iter()
                .take(cfg.n_rp)
                .map(|rp| rp.frame)
                .collect()
        }
        Strategy::RandomRp => {
            let min_frame = (cfg.o_b * trace.tick_rate).round() as usize;
            let eligible: Vec<usize> = waypoint_arrival_frames(seed, trace)?
                .into_iter()
                .filter(|&f| f >= min_frame)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rep_seed, &seed.id, SALT_RANDOM));
            let n = cfg.n_rp.min(eligible.len());
            rand::seq::index::sample(&mut rng, eligible.len(), n)
                .into_iter()
                .map(|i| eligible[i])
                .collect()
        }
        Strategy::Exhaustive => exhaustive_frames(trace, cfg.o_b),
        Strategy::ProximityRank => proximity_ranking(trace, &cfg.forecast)?
            .into_iter()
            .take(cfg.n_rp)
            .map(|(_, frame)| frame)
            .collect(),
    })
}

/// Clip, mutate and execute every selected risky point of one seed.
pub fn run_seed(cfg: &StrategyConfig, seed: &SeedRun, repetition: usize) -> SeedFragment {
    let rep_seed = cfg.seed.wrapping_add(repetition as u64);
    let mut fragment = SeedFragment {
        seed_id: seed.scenario.id.clone(),
        repetition,
        error: None,
        risky_frames: Vec::new(),
        clips: 0,
        skipped: Vec::new(),
        executions: Vec::new(),
    };
    let trace = match &seed.trace {
        Ok(t) => t,
        Err(e) => {
            fragment.error = Some(e.clone());
            return fragment;
        }
    };
    match select_frames(cfg, &seed.scenario, trace, rep_seed) {
        Ok(frames) => fragment.risky_frames = frames,
        Err(e) => {
            fragment.error = Some(e.to_string());
            return fragment;
        }
    }
    let batches: Vec<_> = fragment
        .risky_frames
        .par_iter()
        .map(|&frame| {
            let clipped = clip(&seed.scenario, trace, frame, cfg.o_b, cfg.o_a)?;
            let batch = generate_children(&clipped, cfg.c, derive_seed(rep_seed, &seed.scenario.id, frame as u64))?;
            let outcomes = batch
                .children
                .par_iter()
                .map(|child| {
                    let started = Instant::now();
                    run(&child.scenario).map(|t| (t.outcome, t.duration(), started.elapsed().as_secs_f64()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok::<_, Error>((batch, outcomes))
        })
        .collect();
    for (&frame, result) in fragment.risky_frames.iter().zip(batches) {
        match result {
            Ok((batch, outcomes)) => {
                fragment.clips += 1;
                for (i, (child, (outcome, secs, wall))) in batch.children.iter().zip(outcomes).enumerate() {
                    fragment.executions.push(ExecutionRecord {
                        seed_id: seed.scenario.id.clone(),
                        strategy: cfg.strategy,
                        repetition,
                        rp_frame: frame,
                        child_idx: i,
                        mutation_op: child.op.to_string(),
                        outcome: outcome.kind,
                        failure_type: outcome.failure_type,
                        sim_seconds: secs,
                        wall_seconds: wall,
                    });
                }
            }
            Err(e) => fragment.skipped.push(SkippedPoint {
                rp_frame: frame,
                reason: e.kind().to_string(),
            }),
        }
    }
    fragment
}

/// Combine per-seed fragments into a report.
pub fn aggregate(cfg: &StrategyConfig, seed_ids: &[String], fragments: Vec<SeedFragment>, wall_time: f64) -> CampaignReport {
    let mut repetitions = Vec::new();
    for rep in 0..cfg.repetitions {
        let frags: Vec<&SeedFragment> = fragments.iter().filter(|f| f.repetition == rep).collect();
        let timeline = timeline_of(frags.iter().flat_map(|f| f.executions.iter()));
        repetitions.push(RepetitionReport {
            repetition: rep,
            seed: cfg.seed.wrapping_add(rep as u64),
            tally: Tally::of(&frags),
            auc: compute_auc(&timeline),
            timeline,
        });
    }
    let seeds = seed_ids
        .iter()
        .map(|id| {
            let per_rep: Vec<Tally> = (0..cfg.repetitions)
                .map(|rep| {
                    let frags: Vec<&SeedFragment> = fragments
                        .iter()
                        .filter(|f| f.repetition == rep && &f.seed_id == id)
                        .collect();
                    Tally::of(&frags)
                })
                .collect();
            SeedSummary {
                seed_id: id.clone(),
                tally: Tally::mean(&per_rep),
                error: fragments
                    .iter()
                    .find(|f| &f.seed_id == id && f.error.is_some())
                    .and_then(|f| f.error.clone()),
            }
        })
        .collect();
    let tallies: Vec<Tally> = repetitions.iter().map(|r| r.tally.clone()).collect();
    let auc = repetitions.iter().map(|r| r.auc).sum::<f64>() / repetitions.len().max(1) as f64;
    CampaignReport {
        config: cfg.clone(),
        seeds,
        aggregate: Tally::mean(&tallies),
        auc,
        repetitions,
        fragments,
        wall_time,
    }
}

/// Run a strategy over recorded seeds. Work is spread over the current
/// rayon pool; the report does not depend on scheduling.
pub fn run_campaign_on(cfg: &StrategyConfig, seeds: &[SeedRun]) -> Result<CampaignReport> {
    cfg.validate()?;
    let started = Instant::now();
    let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|rep| (0..seeds.len()).map(move |s| (rep, s)))
        .collect();
    let fragments: Vec<SeedFragment> = jobs
        .par_iter()
        .map(|&(rep, s)| run_seed(cfg, &seeds[s], rep))
        .collect();
    for f in fragments.iter().filter(|f| f.error.is_some()) {
        log::warn!("seed {} skipped: {}", f.seed_id, f.error.as_deref().unwrap_or(""));
    }
    let ids: Vec<String> = seeds.iter().map(|s| s.scenario.id.clone()).collect();
    Ok(aggregate(cfg, &ids, fragments, started.elapsed().as_secs_f64()))
}

/// Run seeds and a strategy on a dedicated pool of `jobs` worker threads.
pub fn run_campaign(cfg: &StrategyConfig, scenarios: &[Scenario], jobs: Option<usize>) -> Result<CampaignReport> {
    let pool = thread_pool(jobs)?;
    pool.install(|| {
        let seeds = record_seeds(scenarios);
        run_campaign_on(cfg, &seeds)
    })
}

pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::InvalidConfig("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Run every seed scenario once, in parallel.
pub fn record_seeds(scenarios: &[Scenario]) -> Vec<SeedRun> {
    scenarios.par_iter().cloned().map(SeedRun::new).collect()
}

#[derive(Debug, Serialize)]
struct CsvExecution<'a> {
    seed_id: &'a str,
    strategy: Strategy,
    repetition: usize,
    rp_frame: usize,
    child_idx: usize,
    mutation_op: &'a str,
    outcome: OutcomeKind,
    failure_type: Option<FailureType>,
    sim_seconds: f64,
}

pub fn write_executions_csv<W: Write>(report: &CampaignReport, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for e in report.executions() {
        w.serialize(CsvExecution {
            seed_id: &e.seed_id,
            strategy: e.strategy,
            repetition: e.repetition,
            rp_frame: e.rp_frame,
            child_idx: e.child_idx,
            mutation_op: &e.mutation_op,
            outcome: e.outcome,
            failure_type: e.failure_type,
            sim_seconds: e.sim_seconds,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeline_csv<W: Write>(report: &CampaignReport, w: W) -> Result<()> {
    write_timeline_csv_on(report, TimeAxis::Sim, w)
}

pub fn write_timeline_csv_on<W: Write>(report: &CampaignReport, axis: TimeAxis, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let x = match axis {
        TimeAxis::Sim => "sim_seconds",
        TimeAxis::Wall => "wall_seconds",
    };
    w.write_record(["repetition", x, "cumulative_failures"])?;
    for (rep, tl) in report.timelines(axis).iter().enumerate() {
        for p in tl {
            w.write_record([rep.to_string(), p.t.to_string(), p.failures.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cumulative-failure curves of the first repetition of each report.
pub fn render_svg(reports: &[&CampaignReport]) -> String {
    render_svg_on(reports, TimeAxis::Sim)
}

pub fn render_svg_on(reports: &[&CampaignReport], axis: TimeAxis) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];
    let curves: Vec<(&str, Vec<TimelinePoint>)> = reports
        .iter()
        .filter_map(|r| {
            r.timelines(axis)
                .into_iter()
                .next()
                .map(|tl| (r.config.strategy.name(), tl))
        })
        .collect();
    let t_max = curves
        .iter()
        .filter_map(|(_, tl)| tl.last().map(|p| p.t))
        .fold(1.0f64, f64::max);
    let f_max = curves
        .iter()
        .filter_map(|(_, tl)| tl.last().map(|p| p.failures))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let x = |t: f64| M + (W - 2.0 * M) * t / t_max;
    let y = |f: f64| H - M - (H - 2.0 * M) * f / f_max;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"12\">{label} ({t_max:.0})</text>\n\
         <text x=\"15\" y=\"{cy}\" font-size=\"12\" transform=\"rotate(-90 15 {cy})\" text-anchor=\"middle\">cumulative failures ({f_max:.0})</text>\n",
        b = H - M,
        r = W - M,
        cx = W / 2.0,
        ty = H - 15.0,
        cy = H / 2.0,
        label = axis.label(),
    );
    for (i, (name, tl)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        let mut prev = 0usize;
        for p in tl.iter() {
            pts.push_str(&format!("{:.2},{:.2} ", x(p.t), y(prev as f64)));
            pts.push_str(&format!("{:.2},{:.2} ", x(p.t), y(p.failures as f64)));
            prev = p.failures;
        }
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.trim_end()
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            M + 10.0,
            M + 15.0 * (i as f64 + 1.0)
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Write `report.json`, `executions.csv`, `timeline.csv`, `curve.svg`,
/// `timing.json` and `timeline_wall.csv`. Wall-clock data only goes to the
/// last two, so the others are byte-identical across runs.
pub fn write_report(report: &CampaignReport, dir: &Path) -> Result<()> {
    write_report_on(report, dir, TimeAxis::Sim)
}

/// As [`write_report`], with `curve.svg` drawn on `axis`.
pub fn write_report_on(report: &CampaignReport, dir: &Path, axis: TimeAxis) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let wall_aucs: Vec<f64> = report.timelines(TimeAxis::Wall).iter().map(|tl| compute_auc(tl)).collect();
    let timing = serde_json::json!({ "wall_time": report.wall_time, "wall_auc": wall_aucs });
    std::fs::write(dir.join("timing.json"), format!("{}\n", serde_json::to_string_pretty(&timing)?))?;
    write_timeline_csv_on(report, TimeAxis::Wall, std::fs::File::create(dir.join("timeline_wall.csv"))?)?;
    let mut json = serde_json::to_string_pretty(&report.without_wall_clock())?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    write_executions_csv(report, std::fs::File::create(dir.join("executions.csv"))?)?;
    write_timeline_csv(report, std::fs::File::create(dir.join("timeline.csv"))?)?;
    std::fs::write(dir.join("curve.svg"), render_svg_on(&[report], axis))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use num_rational::BigRational;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig, Strategy as _};

    use super::*;
    use crate::geom::Vec2;
    use crate::library::lookup;
    use crate::testkit::{road, synthetic_trace};

    fn tp(t: f64, failures: usize) -> TimelinePoint {
        TimelinePoint { t, failures }
    }

    fn exec(seed: &str, rep: usize, outcome: OutcomeKind, secs: f64) -> ExecutionRecord {
        ExecutionRecord {
            seed_id: seed.into(),
            strategy: Strategy::Foresee,
            repetition: rep,
            rp_frame: 100,
            child_idx: 0,
            mutation_op: "model_swap(1->car.suv)".into(),
            outcome,
            failure_type: (outcome == OutcomeKind::Collision).then_some(FailureType::F3),
            sim_seconds: secs,
            wall_seconds: secs / 4.0,
        }
    }

    fn fragment(seed: &str, rep: usize, risky: usize, execs: Vec<ExecutionRecord>) -> SeedFragment {
        SeedFragment {
            seed_id: seed.into(),
            repetition: rep,
            error: None,
            risky_frames: (0..risky).map(|i| 100 + i).collect(),
            clips: risky,
            skipped: Vec::new(),
            executions: execs,
        }
    }

    /// Rectangle-sum integral of the step curve in exact arithmetic.
    fn auc_exact(timeline: &[TimelinePoint], horizon: f64) -> f64 {
        let q = |x: f64| BigRational::from_float(x).unwrap();
        let mut area = q(0.0);
        for (i, p) in timeline.iter().enumerate() {
            let end = timeline.get(i + 1).map_or(horizon, |n| n.t.min(horizon));
            if p.t < end {
                area += (q(end) - q(p.t)) * q(p.failures as f64);
            }
        }
        num_traits::ToPrimitive::to_f64(&area).unwrap()
    }

    #[test]
    fn auc_of_hand_timelines() {
        assert_eq!(compute_auc(&[]), 0.0);
        assert_eq!(compute_auc(&[tp(0.0, 0), tp(10.0, 0)]), 0.0);
        assert_eq!(compute_auc(&[tp(0.0, 0), tp(0.0, 1), tp(10.0, 1)]), 10.0);
        assert_eq!(compute_auc(&[tp(0.0, 0), tp(2.0, 1), tp(6.0, 2), tp(10.0, 2)]), 12.0);
        assert_eq!(compute_auc_until(&[tp(0.0, 0), tp(2.0, 1), tp(6.0, 2)], 4.0), 2.0);
    }

    #[test]
    fn auc_matches_exact_integral_on_fixed_timelines() {
        let timelines = [
            vec![tp(0.0, 0), tp(1.5, 0), tp(3.0, 1), tp(7.25, 1), tp(9.0, 3)],
            vec![tp(0.0, 0), tp(0.1, 1), tp(0.2, 2), tp(0.3, 3)],
            vec![tp(0.0, 0), tp(5.0, 0), tp(12.5, 0)],
            vec![tp(0.0, 0), tp(4.0, 2), tp(4.0, 3), tp(20.0, 3), tp(33.3, 4)],
            vec![tp(0.0, 0), tp(8.4, 1), tp(16.8, 2), tp(25.2, 3), tp(33.6, 4), tp(42.0, 5)],
        ];
        for tl in &timelines {
            let end = tl.last().unwrap().t;
            assert!((compute_auc(tl) - auc_exact(tl, end)).abs() < 1e-9 * (1.0 + end * end));
        }
    }

    fn arb_timeline() -> impl proptest::strategy::Strategy<Value = Vec<TimelinePoint>> {
        proptest::collection::vec((0.0f64..20.0, proptest::bool::ANY), 0..30).prop_map(|steps| {
            let mut out = vec![tp(0.0, 0)];
            let (mut t, mut f) = (0.0, 0);
            for (dt, fail) in steps {
                t += dt;
                f += fail as usize;
                out.push(tp(t, f));
            }
            out
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn auc_is_the_step_integral(tl in arb_timeline(), extra in 0.0f64..50.0) {
            let horizon = tl.last().unwrap().t + extra;
            let got = compute_auc_until(&tl, horizon);
            prop_assert!((got - auc_exact(&tl, horizon)).abs() <= 1e-9 * (1.0 + horizon * horizon));
        }

        #[test]
        fn adding_a_failure_never_lowers_auc(tl in arb_timeline(), at in 0usize..30) {
            let end = tl.last().unwrap().t;
            let at = at.min(tl.len() - 1);
            let mut more = tl.clone();
            for p in &mut more[at..] {
                p.failures += 1;
            }
            prop_assert!(compute_auc_until(&more, end) >= compute_auc_until(&tl, end));
        }
    }

    #[test]
    fn timeline_accumulates_seconds_and_collisions() {
        let execs = [
            exec("a", 0, OutcomeKind::Completed, 8.0),
            exec("a", 0, OutcomeKind::Collision, 2.5),
            exec("a", 0, OutcomeKind::Stuck, 30.0),
            exec("a", 0, OutcomeKind::Collision, 4.0),
        ];
        let tl = timeline_of(&execs);
        assert_eq!(tl, [tp(0.0, 0), tp(8.0, 0), tp(10.5, 1), tp(40.5, 1), tp(44.5, 2)]);
        assert!(tl.windows(2).all(|w| w[0].t <= w[1].t && w[0].failures <= w[1].failures));
        assert_eq!(compute_auc(&tl), 34.0 + 0.0);
    }

    #[test]
    fn exhaustive_grid_skips_the_lead_in() {
        let trace = |secs: usize| synthetic_trace(&vec![Vec2::ZERO; secs * 20 + 1], &[]);
        assert_eq!(exhaustive_frames(&trace(48), 3.0).len(), 45);
        assert_eq!(exhaustive_frames(&trace(10), 3.0), [60, 80, 100, 120, 140, 160, 180]);
        assert!(exhaustive_frames(&trace(2), 3.0).is_empty());
    }

    #[test]
    fn config_validation() {
        StrategyConfig::default().validate().unwrap();
        for cfg in [
            StrategyConfig { o_b: 0.0, ..Default::default() },
            StrategyConfig { n_rp: 0, ..Default::default() },
            StrategyConfig { c: 0, ..Default::default() },
            StrategyConfig { repetitions: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
        assert_eq!("random".parse::<Strategy>().unwrap(), Strategy::RandomRp);
        assert!("greedy".parse::<Strategy>().is_err());
    }

    #[test]
    fn derived_seeds_separate_inputs() {
        let base = derive_seed(0, "crossing-ahead/0", 7);
        assert_eq!(base, derive_seed(0, "crossing-ahead/0", 7));
        assert_ne!(base, derive_seed(1, "crossing-ahead/0", 7));
        assert_ne!(base, derive_seed(0, "crossing-ahead/1", 7));
        assert_ne!(base, derive_seed(0, "crossing-ahead/0", 8));
    }

    #[test]
    fn proximity_ranks_by_first_appearance() {
        let ego = vec![Vec2::ZERO; 200];
        let present_from = |from: usize, p: Vec2| (0..200).map(|i| (i >= from).then_some(p)).collect();
        let trace = synthetic_trace(
            &ego,
            &[
                (1, "car.sedan", present_from(100, Vec2::new(0.0, 5.0))),
                (2, "car.suv", present_from(40, Vec2::new(0.0, -6.0))),
            ],
        );
        let ranked = proximity_ranking(&trace, &ForecastConfig::default()).unwrap();
        assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), [ActorId(2), ActorId(1)]);

        let far = synthetic_trace(&ego, &[(1, "car.sedan", present_from(0, Vec2::new(0.0, 50.0)))]);
        assert!(proximity_ranking(&far, &ForecastConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn foresee_takes_a_prefix_of_the_ranking() {
        let ego = crate::testkit::ego_east(300, 10.0);
        let parked = |x: f64| vec![Some(Vec2::new(x, 3.0)); 300];
        let trace = synthetic_trace(&ego, &[(1, "car.sedan", parked(40.0)), (2, "car.van", parked(100.0))]);
        let seed = road();
        let frames = |n_rp| {
            let cfg = StrategyConfig { n_rp, ..Default::default() };
            select_frames(&cfg, &seed, &trace, 3).unwrap()
        };
        let all = frames(100);
        assert_eq!(all.len(), 2);
        assert_eq!(frames(1), all[..1]);
        assert_eq!(frames(4), all);
    }

    #[test]
    fn random_frames_are_reproducible_route_arrivals() {
        let seed = road();
        let trace = run(&seed).unwrap();
        let arrivals = waypoint_arrival_frames(&seed, &trace).unwrap();
        assert!(arrivals.windows(2).all(|w| w[0] <= w[1]));
        let cfg = StrategyConfig { strategy: Strategy::RandomRp, ..Default::default() };
        let a = select_frames(&cfg, &seed, &trace, 9).unwrap();
        assert_eq!(a, select_frames(&cfg, &seed, &trace, 9).unwrap());
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|f| arrivals.contains(f) && *f >= 100));

        // Only the final arrival lies past the lead-in.
        let last = *arrivals.last().unwrap();
        assert!(arrivals[arrivals.len() - 2] < last);
        let late = StrategyConfig { o_b: last as f64 / trace.tick_rate, ..cfg };
        assert_eq!(select_frames(&late, &seed, &trace, 9).unwrap(), [last]);
    }

    #[test]
    fn seed_without_risky_points_costs_nothing() {
        let seed = SeedRun::new(road());
        let f = run_seed(&StrategyConfig::default(), &seed, 0);
        assert_eq!((f.risky_frames.len(), f.clips, f.executions.len()), (0, 0, 0));
        assert!(f.error.is_none());
    }

    #[test]
    fn failing_seed_is_reported_and_skipped() {
        let mut s = road();
        s.map.static_obstacles.push(crate::map::StaticObstacle {
            id: 0,
            class: crate::map::ObstacleClass::Barrier,
            shape: crate::geom::Rect::new(Vec2::new(3.5, 0.0), 0.0, 1.0, 4.0),
        });
        let seed = SeedRun::new(s);
        let f = run_seed(&StrategyConfig::default(), &seed, 0);
        assert!(f.error.as_deref().unwrap().contains("not failure-free"));
        assert!(f.executions.is_empty());
    }

    #[test]
    fn every_clip_gets_exactly_c_children() {
        let seed = SeedRun::new(lookup("crossing-ahead/1").unwrap());
        for strategy in [Strategy::Foresee, Strategy::RandomRp, Strategy::ProximityRank] {
            let cfg = StrategyConfig { strategy, c: 3, n_rp: 2, ..Default::default() };
            let f = run_seed(&cfg, &seed, 1);
            assert_eq!(f.executions.len(), f.clips * cfg.c, "{strategy}");
            assert_eq!(f.clips + f.skipped.len(), f.risky_frames.len(), "{strategy}");
            assert!(f.clips >= 1, "{strategy}");
            assert!(f.executions.iter().all(|e| e.repetition == 1 && e.strategy == strategy));
        }
    }

    #[test]
    fn aggregate_averages_repetitions() {
        use OutcomeKind::*;
        let cfg = StrategyConfig { repetitions: 3, ..Default::default() };
        let frags = vec![
            fragment("a", 0, 2, vec![exec("a", 0, Collision, 2.0), exec("a", 0, Completed, 8.0)]),
            fragment("b", 0, 0, vec![]),
            fragment("a", 1, 2, vec![exec("a", 1, Collision, 1.0), exec("a", 1, Collision, 1.0)]),
            fragment("b", 1, 0, vec![]),
            fragment("a", 2, 2, vec![exec("a", 2, Stuck, 30.0)]),
            fragment("b", 2, 1, vec![exec("b", 2, Collision, 5.0), exec("b", 2, Collision, 5.0)]),
        ];
        let ids = vec!["a".to_string(), "b".to_string()];
        let r = aggregate(&cfg, &ids, frags, 1.5);
        let agg = &r.aggregate;
        assert!((agg.failures - 5.0 / 3.0).abs() < 1e-12);
        assert!((agg.risky_points - 7.0 / 3.0).abs() < 1e-12);
        assert!((agg.failure_rate - 5.0 / 7.0).abs() < 1e-12);
        assert!((agg.stuck - 1.0 / 3.0).abs() < 1e-12);
        assert!((agg.sim_seconds - 52.0 / 3.0).abs() < 1e-12);
        assert!((agg.failures_by_type[&FailureType::F3] - 5.0 / 3.0).abs() < 1e-12);
        // Repetition AUCs: 8, 1 and 5 over their own horizons.
        let aucs: Vec<f64> = r.repetitions.iter().map(|x| x.auc).collect();
        assert_eq!(aucs, [8.0, 1.0, 5.0]);
        assert!((r.auc - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.repetitions[2].seed, 2);
        assert_eq!(r.seeds[1].tally.failures, 2.0 / 3.0);
        assert_eq!(r.converted_seeds(), ids);
        assert_eq!(r.without_wall_clock().wall_time, 0.0);
        // Wall seconds are a quarter of simulated seconds in `exec`.
        let wall: Vec<f64> = r.timelines(TimeAxis::Wall).iter().map(|tl| compute_auc(tl)).collect();
        assert_eq!(wall, [2.0, 0.25, 1.25]);
        assert_eq!(r.timelines(TimeAxis::Sim)[1], r.repetitions[1].timeline);
        assert!(r
            .without_wall_clock()
            .timelines(TimeAxis::Wall)
            .iter()
            .all(|tl| tl.iter().all(|p| p.t == 0.0)));

        let one = StrategyConfig { repetitions: 1, ..Default::default() };
        let r1 = aggregate(&one, &ids[..1], vec![fragment("a", 0, 2, vec![exec("a", 0, Collision, 2.0)])], 0.0);
        assert_eq!(r1.aggregate, r1.repetitions[0].tally);
        assert_eq!(r1.auc, r1.repetitions[0].auc);
    }

    #[test]
    fn report_files_are_written() {
        let cfg = StrategyConfig { repetitions: 1, ..Default::default() };
        let ids = vec!["a".to_string()];
        let r = aggregate(&cfg, &ids, vec![fragment("a", 0, 1, vec![exec("a", 0, OutcomeKind::Collision, 2.0)])], 3.0);
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("executions.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "seed_id,strategy,repetition,rp_frame,child_idx,mutation_op,outcome,failure_type,sim_seconds"
        );
        assert_eq!(lines.next().unwrap(), "a,foresee,0,100,0,model_swap(1->car.suv),Collision,F3,2.0");
        let back: CampaignReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r.without_wall_clock());
        assert!(std::fs::read_to_string(dir.path().join("curve.svg")).unwrap().contains("foresee"));
        let timing: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("timing.json")).unwrap()).unwrap();
        assert_eq!(timing["wall_time"], 3.0);
        assert_eq!(timing["wall_auc"][0], 0.0);
        let wall = std::fs::read_to_string(dir.path().join("timeline_wall.csv")).unwrap();
        assert_eq!(wall, "repetition,wall_seconds,cumulative_failures\n0,0,0\n0,0.5,1\n");

        write_report_on(&r, dir.path(), TimeAxis::Wall).unwrap();
        assert!(std::fs::read_to_string(dir.path().join("curve.svg")).unwrap().contains("wall-clock seconds"));
    }

    #[test]
    fn time_axis_parses() {
        assert_eq!("sim".parse::<TimeAxis>().unwrap(), TimeAxis::Sim);
        assert_eq!("wall".parse::<TimeAxis>().unwrap(), TimeAxis::Wall);
        assert!(matches!("cpu".parse::<TimeAxis>(), Err(Error::InvalidConfig(_))));
    }
}
