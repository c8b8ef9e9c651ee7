//! Greedy evaluation episodes and the SR / SPL metric suite.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridworld::{Action, Episode, Observation, Scene};
use crate::policy::{argmax, NavigationModel, PolicyState, StateVars};
use crate::tensor::{Graph, ParamSet};

/// Episodes whose optimal length reaches this value form the long split.
pub const LONG_PATH: u32 = 5;

/// Outcome of one evaluation episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeResult {
    pub run: usize,
    pub scene: usize,
    pub episode: usize,
    pub target: usize,
    pub seed: u64,
    pub success: bool,
    /// `L_n`, actions taken.
    pub path_length: u32,
    /// `L_opt` from the start pose.
    pub optimal_length: u32,
}

pub const RESULTS_HEADER: &str = "run,scene,episode,target,seed,success,path_length,optimal_length";

impl fmt::Display for EpisodeResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.run,
            self.scene,
            self.episode,
            self.target,
            self.seed,
            u8::from(self.success),
            self.path_length,
            self.optimal_length
        )
    }
}

/// Parses rows written with [`RESULTS_HEADER`].
pub fn parse_results_csv(text: &str) -> Result<Vec<EpisodeResult>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == RESULTS_HEADER {
            continue;
        }
        let bad = |message: String| Error::Parse { path: "<results>".into(), line: i + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", fields.len())));
        }
        let num = |k: usize| fields[k].parse::<u64>().map_err(|e| bad(format!("field {}: {e}", k + 1)));
        out.push(EpisodeResult {
            run: num(0)? as usize,
            scene: num(1)? as usize,
            episode: num(2)? as usize,
            target: num(3)? as usize,
            seed: num(4)?,
            success: num(5)? != 0,
            path_length: num(6)? as u32,
            optimal_length: num(7)? as u32,
        });
    }
    Ok(out)
}

/// Something that picks actions during evaluation.
pub trait Agent {
    /// Prepares for a new episode.
    fn reset(&mut self, seed: u64);
    fn act(&mut self, episode: &Episode) -> Result<Action>;
}

/// Follows the shortest-path planner.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertAgent;

impl Agent for ExpertAgent {
    fn reset(&mut self, _seed: u64) {}

    fn act(&mut self, episode: &Episode) -> Result<Action> {
        episode.expert_action()
    }
}

/// Uniformly random actions.
#[derive(Clone, Debug)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl Default for RandomAgent {
    fn default() -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Agent for RandomAgent {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, _episode: &Episode) -> Result<Action> {
        Ok(Action::ALL[self.rng.random_range(0..Action::COUNT)])
    }
}

/// Greedy (argmax) actor-critic policy.
#[derive(Clone, Debug)]
pub struct PolicyAgent {
    model: NavigationModel,
    params: Arc<ParamSet>,
    window: VecDeque<Observation>,
    state: PolicyState,
}

impl PolicyAgent {
    pub fn new(model: NavigationModel, params: Arc<ParamSet>) -> Self {
        let state = PolicyState::zeros(model.policy.d_hidden());
        Self { model, params, window: VecDeque::new(), state }
    }
}

impl Agent for PolicyAgent {
    fn reset(&mut self, _seed: u64) {
        self.window.clear();
        self.state = PolicyState::zeros(self.model.policy.d_hidden());
    }

    fn act(&mut self, episode: &Episode) -> Result<Action> {
        self.window.push_back(episode.observation().clone());
        if self.window.len() > self.model.config().seq_len {
            self.window.pop_front();
        }
        let mut g = Graph::inference(&self.params);
        let vars = StateVars::bind(&mut g, &self.state);
        let refs: Vec<&Observation> = self.window.iter().collect();
        let target = episode.target();
        let out = self.model.step(&mut g, &refs, target, vars)?;
        let action = Action::from_index(argmax(g.value(out.logits).data())).expect("six logits");
        self.state = StateVars { prev_action: Some(action), ..out.state }.to_state(&g);
        Ok(action)
    }
}

/// Evaluation protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub episodes_per_scene: usize,
    pub seed: u64,
    pub max_steps: u32,
    pub run: usize,
}

/// Runs `episodes_per_scene` episodes in every scene with a fresh agent
/// per episode. Targets, start poses and agent seeds derive from
/// `config.seed` only, so the result list is reproducible; it is sorted by
/// (scene, episode).
pub fn run_eval<A, F>(make_agent: F, scenes: &[Arc<Scene>], config: &EvalConfig) -> Result<Vec<EpisodeResult>>
where
    A: Agent,
    F: Fn() -> A + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..config.episodes_per_scene).map(move |e| (s, e)))
        .collect();
    jobs.par_iter()
        .map(|&(scene_index, episode)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((scene_index * config.episodes_per_scene + episode) as u64);
            let scene = &scenes[scene_index];
            let targets = scene.categories_present();
            let target = targets[rng.random_range(0..targets.len())];
            let seed = rng.random::<u64>();
            let mut ep = Episode::reset(Arc::clone(scene), target, seed, config.max_steps)?;
            let mut agent = make_agent();
            agent.reset(rng.random::<u64>());
            while !ep.is_done() {
                let action = agent.act(&ep)?;
                ep.step(action)?;
            }
            Ok(EpisodeResult {
                run: config.run,
                scene: scene_index,
                episode,
                target,
                seed,
                success: ep.is_success(),
                path_length: ep.steps_taken(),
                optimal_length: ep.optimal_length(),
            })
        })
        .collect()
}

/// `(1/N)·Σ S_n`.
pub fn success_rate(results: &[EpisodeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results".into()));
    }
    Ok(results.iter().filter(|r| r.success).count() as f64 / results.len() as f64)
}

/// `S·L_opt / max(L_n, L_opt)` for one episode.
pub fn spl_term(result: &EpisodeResult) -> Result<f64> {
    if result.path_length == 0 || result.optimal_length == 0 {
        return Err(Error::InvalidArgument(format!(
            "path lengths must be positive (L_n = {}, L_opt = {})",
            result.path_length, result.optimal_length
        )));
    }
    if !result.success {
        return Ok(0.0);
    }
    Ok(f64::from(result.optimal_length) / f64::from(result.path_length.max(result.optimal_length)))
}

/// `(1/N)·Σ S_n·L_opt/max(L_n, L_opt)`.
pub fn spl(results: &[EpisodeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no results".into()));
    }
    let mut total = 0.0;
    for r in results {
        total += spl_term(r)?;
    }
    Ok(total / results.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    All,
    Long,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::All => "ALL",
            Split::Long => "L_opt>=5",
        }
    }

    fn contains(self, r: &EpisodeResult) -> bool {
        match self {
            Split::All => true,
            Split::Long => r.optimal_length >= LONG_PATH,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Sr,
    Spl,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Sr => "SR",
            Metric::Spl => "SPL",
        }
    }
}

/// One line of a split report. `mean` is `None` when the split holds no
/// episodes; `variance` is `None` with fewer than two runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub split: Split,
    pub metric: Metric,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub n_runs: usize,
    pub n_episodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "split,metric,mean,variance,n_runs,n_episodes";

/// Mean and population variance of `values`.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// SR and SPL for all episodes and for the `L_opt ≥ 5` subset, as means
/// and population variances of per-run values. Runs are identified by
/// [`EpisodeResult::run`]; a run with no episodes in a split does not
/// contribute to it.
pub fn split_report(results: &[EpisodeResult]) -> Result<SplitReport> {
    let mut by_run: BTreeMap<usize, Vec<&EpisodeResult>> = BTreeMap::new();
    for r in results {
        by_run.entry(r.run).or_default().push(r);
    }
    if by_run.len() < 2 {
        log::warn!("{} run(s): variance omitted", by_run.len());
    }
    let mut rows = Vec::new();
    for split in [Split::All, Split::Long] {
        let subsets: Vec<Vec<EpisodeResult>> = by_run
            .values()
            .map(|run| run.iter().filter(|r| split.contains(r)).map(|r| (*r).clone()).collect::<Vec<_>>())
            .filter(|s| !s.is_empty())
            .collect();
        let n_episodes = subsets.iter().map(Vec::len).sum();
        for metric in [Metric::Sr, Metric::Spl] {
            let values = subsets
                .iter()
                .map(|s| match metric {
                    Metric::Sr => success_rate(s),
                    Metric::Spl => spl(s),
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, variance) = if values.is_empty() {
                (None, None)
            } else {
                let (m, v) = mean_and_variance(&values);
                (Some(m), (values.len() >= 2).then_some(v))
            };
            rows.push(ReportRow { split, metric, mean, variance, n_runs: values.len(), n_episodes });
        }
    }
    Ok(SplitReport { rows })
}

impl SplitReport {
    pub fn row(&self, split: Split, metric: Metric) -> &ReportRow {
        self.rows.iter().find(|r| r.split == split && r.metric == metric).expect("every split and metric present")
    }

    /// CSV with [`REPORT_HEADER`]; undefined values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.split.label(),
                r.metric.label(),
                opt(r.mean),
                opt(r.variance),
                r.n_runs,
                r.n_episodes
            ));
        }
        out
    }
}

impl fmt::Display for SplitReport {
    /// Human-readable table.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:<6} {:>8} {:>10} {:>6} {:>9}", "split", "metric", "mean", "variance", "runs", "episodes")?;
        for r in &self.rows {
            let mean = r.mean.map_or("undef".to_string(), |m| format!("{m:.4}"));
            let var = r.variance.map_or("-".to_string(), |v| format!("{v:.6}"));
            writeln!(
                f,
                "{:<10} {:<6} {:>8} {:>10} {:>6} {:>9}",
                r.split.label(),
                r.metric.label(),
                mean,
                var,
                r.n_runs,
                r.n_episodes
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(run: usize, success: bool, path_length: u32, optimal_length: u32) -> EpisodeResult {
        EpisodeResult { run, scene: 0, episode: 0, target: 0, seed: 0, success, path_length, optimal_length }
    }

    #[test]
    fn hand_cases() {
        let rs: Vec<_> = [true, true, true, false].iter().map(|&s| result(0, s, 3, 3)).collect();
        assert_eq!(success_rate(&rs).unwrap(), 0.75);
        assert_eq!(spl(&[result(0, true, 10, 5)]).unwrap(), 0.5);
        assert_eq!(spl(&[result(0, true, 4, 4)]).unwrap(), 1.0);
        assert_eq!(success_rate(&[result(0, false, 3, 3)]).unwrap(), 0.0);
        assert!(success_rate(&[]).is_err() && spl(&[]).is_err());
        assert!(spl(&[result(0, true, 0, 3)]).is_err());
    }

    #[test]
    fn degenerate_splits() {
        let rs = vec![result(0, true, 3, 3), result(0, false, 50, 2)];
        let report = split_report(&rs).unwrap();
        let long = report.row(Split::Long, Metric::Sr);
        assert_eq!((long.mean, long.n_episodes), (None, 0));
        assert_eq!(report.row(Split::All, Metric::Sr).variance, None);
        let mut twice = rs.clone();
        twice.extend(rs.iter().map(|r| EpisodeResult { run: 1, ..r.clone() }));
        let report = split_report(&twice).unwrap();
        assert_eq!(report.row(Split::All, Metric::Spl).variance, Some(0.0));
        assert!(report.to_csv().starts_with(REPORT_HEADER));
    }

    #[test]
    fn results_csv_round_trip() {
        let rs = vec![result(2, true, 7, 5), result(3, false, 50, 9)];
        let text = std::iter::once(RESULTS_HEADER.to_string()).chain(rs.iter().map(|r| r.to_string())).collect::<Vec<_>>().join("\n");
        assert_eq!(parse_results_csv(&text).unwrap(), rs);
    }
}
