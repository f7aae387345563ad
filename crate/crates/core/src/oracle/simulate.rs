//! Regenerative simulation of the walk.
//!
//! A path is cut into cycles between successive visits to layer 0. The
//! mean cycle length estimates the expected return time, the phase at the
//! start of each cycle follows the censored layer-0 chain, and visits per
//! cycle divided by mean cycle length estimate the stationary distribution.
//! Standard errors come from batch means over consecutive cycles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::sampler::Sampler;
use crate::error::{Error, Result};
use crate::model::QbdModel;
use crate::numeric::{Matrix, RowVector};

pub const DEFAULT_CYCLES: u64 = 100_000;
pub const DEFAULT_REPLICATIONS: usize = 8;
pub const DEFAULT_BATCHES: usize = 8;
pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_WARMUP: u64 = 100;
pub const MAX_CYCLE_STEPS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Number of standard errors separating the estimate from `exact`.
    /// A zero standard error with an exact match counts as zero.
    pub fn z_score(&self, exact: f64) -> f64 {
        let gap = (self.mean - exact).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.se
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimBudget {
    Cycles(u64),
    Steps(u64),
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub budget: SimBudget,
    /// Independent paths, one random stream each.
    pub replications: usize,
    /// Batches per replication for the standard errors.
    pub batches: usize,
    /// Highest level whose visits are tallied.
    pub max_level: usize,
    /// Cycles run and thrown away at the start of each path.
    pub warmup: u64,
    /// Cycles longer than this are abandoned and the path restarts on layer 0.
    pub max_cycle_steps: u64,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            budget: SimBudget::Cycles(DEFAULT_CYCLES),
            replications: DEFAULT_REPLICATIONS,
            batches: DEFAULT_BATCHES,
            max_level: DEFAULT_WINDOW,
            warmup: DEFAULT_WARMUP,
            max_cycle_steps: MAX_CYCLE_STEPS,
        }
    }

    pub fn with_cycles(mut self, cycles: u64) -> Self {
        self.budget = SimBudget::Cycles(cycles);
        self
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.budget = SimBudget::Steps(steps);
        self
    }

    pub fn with_max_level(mut self, max_level: usize) -> Self {
        self.max_level = max_level;
        self
    }

    fn check(&self) -> Result<()> {
        if self.replications == 0 || self.batches < 2 {
            return Err(Error::InvalidArgument(
                "simulation needs at least one replication and two batches".into(),
            ));
        }
        let total = match self.budget {
            SimBudget::Cycles(c) => c,
            SimBudget::Steps(s) => s,
        };
        if total < (self.replications * self.batches) as u64 {
            return Err(Error::InvalidArgument(format!(
                "budget {total} is smaller than replications x batches"
            )));
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-batch sums; merged across replications by concatenation.
#[derive(Debug, Clone)]
struct Batch {
    cycles: f64,
    steps: f64,
    start_phase: Vec<f64>,
    /// `visits[n * d + j]`.
    visits: Vec<f64>,
}

impl Batch {
    fn new(d: usize, window: usize) -> Self {
        Self {
            cycles: 0.0,
            steps: 0.0,
            start_phase: vec![0.0; d],
            visits: vec![0.0; (window + 1) * d],
        }
    }
}

struct PathResult {
    batches: Vec<Batch>,
    transitions: Vec<f64>,
    steps: u64,
    discarded: u64,
    overflow: f64,
}

/// Ratio estimator `sum num / sum den` with its batch-means standard error.
fn ratio(num: &[f64], den: &[f64]) -> Estimate {
    let b = num.len() as f64;
    let (sn, sd): (f64, f64) = (num.iter().sum(), den.iter().sum());
    if sd == 0.0 {
        return Estimate {
            mean: f64::NAN,
            se: f64::INFINITY,
        };
    }
    let r = sn / sd;
    let ss: f64 = num.iter().zip(den).map(|(v, t)| (v - r * t).powi(2)).sum();
    let se = (ss / (b * (b - 1.0))).sqrt() / (sd / b);
    Estimate { mean: r, se }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimStats {
    pub seed: u64,
    pub cycles: u64,
    pub steps: u64,
    pub discarded: u64,
    pub batches: usize,
    /// Expected return time to layer 0 under the censored law.
    pub mean_return_time: Estimate,
    /// Layer-0 phase frequencies at cycle starts.
    pub censored_measure: Vec<Estimate>,
    /// Row-normalized counts of successive cycle-start phases.
    pub censored_transitions: Matrix,
    /// `visits_per_cycle[n][j]`.
    pub visits_per_cycle: Vec<Vec<Estimate>>,
    /// Long-run fraction of time in `(n, j)`.
    pub empirical_distribution: Vec<Vec<Estimate>>,
    /// Fraction of time spent above the tallied window.
    pub mass_above_window: f64,
    #[serde(skip)]
    raw: RawBatches,
}

/// Batch sums kept for pooled estimates.
#[derive(Debug, Clone, Default)]
struct RawBatches {
    d: usize,
    cycles: Vec<f64>,
    steps: Vec<f64>,
    visits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Per {
    Cycle,
    Step,
}

impl SimStats {
    /// Ratio estimate for the total over a set of `(level, phase)` cells,
    /// either per cycle or as a fraction of time.
    pub fn pooled(&self, cells: &[(usize, usize)], per: Per) -> Estimate {
        let raw = &self.raw;
        let num: Vec<f64> = raw
            .visits
            .iter()
            .map(|v| cells.iter().map(|&(n, j)| v[n * raw.d + j]).sum())
            .collect();
        let den = match per {
            Per::Cycle => &raw.cycles,
            Per::Step => &raw.steps,
        };
        ratio(&num, den)
    }
}

/// Simulates the walk and summarizes its regenerative cycles.
pub fn simulate(model: &QbdModel, config: &SimConfig) -> Result<SimStats> {
    config.check()?;
    let sampler = Sampler::new(model);
    let d = model.d;
    let reps = config.replications;

    let paths: Vec<PathResult> = (0..reps)
        .into_par_iter()
        .map(|rep| run_path(&sampler, d, config, rep))
        .collect();

    let mut batches = Vec::new();
    let mut transitions = vec![0.0; d * d];
    let (mut steps, mut discarded, mut overflow) = (0u64, 0u64, 0.0);
    for p in paths {
        batches.extend(p.batches);
        for (t, x) in transitions.iter_mut().zip(&p.transitions) {
            *t += x;
        }
        steps += p.steps;
        discarded += p.discarded;
        overflow += p.overflow;
    }

    let col = |f: &dyn Fn(&Batch) -> f64| batches.iter().map(f).collect::<Vec<f64>>();
    let cycles_b = col(&|b| b.cycles);
    let steps_b = col(&|b| b.steps);
    let cycles: f64 = cycles_b.iter().sum();
    let total_steps: f64 = steps_b.iter().sum();
    if cycles == 0.0 {
        return Err(Error::InvalidArgument(
            "no complete cycle was observed; raise the budget".into(),
        ));
    }

    let censored_measure = (0..d)
        .map(|j| ratio(&col(&|b| b.start_phase[j]), &cycles_b))
        .collect();
    let mut visits_per_cycle = Vec::with_capacity(config.max_level + 1);
    let mut empirical_distribution = Vec::with_capacity(config.max_level + 1);
    for n in 0..=config.max_level {
        let mut per_cycle = Vec::with_capacity(d);
        let mut dist = Vec::with_capacity(d);
        for j in 0..d {
            let v = col(&|b| b.visits[n * d + j]);
            per_cycle.push(ratio(&v, &cycles_b));
            dist.push(ratio(&v, &steps_b));
        }
        visits_per_cycle.push(per_cycle);
        empirical_distribution.push(dist);
    }

    let mut rows = Vec::with_capacity(d);
    for i in 0..d {
        let row = &transitions[i * d..(i + 1) * d];
        let total: f64 = row.iter().sum();
        rows.push(
            row.iter()
                .map(|x| if total > 0.0 { x / total } else { 0.0 })
                .collect(),
        );
    }

    Ok(SimStats {
        seed: config.seed,
        cycles: cycles as u64,
        steps,
        discarded,
        batches: batches.len(),
        mean_return_time: ratio(&steps_b, &cycles_b),
        censored_measure,
        censored_transitions: Matrix::from_rows(&rows)?,
        visits_per_cycle,
        empirical_distribution,
        mass_above_window: overflow / total_steps,
        raw: RawBatches {
            d,
            visits: batches.iter().map(|b| b.visits.clone()).collect(),
            cycles: cycles_b,
            steps: steps_b,
        },
    })
}

fn run_path(sampler: &Sampler, d: usize, config: &SimConfig, rep: usize) -> PathResult {
    let mut rng = rng_for(config.seed, rep as u64);
    let window = config.max_level;
    let nb = config.batches;
    let reps = config.replications as u64;
    let mut batches = vec![Batch::new(d, window); nb];
    let mut transitions = vec![0.0; d * d];
    let mut cycle_visits = vec![0.0; (window + 1) * d];
    let (mut discarded, mut overflow, mut total_steps) = (0u64, 0.0, 0u64);

    let (quota, by_steps) = match config.budget {
        SimBudget::Cycles(c) => (c / reps + u64::from((rep as u64) < c % reps), false),
        SimBudget::Steps(s) => (s / reps + u64::from((rep as u64) < s % reps), true),
    };

    let mut phase = 0;
    let mut warm = 0;
    let mut recorded = 0u64;
    let mut counted_steps = 0u64;
    let mut prev_start: Option<usize> = None;
    loop {
        // One cycle from (0, phase) back to layer 0.
        let start = phase;
        cycle_visits.iter_mut().for_each(|x| *x = 0.0);
        let mut cycle_overflow = 0.0;
        let (mut level, mut ph) = (0usize, start);
        let mut len = 0u64;
        let mut abandoned = false;
        loop {
            if level <= window {
                cycle_visits[level * d + ph] += 1.0;
            } else {
                cycle_overflow += 1.0;
            }
            let (nl, np) = sampler.step(&mut rng, level, ph);
            len += 1;
            level = nl;
            ph = np;
            if level == 0 {
                break;
            }
            if len >= config.max_cycle_steps {
                abandoned = true;
                break;
            }
        }
        total_steps += len;

        if abandoned {
            discarded += 1;
            phase = start;
            prev_start = None;
            if by_steps && counted_steps + len >= quota {
                break;
            }
            counted_steps += len;
            continue;
        }
        phase = ph;

        if warm < config.warmup {
            warm += 1;
            prev_start = Some(start);
            continue;
        }
        if by_steps && counted_steps + len > quota {
            break;
        }
        let b = if by_steps {
            (counted_steps * nb as u64 / quota) as usize
        } else {
            (recorded * nb as u64 / quota) as usize
        };
        let batch = &mut batches[b.min(nb - 1)];
        batch.cycles += 1.0;
        batch.steps += len as f64;
        batch.start_phase[start] += 1.0;
        for (acc, v) in batch.visits.iter_mut().zip(&cycle_visits) {
            *acc += v;
        }
        overflow += cycle_overflow;
        if let Some(p) = prev_start {
            transitions[p * d + start] += 1.0;
        }
        prev_start = Some(start);
        recorded += 1;
        counted_steps += len;
        if !by_steps && recorded >= quota {
            break;
        }
    }

    PathResult {
        batches,
        transitions,
        steps: total_steps,
        discarded,
        overflow,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Serialize)]
pub struct PassageConfig {
    pub seed: u64,
    pub trials: u64,
    /// Trials still running after this many steps are counted as censored.
    pub max_steps: u64,
    /// Levels above the start tallied for downward passages.
    pub window: usize,
}

impl PassageConfig {
    pub fn new(seed: u64, trials: u64) -> Self {
        Self {
            seed,
            trials,
            max_steps: 1_000_000,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PassageStats {
    pub trials: u64,
    pub censored: u64,
    /// Phase on first arrival at the target level, per trial.
    pub exit: Vec<Estimate>,
    /// First tallied level of `visits`.
    pub first_level: usize,
    /// Mean visits per trial to each `(level, phase)` before exiting,
    /// including the starting visit.
    pub visits: Vec<Vec<Estimate>>,
}

/// Runs first passages from layer `k` (phase drawn from `mu`) to layer
/// `k + 1` or `k - 1`.
pub fn simulate_passage(
    model: &QbdModel,
    k: usize,
    mu: &RowVector,
    direction: Direction,
    config: &PassageConfig,
) -> Result<PassageStats> {
    let d = model.d;
    if mu.len() != d || !mu.is_probability(1e-9) {
        return Err(Error::InvalidArgument(
            "start law must be a probability vector over the phases".into(),
        ));
    }
    if direction == Direction::Down && k == 0 {
        return Err(Error::InvalidArgument("no level below layer 0".into()));
    }
    if config.trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let (first_level, last_level) = match direction {
        Direction::Up => (0, k),
        Direction::Down => (k, k + config.window),
    };
    let span = last_level - first_level + 1;
    let sampler = Sampler::new(model);
    let chunks = DEFAULT_REPLICATIONS as u64;

    // Trials are independent, so plain sample moments give the standard
    // errors. One random stream per chunk.
    let results: Vec<(Tally, Tally)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(config.seed, c);
            let n = config.trials / chunks + u64::from(c < config.trials % chunks);
            let mut exit = Tally::new(d);
            let mut visits = Tally::new(span * d);
            let mut trial = vec![0.0; span * d];
            let mut censored = 0;
            let cum: Vec<f64> =
                mu.0.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect();
            for _ in 0..n {
                let u = rand::Rng::random::<f64>(&mut rng) * cum[d - 1];
                let mut ph = cum.partition_point(|&c| c <= u).min(d - 1);
                let mut level = k;
                let mut steps = 0;
                trial.iter_mut().for_each(|x| *x = 0.0);
                let mut exit_phase = None;
                loop {
                    if (first_level..=last_level).contains(&level) {
                        trial[(level - first_level) * d + ph] += 1.0;
                    }
                    let (nl, np) = sampler.step(&mut rng, level, ph);
                    level = nl;
                    ph = np;
                    steps += 1;
                    let target = match direction {
                        Direction::Up => level == k + 1,
                        Direction::Down => level + 1 == k,
                    };
                    if target {
                        exit_phase = Some(ph);
                        break;
                    }
                    if steps >= config.max_steps {
                        censored += 1;
                        break;
                    }
                }
                let mut hit = vec![0.0; d];
                if let Some(j) = exit_phase {
                    hit[j] = 1.0;
                }
                exit.add(&hit);
                visits.add(&trial);
            }
            exit.censored = censored;
            (exit, visits)
        })
        .collect();

    let mut exit = Tally::new(d);
    let mut visits = Tally::new(span * d);
    let mut censored = 0;
    for r in results {
        censored += r.0.censored;
        exit.absorb(&r.0);
        visits.absorb(&r.1);
    }
    let visit_est = visits.estimates();
    let visits = visit_est.chunks(d).map(|c| c.to_vec()).collect();
    Ok(PassageStats {
        trials: config.trials,
        censored,
        exit: exit.estimates(),
        first_level,
        visits,
    })
}

/// Sums and sums of squares of per-trial vectors.
#[derive(Debug, Clone)]
struct Tally {
    n: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    censored: u64,
}

impl Tally {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
            censored: 0,
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    fn absorb(&mut self, other: &Tally) {
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }

    fn estimates(&self) -> Vec<Estimate> {
        let n = self.n;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let mean = s / n;
                let var = ((q - n * mean * mean) / (n - 1.0)).max(0.0);
                Estimate {
                    mean,
                    se: (var / n).sqrt(),
                }
            })
            .collect()
    }
}

/// Monte Carlo estimate of `zeta_n^+` (up) or `zeta_n^-` (down), row by row,
/// as `(mean, standard error)` matrices.
pub fn estimate_exit_probability(
    model: &QbdModel,
    n: usize,
    direction: Direction,
    config: &PassageConfig,
) -> Result<(Matrix, Matrix)> {
    let d = model.d;
    let mut mean = Vec::with_capacity(d);
    let mut se = Vec::with_capacity(d);
    for i in 0..d {
        let cfg = PassageConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        let stats = simulate_passage(model, n, &RowVector::unit(d, i), direction, &cfg)?;
        mean.push(stats.exit.iter().map(|e| e.mean).collect());
        se.push(stats.exit.iter().map(|e| e.se).collect());
    }
    Ok((Matrix::from_rows(&mean)?, Matrix::from_rows(&se)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockTriple;

    fn scalar_model(p: f64, q: f64) -> QbdModel {
        let s = |x: f64| Matrix::from_vec(1, 1, vec![x]).unwrap();
        QbdModel::homogeneous(s(1.0), BlockTriple::new(s(p), s(q), s(0.0)))
    }

    #[test]
    fn same_seed_same_stats() {
        let model = scalar_model(0.3, 0.7);
        let cfg = SimConfig::new(7).with_cycles(2_000);
        let a = simulate(&model, &cfg).unwrap();
        let b = simulate(&model, &cfg).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.mean_return_time, b.mean_return_time);
        assert_eq!(a.cycles, 2_000);
    }

    #[test]
    fn birth_death_return_time() {
        let model = scalar_model(0.3, 0.7);
        let stats = simulate(&model, &SimConfig::new(11).with_cycles(40_000)).unwrap();
        let t = stats.mean_return_time;
        assert!(t.z_score(3.5) < 4.0, "{t:?}");
        let nu1 = stats.empirical_distribution[1][0];
        assert!(nu1.z_score(20.0 / 49.0) < 4.0, "{nu1:?}");
    }

    #[test]
    fn step_budget_is_respected() {
        let model = scalar_model(0.3, 0.7);
        let stats = simulate(&model, &SimConfig::new(3).with_steps(50_000)).unwrap();
        let counted: f64 = stats.mean_return_time.mean * stats.cycles as f64;
        assert!(counted <= 50_000.0);
        assert!(stats.cycles > 10_000);
    }

    #[test]
    fn passage_down_scalar() {
        let model = scalar_model(0.7, 0.3);
        // From level 1 the walk ever reaches layer 0 with probability 3/7.
        let cfg = PassageConfig {
            max_steps: 2_000,
            ..PassageConfig::new(5, 4_000)
        };
        let stats =
            simulate_passage(&model, 1, &RowVector(vec![1.0]), Direction::Down, &cfg).unwrap();
        assert!(stats.exit[0].z_score(3.0 / 7.0) < 4.0, "{:?}", stats.exit);
        assert!(stats.censored > 0);
    }
}
