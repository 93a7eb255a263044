//! The adaptive parallel tempering loop.
//!
//! Each iteration flips a coin: with probability `alpha_r` every active
//! replica takes a Metropolis sweep followed by proposal learning; otherwise
//! one adjacent pair attempts an exchange and the hotter member's log inverse
//! temperature is nudged toward the target exchange ratio. Every
//! `check_period` iterations the flatness criterion may shorten the ladder.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{
    mean_jump_on_exchange, truncation_check, update_proposal, update_temperature,
    AdaptationSchedule, RunningMoments,
};
use crate::config::{AdaptToggles, GammaInit, RunConfig};
use crate::error::{Error, Result};
use crate::kernel::{metropolis_step, BlockLayout, GaussianNoise, NoiseSource, ProposalParams};
use crate::rng::StreamFactory;
use crate::target::TargetModel;
use crate::tempering::{exchange_log_ratio, TemperedParts, TemperingMode};

/// One rung of the ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaState {
    pub x: Vec<f64>,
    pub parts: TemperedParts,
    /// Log inverse temperature.
    pub zeta: f64,
    pub proposal: ProposalParams,
    /// Consecutive passes of the flatness criterion.
    pub counter: u32,
    pub moments: RunningMoments,
    /// False when this replica's parameters are held fixed.
    pub adaptive: bool,
    pub moves_proposed: u64,
    pub moves_accepted: u64,
}

impl ReplicaState {
    pub fn t(&self) -> f64 {
        self.zeta.exp()
    }

    pub fn log_tempered(&self) -> f64 {
        self.parts.at(self.t())
    }
}

/// Exchange statistics for the pair (l, l+1).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub attempted: u64,
    pub accepted: u64,
    pub attempted_post_burn_in: u64,
    pub accepted_post_burn_in: u64,
}

impl PairStats {
    /// Post-burn-in accepted / attempted.
    pub fn ratio(&self) -> Option<f64> {
        (self.attempted_post_burn_in > 0)
            .then(|| self.accepted_post_burn_in as f64 / self.attempted_post_burn_in as f64)
    }
}

/// Parameters of a replica removed by truncation, kept for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedReplica {
    /// 1-based ladder index.
    pub index: usize,
    pub removed_at: u64,
    pub t: f64,
    pub gamma: Vec<f64>,
    pub moves_proposed: u64,
    pub moves_accepted: u64,
    /// Statistics of the pair (index - 1, index).
    pub pair: Option<PairStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationEvent {
    pub iteration: u64,
    pub from: usize,
    pub to: usize,
}

/// Full sampler state between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderState {
    pub replicas: Vec<ReplicaState>,
    /// `pairs[i]` covers replicas `i` and `i + 1` (0-based).
    pub pairs: Vec<PairStats>,
    pub archived: Vec<ArchivedReplica>,
    pub truncations: Vec<TruncationEvent>,
    /// Iterations completed so far.
    pub n: u64,
}

impl LadderState {
    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn zetas(&self) -> Vec<f64> {
        self.replicas.iter().map(|r| r.zeta).collect()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.replicas.iter().map(|r| r.t()).collect()
    }
}

/// What happened during one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepKind {
    Parallel,
    /// Pair index `pair` (0-based, replicas `pair` and `pair + 1`).
    Exchange {
        pair: usize,
        accepted: bool,
        /// Change of the hotter replica's log inverse temperature and the
        /// gain used, when it was updated.
        zeta_change: Option<(f64, f64)>,
    },
    /// Exchange step drawn with fewer than two replicas.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub kind: StepKind,
    pub truncated: Option<TruncationEvent>,
}

/// Builds the initial ladder from a configuration.
///
/// Positions come from the target's initializer, `mu = x`, counters start at 0.
pub fn init_state<M: TargetModel + ?Sized>(
    config: &RunConfig,
    model: &M,
    streams: &StreamFactory,
) -> Result<LadderState> {
    config.validate()?;
    let mode = config.target.tempering;
    mode.check(model)?;
    let zetas = config.ladder.zetas()?;
    let len = zetas.len();
    let dim = model.dimension();
    let mut rng = streams.init();

    let positions: Vec<Vec<f64>> = (0..len).map(|_| model.initial_position(&mut rng)).collect();
    let gammas: Vec<Vec<f64>> = match &config.ladder.gamma {
        GammaInit::Constant { value } => vec![vec![*value; dim]; len],
        GammaInit::SortedUniform { low, high } => {
            let mut draws: Vec<f64> = (0..len).map(|_| rng.random_range(*low..=*high)).collect();
            draws.sort_by(f64::total_cmp);
            draws.into_iter().map(|g| vec![g; dim]).collect()
        }
        GammaInit::Explicit { values } => {
            if values.iter().any(|row| row.len() != dim) {
                return Err(Error::Config(format!(
                    "explicit gamma rows must have {dim} entries"
                )));
            }
            values.clone()
        }
    };

    let mut replicas = Vec::with_capacity(len);
    for (l, ((x, gamma), zeta)) in positions.into_iter().zip(gammas).zip(zetas).enumerate() {
        if x.len() != dim {
            return Err(Error::Config(
                "initial position has the wrong dimension".into(),
            ));
        }
        let parts = mode.parts(model, &x).map_err(|_| {
            Error::Config(format!(
                "initial position of replica {} is outside the support",
                l + 1
            ))
        })?;
        replicas.push(ReplicaState {
            proposal: ProposalParams::new(gamma, x.clone()),
            x,
            parts,
            zeta,
            counter: 0,
            moments: RunningMoments::new(dim),
            adaptive: l >= config.adapt.frozen_prefix,
            moves_proposed: 0,
            moves_accepted: 0,
        });
    }
    Ok(LadderState {
        replicas,
        pairs: vec![PairStats::default(); len.saturating_sub(1)],
        archived: Vec::new(),
        truncations: Vec::new(),
        n: 0,
    })
}

/// Drives [`LadderState`] through the adaptive PT iteration.
pub struct Sampler<'m, M: ?Sized, N = GaussianNoise> {
    model: &'m M,
    mode: TemperingMode,
    layout: BlockLayout,
    schedule: AdaptationSchedule,
    adapt: AdaptToggles,
    streams: StreamFactory,
    control: ChaCha8Rng,
    noise: N,
    /// Iterations with index >= this count toward post-burn-in statistics.
    burn_in: u64,
    pool: Option<rayon::ThreadPool>,
}

impl<'m, M: TargetModel + ?Sized> Sampler<'m, M, GaussianNoise> {
    pub fn new(model: &'m M, config: &RunConfig, layout: BlockLayout) -> Result<Self> {
        Self::with_noise(model, config, layout, GaussianNoise)
    }
}

impl<'m, M: TargetModel + ?Sized, N: NoiseSource> Sampler<'m, M, N> {
    pub fn with_noise(
        model: &'m M,
        config: &RunConfig,
        layout: BlockLayout,
        noise: N,
    ) -> Result<Self> {
        config.validate()?;
        config.target.tempering.check(model)?;
        let streams = StreamFactory::new(config.run.seed);
        let pool = if config.run.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.run.threads)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            model,
            mode: config.target.tempering,
            layout,
            schedule: config.schedule.clone(),
            adapt: config.adapt.clone(),
            control: streams.control(),
            streams,
            noise,
            burn_in: config.burn_in(),
            pool,
        })
    }

    pub fn streams(&self) -> &StreamFactory {
        &self.streams
    }

    pub fn schedule(&self) -> &AdaptationSchedule {
        &self.schedule
    }

    /// Runs one iteration and advances `state.n`.
    pub fn step(&mut self, state: &mut LadderState) -> StepRecord {
        let n = state.n;
        let u: f64 = self.control.random();
        let kind = if u <= self.schedule.alpha_r {
            self.parallel_step(state, n);
            StepKind::Parallel
        } else {
            self.exchange_step(state, n)
        };

        for r in &mut state.replicas {
            r.moments.push(&r.x);
        }

        let truncated = if self.adapt.truncation && n % self.schedule.check_period == 0 {
            self.truncate(state, n)
        } else {
            None
        };
        state.n += 1;
        StepRecord {
            iteration: n,
            kind,
            truncated,
        }
    }

    fn parallel_step(&self, state: &mut LadderState, n: u64) {
        let b = self.schedule.proposal_gain(n);
        let learn = self.adapt.proposals;
        let (lo, hi) = (self.schedule.gamma_min, self.schedule.gamma_max);
        let update = |(slot, r): (usize, &mut ReplicaState)| {
            let mut rng = self.streams.replica(slot, n);
            let t = r.t();
            let out = metropolis_step(
                self.model,
                self.mode,
                t,
                &mut r.x,
                &mut r.parts,
                &r.proposal,
                &self.layout,
                &self.noise,
                &mut rng,
            );
            r.moves_proposed += out.accepted.len() as u64;
            r.moves_accepted += out.accepted_count() as u64;
            if learn && r.adaptive {
                update_proposal(&mut r.proposal, &r.x, b, lo, hi);
            }
        };
        match &self.pool {
            Some(pool) => {
                pool.install(|| state.replicas.par_iter_mut().enumerate().for_each(update))
            }
            None => state.replicas.iter_mut().enumerate().for_each(update),
        }
    }

    fn exchange_step(&mut self, state: &mut LadderState, n: u64) -> StepKind {
        let len = state.replicas.len();
        if len < 2 {
            return StepKind::Idle;
        }
        let pair = self.control.random_range(0..len - 1);
        let (cold, hot) = (&state.replicas[pair], &state.replicas[pair + 1]);
        let log_acc = exchange_log_ratio(cold.t(), hot.t(), &cold.parts, &hot.parts).min(0.0);
        let u: f64 = self.control.random();
        let accepted = u.ln() <= log_acc;

        let stats = &mut state.pairs[pair];
        stats.attempted += 1;
        stats.accepted += u64::from(accepted);
        if n >= self.burn_in {
            stats.attempted_post_burn_in += 1;
            stats.accepted_post_burn_in += u64::from(accepted);
        }

        // temperature learning for the hotter member, 1-based index pair + 2
        let hot_idx = pair + 1;
        let zeta_change = if self.adapt.temperatures && state.replicas[hot_idx].adaptive {
            let zeta = state.replicas[hot_idx].zeta;
            let gain = self.schedule.temperature_gain(hot_idx + 1, n, zeta);
            let colder = Some(state.replicas[pair].zeta);
            let hotter = state.replicas.get(hot_idx + 1).map(|r| r.zeta);
            let new = update_temperature(
                zeta,
                gain,
                accepted,
                self.schedule.alpha,
                colder,
                hotter,
                self.schedule.order_margin,
            );
            state.replicas[hot_idx].zeta = new;
            Some((new - zeta, gain))
        } else {
            None
        };

        if accepted {
            let (left, right) = state.replicas.split_at_mut(hot_idx);
            let (a, b) = (&mut left[pair], &mut right[0]);
            std::mem::swap(&mut a.x, &mut b.x);
            std::mem::swap(&mut a.parts, &mut b.parts);
            if self.adapt.proposals {
                for r in [a, b] {
                    if r.adaptive {
                        mean_jump_on_exchange(&mut r.proposal, &r.x);
                    }
                }
            }
        }
        StepKind::Exchange {
            pair,
            accepted,
            zeta_change,
        }
    }

    fn truncate(&self, state: &mut LadderState, n: u64) -> Option<TruncationEvent> {
        let mut counters: Vec<u32> = state.replicas.iter().map(|r| r.counter).collect();
        let new_len = truncation_check(
            state
                .replicas
                .iter()
                .map(|r| (r.proposal.variances.as_slice(), &r.moments)),
            &mut counters,
            self.schedule.success_threshold,
        );
        for (r, c) in state.replicas.iter_mut().zip(counters) {
            r.counter = c;
        }
        let new_len = new_len?;
        let from = state.replicas.len();
        if new_len >= from {
            return None;
        }
        let removed: Vec<ReplicaState> = state.replicas.drain(new_len..).collect();
        let removed_pairs: Vec<PairStats> = state.pairs.drain(new_len - 1..).collect();
        for (k, r) in removed.into_iter().enumerate() {
            state.archived.push(ArchivedReplica {
                index: new_len + k + 1,
                removed_at: n,
                t: r.t(),
                gamma: r.proposal.variances,
                moves_proposed: r.moves_proposed,
                moves_accepted: r.moves_accepted,
                pair: removed_pairs.get(k).cloned(),
            });
        }
        let event = TruncationEvent {
            iteration: n,
            from,
            to: new_len,
        };
        state.truncations.push(event);
        Some(event)
    }
}

/// Final adapted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLadder {
    pub len: usize,
    pub t: Vec<f64>,
    pub zeta: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
}

impl FinalLadder {
    pub fn from_state(state: &LadderState) -> Self {
        Self {
            len: state.len(),
            t: state.temperatures(),
            zeta: state.zetas(),
            gamma: state
                .replicas
                .iter()
                .map(|r| r.proposal.variances.clone())
                .collect(),
        }
    }

    pub fn gamma_sums(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| g.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    /// 1-based indices of the colder and hotter replica.
    pub low: usize,
    pub high: usize,
    #[serde(flatten)]
    pub stats: PairStats,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSnapshot {
    pub iteration: u64,
    pub t: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
}

/// Largest temperature increment in a window of iterations, next to the
/// largest gain envelope over the same window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementWindow {
    pub start: u64,
    pub end: u64,
    pub updates: u64,
    pub max_increment: f64,
    pub max_envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub dimension: usize,
    /// Thinned post-burn-in states of the coldest replica.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
    pub sample_count: usize,
    pub final_ladder: FinalLadder,
    pub exchange: Vec<PairSummary>,
    pub archived: Vec<ArchivedReplica>,
    pub truncations: Vec<TruncationEvent>,
    pub metropolis_acceptance: Vec<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceSnapshot>,
    pub increment_windows: Vec<IncrementWindow>,
    /// Temperature updates whose size exceeded the gain at the pre-update zeta.
    pub envelope_violations: u64,
    pub elapsed_seconds: f64,
}

impl RunReport {
    pub fn exchange_ratios(&self) -> Vec<f64> {
        self.exchange.iter().filter_map(|p| p.ratio).collect()
    }
}

fn snapshot(state: &LadderState) -> TraceSnapshot {
    TraceSnapshot {
        iteration: state.n,
        t: state.temperatures(),
        gamma: state
            .replicas
            .iter()
            .map(|r| r.proposal.variances.clone())
            .collect(),
    }
}

/// Runs a full chain on a pre-built model.
pub fn run_with_model<M: TargetModel + ?Sized>(config: &RunConfig, model: &M) -> Result<RunReport> {
    let layout = config.layout(model)?;
    let mut sampler = Sampler::new(model, config, layout)?;
    let state = init_state(config, model, sampler.streams())?;
    run_from_state(config, &mut sampler, state)
}

/// Builds the configured target and runs it.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let built = config.target.spec.build()?;
    run_with_model(config, built.model())
}

pub fn run_from_state<M: TargetModel + ?Sized, N: NoiseSource>(
    config: &RunConfig,
    sampler: &mut Sampler<'_, M, N>,
    mut state: LadderState,
) -> Result<RunReport> {
    let started = Instant::now();
    let iterations = config.run.iterations;
    let burn_in = config.burn_in();
    let thin = config.run.thin;
    let stride = config.run.trace_stride;
    let dimension = state.replicas.first().map_or(0, |r| r.x.len());

    let mut windows: Vec<IncrementWindow> = config
        .run
        .probe_points
        .iter()
        .filter(|&&p| p < iterations)
        .map(|&p| IncrementWindow {
            start: p,
            end: (p + config.run.probe_window).min(iterations),
            updates: 0,
            max_increment: 0.0,
            max_envelope: 0.0,
        })
        .collect();
    let mut violations = 0u64;
    let mut samples = Vec::new();
    let mut trace = Vec::new();
    if stride > 0 {
        trace.push(snapshot(&state));
    }

    while state.n < iterations {
        let record = sampler.step(&mut state);
        if let StepKind::Exchange {
            zeta_change: Some((delta, gain)),
            ..
        } = record.kind
        {
            if delta.abs() > gain + 1e-12 {
                violations += 1;
            }
            for w in windows
                .iter_mut()
                .filter(|w| (w.start..w.end).contains(&record.iteration))
            {
                w.updates += 1;
                w.max_increment = w.max_increment.max(delta.abs());
                w.max_envelope = w.max_envelope.max(gain);
            }
        }
        let done = state.n;
        if done > burn_in && (done - burn_in) % thin == 0 {
            samples.push(state.replicas[0].x.clone());
        }
        if stride > 0 && done % stride == 0 {
            trace.push(snapshot(&state));
        }
    }

    let exchange = state
        .pairs
        .iter()
        .enumerate()
        .map(|(i, s)| PairSummary {
            low: i + 1,
            high: i + 2,
            stats: s.clone(),
            ratio: s.ratio(),
        })
        .collect();
    let metropolis_acceptance = state
        .replicas
        .iter()
        .map(|r| {
            if r.moves_proposed == 0 {
                0.0
            } else {
                r.moves_accepted as f64 / r.moves_proposed as f64
            }
        })
        .collect();

    Ok(RunReport {
        config: config.clone(),
        dimension,
        sample_count: samples.len(),
        samples,
        final_ladder: FinalLadder::from_state(&state),
        exchange,
        archived: state.archived.clone(),
        truncations: state.truncations.clone(),
        metropolis_acceptance,
        trace,
        increment_windows: windows,
        envelope_violations: violations,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}
