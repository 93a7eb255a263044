//! Adaptive runs against fixed-parameter baselines shifted away from the
//! adapted ladder.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdaptToggles, GammaInit, LadderConfig, RunConfig};
use crate::diagnostics::{posterior_mean_estimator, rmse};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sampler::{run_with_model, FinalLadder, IncrementWindow, RunReport};
use crate::target::TargetModel;

/// One fixed-parameter perturbation of an adapted ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "phi", rename_all = "kebab-case")]
pub enum Shift {
    /// Multiply every log inverse temperature by the factor.
    ZetaScale(f64),
    /// Multiply every proposal standard deviation by the factor.
    GammaScale(f64),
    /// Add or remove replicas at the hot end.
    LadderDelta(i32),
}

impl Shift {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Shift::ZetaScale(phi) if !(0.5..=3.0).contains(&phi) => Err(Error::InvalidShift(
                format!("zeta factor {phi} outside [0.5, 3]"),
            )),
            Shift::GammaScale(phi) if !(0.1..=3.0).contains(&phi) => Err(Error::InvalidShift(
                format!("gamma factor {phi} outside [0.1, 3]"),
            )),
            Shift::LadderDelta(d) if !(-5..=5).contains(&d) => Err(Error::InvalidShift(format!(
                "ladder delta {d} outside [-5, 5]"
            ))),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Shift::ZetaScale(_) => "zeta",
            Shift::GammaScale(_) => "gamma",
            Shift::LadderDelta(_) => "L",
        }
    }

    pub fn phi(&self) -> f64 {
        match *self {
            Shift::ZetaScale(p) | Shift::GammaScale(p) => p,
            Shift::LadderDelta(d) => f64::from(d),
        }
    }

    /// Parses `zeta:0.5,1,2;gamma:0.1,3;L:-2..2`. Integer ranges `a..b` are
    /// inclusive and only allowed for `L`. An empty string gives no shifts.
    pub fn parse_grid(text: &str) -> Result<Vec<Shift>> {
        let mut grid = Vec::new();
        for section in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (kind, values) = section
                .split_once(':')
                .ok_or_else(|| Error::InvalidShift(format!("'{section}' is missing ':'")))?;
            for value in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                let bad = || Error::InvalidShift(format!("cannot parse '{value}' in '{section}'"));
                match kind.trim() {
                    "zeta" => grid.push(Shift::ZetaScale(value.parse().map_err(|_| bad())?)),
                    "gamma" => grid.push(Shift::GammaScale(value.parse().map_err(|_| bad())?)),
                    "L" => {
                        if let Some((a, b)) = value.split_once("..") {
                            let a: i32 = a.trim().parse().map_err(|_| bad())?;
                            let b: i32 = b.trim().parse().map_err(|_| bad())?;
                            if a > b {
                                return Err(bad());
                            }
                            grid.extend((a..=b).map(Shift::LadderDelta));
                        } else {
                            grid.push(Shift::LadderDelta(value.parse().map_err(|_| bad())?));
                        }
                    }
                    other => {
                        return Err(Error::InvalidShift(format!("unknown shift kind '{other}'")))
                    }
                }
            }
        }
        for s in &grid {
            s.validate()?;
        }
        Ok(grid)
    }
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.kind(), self.phi())
    }
}

/// Fixed ladder described by a config with every adaptation switched off.
fn frozen_config(base: &RunConfig, zeta: Vec<f64>, gamma: Vec<Vec<f64>>) -> Result<RunConfig> {
    if zeta.len() < 2 {
        return Err(Error::InvalidShift(format!(
            "baseline ladder would have {} replica(s); at least 2 are needed",
            zeta.len()
        )));
    }
    if zeta.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidShift(
            "shifted ladder is not strictly ordered".into(),
        ));
    }
    let mut config = base.clone();
    config.ladder = LadderConfig {
        initial_len: zeta.len(),
        temperatures: None,
        log_temperatures: Some(zeta),
        gamma: GammaInit::Explicit { values: gamma },
    };
    config.adapt = AdaptToggles::none();
    config.validate()?;
    Ok(config)
}

/// Preliminary-phase length for ladders grown at the hot end.
pub fn preliminary_iterations(total: u64) -> u64 {
    (total / 10).max(1)
}

/// Builds the fixed-parameter config for `shift` applied to `adapted`.
///
/// Growing the ladder runs a short adaptive phase (a tenth of the run length,
/// seeded by `seed`) in which only the added replicas learn their
/// temperatures and proposal variances; the adapted prefix stays fixed.
pub fn derive_baseline<M: TargetModel + ?Sized>(
    base: &RunConfig,
    model: &M,
    adapted: &FinalLadder,
    shift: Shift,
    seed: u64,
) -> Result<RunConfig> {
    shift.validate()?;
    let zeta = adapted.zeta.clone();
    let gamma = adapted.gamma.clone();
    match shift {
        Shift::ZetaScale(phi) => frozen_config(base, zeta.iter().map(|z| z * phi).collect(), gamma),
        Shift::GammaScale(phi) => {
            let scaled = gamma
                .iter()
                .map(|row| row.iter().map(|g| g * phi * phi).collect())
                .collect();
            frozen_config(base, zeta, scaled)
        }
        Shift::LadderDelta(d) if d <= 0 => {
            let keep = adapted.len as i64 + i64::from(d);
            if keep < 2 {
                return Err(Error::InvalidShift(format!(
                    "ladder of {} with delta {d} leaves {keep} replica(s)",
                    adapted.len
                )));
            }
            let keep = keep as usize;
            frozen_config(base, zeta[..keep].to_vec(), gamma[..keep].to_vec())
        }
        Shift::LadderDelta(d) => {
            let (mut zeta, mut gamma) = (zeta, gamma);
            let step = match zeta.len() {
                0 => return Err(Error::InvalidShift("adapted ladder is empty".into())),
                1 => 0.5f64.ln(),
                n => zeta[n - 1] - zeta[n - 2],
            };
            let last_gamma = gamma.last().cloned().expect("non-empty ladder");
            for _ in 0..d {
                zeta.push(zeta.last().expect("non-empty ladder") + step);
                gamma.push(last_gamma.clone());
            }
            let mut pre = frozen_config(base, zeta, gamma)?;
            pre.adapt = AdaptToggles {
                temperatures: true,
                proposals: true,
                truncation: false,
                frozen_prefix: adapted.len,
            };
            pre.run.iterations = preliminary_iterations(base.run.iterations);
            pre.run.seed = seed;
            pre.run.trace_stride = 0;
            let learned = run_with_model(&pre, model)?.final_ladder;
            frozen_config(base, learned.zeta, learned.gamma)
        }
    }
}

/// One run inside a comparison cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub seed: u64,
    pub rmse: f64,
    pub exchange_ratios: Vec<f64>,
    pub ladder_len: usize,
    /// For baselines: the ladder at the end equals the one the run started with.
    pub ladder_unchanged: bool,
    pub increment_windows: Vec<IncrementWindow>,
    pub envelope_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    /// `adaptive`, `zeta`, `gamma` or `L`.
    pub kind: String,
    pub phi: Option<f64>,
    pub mean_rmse: f64,
    pub se_rmse: f64,
    pub mean_exchange_ratio: f64,
    pub runs: Vec<CellRun>,
}

impl CompareRow {
    fn from_runs(kind: &str, phi: Option<f64>, runs: Vec<CellRun>) -> Self {
        let (mean, se) = mean_and_se(runs.iter().map(|r| r.rmse));
        let per_run: Vec<f64> = runs
            .iter()
            .filter(|r| !r.exchange_ratios.is_empty())
            .map(|r| r.exchange_ratios.iter().sum::<f64>() / r.exchange_ratios.len() as f64)
            .collect();
        let mean_er = if per_run.is_empty() {
            f64::NAN
        } else {
            per_run.iter().sum::<f64>() / per_run.len() as f64
        };
        Self {
            kind: kind.to_string(),
            phi,
            mean_rmse: mean,
            se_rmse: se,
            mean_exchange_ratio: mean_er,
            runs,
        }
    }

    /// Exchange ratio per pair index averaged over the runs that have that pair.
    pub fn per_pair_mean_ratios(&self) -> Vec<f64> {
        let longest = self
            .runs
            .iter()
            .map(|r| r.exchange_ratios.len())
            .max()
            .unwrap_or(0);
        (0..longest)
            .map(|k| {
                let vals: Vec<f64> = self
                    .runs
                    .iter()
                    .filter_map(|r| r.exchange_ratios.get(k).copied())
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect()
    }
}

/// Mean and standard error (sample standard deviation over sqrt(n)).
pub fn mean_and_se<I: IntoIterator<Item = f64>>(values: I) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn score(
    report: &RunReport,
    coords: &[usize],
    truth: f64,
    seed: u64,
    unchanged: bool,
) -> Result<CellRun> {
    let estimates = posterior_mean_estimator(&report.samples, coords)?;
    Ok(CellRun {
        seed,
        rmse: rmse(&estimates, truth),
        exchange_ratios: report.exchange_ratios(),
        ladder_len: report.final_ladder.len,
        ladder_unchanged: unchanged,
        increment_windows: report.increment_windows.clone(),
        envelope_violations: report.envelope_violations,
    })
}

fn cell_error(cell: String) -> impl FnOnce(Error) -> Error {
    move |e| Error::Cell {
        cell,
        source: Box::new(e),
    }
}

/// Runs the adaptive sampler and every shifted baseline `n_seeds` times.
///
/// Run `i` of the adaptive sampler uses `derive_seed(master_seed, i)`; its
/// adapted ladder seeds the baselines of the same replicate, each with its own
/// derived seed. The first row is the adaptive one, then one row per shift in
/// grid order. Runs are spread over `config.run.threads` workers.
pub fn compare(
    config: &RunConfig,
    grid: &[Shift],
    n_seeds: usize,
    master_seed: u64,
) -> Result<Vec<CompareRow>> {
    if n_seeds < 2 {
        return Err(Error::Config("compare needs at least 2 seeds".into()));
    }
    for s in grid {
        s.validate()?;
    }
    let built = config.target.spec.build()?;
    let model = built.model();
    let (coords, truth) = config
        .target
        .spec
        .estimand(&built)
        .ok_or_else(|| Error::Config("compare needs a target with a scored estimand".into()))?;

    let workers = config.run.threads.max(1);
    let mut single = config.clone();
    single.run.threads = 1;

    // one replicate = one adaptive run plus its baselines
    let replicate = |i: usize| -> Result<(CellRun, Vec<CellRun>)> {
        let seed = derive_seed(master_seed, i as u64);
        let mut adaptive_cfg = single.clone();
        adaptive_cfg.run.seed = seed;
        let adaptive = run_with_model(&adaptive_cfg, model)
            .map_err(cell_error(format!("adaptive seed {seed}")))?;
        let adaptive_run = score(&adaptive, &coords, truth, seed, false)?;

        let mut baselines = Vec::with_capacity(grid.len());
        for (c, shift) in grid.iter().enumerate() {
            let cell_seed = derive_seed(seed, c as u64 + 1);
            let label = format!("{shift} seed {cell_seed}");
            let mut cfg = derive_baseline(
                &single,
                model,
                &adaptive.final_ladder,
                *shift,
                derive_seed(cell_seed, 0),
            )
            .map_err(cell_error(label.clone()))?;
            cfg.run.seed = cell_seed;
            let report = run_with_model(&cfg, model).map_err(cell_error(label))?;
            let start = cfg.ladder.zetas()?;
            let start_gamma = match &cfg.ladder.gamma {
                GammaInit::Explicit { values } => values.clone(),
                _ => unreachable!("baselines use explicit variances"),
            };
            let unchanged = report.final_ladder.zeta == start
                && report.final_ladder.gamma == start_gamma
                && report.truncations.is_empty();
            baselines.push(score(&report, &coords, truth, cell_seed, unchanged)?);
        }
        Ok((adaptive_run, baselines))
    };

    let results: Vec<Result<(CellRun, Vec<CellRun>)>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
        pool.install(|| (0..n_seeds).into_par_iter().map(replicate).collect())
    } else {
        (0..n_seeds).map(replicate).collect()
    };

    let mut adaptive_runs = Vec::with_capacity(n_seeds);
    let mut cells: Vec<Vec<CellRun>> = vec![Vec::with_capacity(n_seeds); grid.len()];
    for r in results {
        let (a, b) = r?;
        adaptive_runs.push(a);
        for (cell, run) in cells.iter_mut().zip(b) {
            cell.push(run);
        }
    }
    let mut rows = vec![CompareRow::from_runs("adaptive", None, adaptive_runs)];
    for (shift, runs) in grid.iter().zip(cells) {
        rows.push(CompareRow::from_runs(shift.kind(), Some(shift.phi()), runs));
    }
    Ok(rows)
}

pub fn write_compare_csv<W: Write>(mut out: W, rows: &[CompareRow]) -> Result<()> {
    writeln!(out, "kind,phi,mean_rmse,se_rmse,mean_exchange_ratio")?;
    for r in rows {
        let phi = r.phi.map_or_else(String::new, |p| p.to_string());
        writeln!(
            out,
            "{},{},{},{},{}",
            r.kind, phi, r.mean_rmse, r.se_rmse, r.mean_exchange_ratio
        )?;
    }
    Ok(())
}
