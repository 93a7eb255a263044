//! Post-run metrics and CSV tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{PairSummary, TraceSnapshot};

/// Root mean squared deviation of `estimates` from a common `truth`.
///
/// Returns 0 for an empty slice.
pub fn rmse(estimates: &[f64], truth: f64) -> f64 {
    if estimates.is_empty() {
        return 0.0;
    }
    let sq: f64 = estimates.iter().map(|e| (e - truth).powi(2)).sum();
    (sq / estimates.len() as f64).sqrt()
}

/// Mean of the selected coordinates over a sample set.
pub fn posterior_mean_estimator(samples: &[Vec<f64>], coords: &[usize]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sums = vec![0.0; coords.len()];
    for s in samples {
        for (acc, &c) in sums.iter_mut().zip(coords) {
            *acc += s[c];
        }
    }
    let n = samples.len() as f64;
    Ok(sums.into_iter().map(|v| v / n).collect())
}

/// Visit fractions per mode plus the share of samples near no mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub fractions: Vec<f64>,
    pub unassigned: f64,
}

/// Assigns each sample to the mode with the smallest Mahalanobis distance
/// (diagonal covariance per mode) and counts it when that distance is
/// within `radius`.
pub fn mode_occupancy(
    samples: &[Vec<f64>],
    centers: &[Vec<f64>],
    variances: &[Vec<f64>],
    radius: f64,
) -> Result<Occupancy> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if centers.is_empty() || centers.len() != variances.len() {
        return Err(Error::Config(
            "need one variance vector per mode center".into(),
        ));
    }
    if !(radius > 0.0) {
        return Err(Error::Config("occupancy radius must be positive".into()));
    }
    let mut counts = vec![0usize; centers.len()];
    let mut unassigned = 0usize;
    for s in samples {
        let (best, dist) = centers
            .iter()
            .zip(variances)
            .map(|(c, v)| {
                s.iter()
                    .zip(c)
                    .zip(v)
                    .map(|((x, m), var)| (x - m) * (x - m) / var)
                    .sum::<f64>()
                    .sqrt()
            })
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one center");
        if dist <= radius {
            counts[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(Occupancy {
        fractions: counts.into_iter().map(|c| c as f64 / n).collect(),
        unassigned: unassigned as f64 / n,
    })
}

/// `iteration,replica,t,gamma_1..gamma_d` rows, one per replica per snapshot.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceSnapshot]) -> Result<()> {
    let dim = trace
        .iter()
        .flat_map(|s| s.gamma.first())
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    let mut header = String::from("iteration,replica,t");
    for j in 1..=dim {
        header.push_str(&format!(",gamma_{j}"));
    }
    writeln!(out, "{header}")?;
    for snap in trace {
        for (l, (t, gamma)) in snap.t.iter().zip(&snap.gamma).enumerate() {
            write!(out, "{},{},{}", snap.iteration, l + 1, t)?;
            for g in gamma {
                write!(out, ",{g}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn write_occupancy_csv<W: Write>(mut out: W, occupancy: &Occupancy) -> Result<()> {
    writeln!(out, "mode,fraction")?;
    for (k, f) in occupancy.fractions.iter().enumerate() {
        writeln!(out, "{},{f}", k + 1)?;
    }
    writeln!(out, "unassigned,{}", occupancy.unassigned)?;
    Ok(())
}

pub fn write_exchange_csv<W: Write>(mut out: W, pairs: &[PairSummary]) -> Result<()> {
    writeln!(
        out,
        "low,high,attempted,accepted,attempted_post_burn_in,accepted_post_burn_in,ratio"
    )?;
    for p in pairs {
        let ratio = p.ratio.map_or_else(String::new, |r| r.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.low,
            p.high,
            p.stats.attempted,
            p.stats.accepted,
            p.stats.attempted_post_burn_in,
            p.stats.accepted_post_burn_in,
            ratio
        )?;
    }
    Ok(())
}
