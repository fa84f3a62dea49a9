//! AoI and QAoI statistics over simulated trajectories.
//!
//! Reports keep integer histograms rather than floating-point summaries, so
//! merging reports is exact and gives the same numbers as reducing the
//! concatenated records.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, ModelParams, Objective};
use crate::sim::TrajectoryRecord;

/// Top age bin of the phase matrices written to CSV; older ages are pooled
/// into it.
pub const PHASE_AGE_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    query_period: usize,
    max_age: usize,
    slots: u64,
    queries: u64,
    aoi_sum: u64,
    qaoi_sum: u64,
    /// Indexed by age, `0..=max_age`.
    aoi_hist: Vec<u64>,
    qaoi_hist: Vec<u64>,
    /// `phase * (max_age + 1) + age`, phase = `t % query_period`.
    phase_hist: Vec<u64>,
    phase_transmits: Vec<u64>,
}

impl MetricsReport {
    fn empty(query_period: usize, max_age: usize) -> Self {
        let width = max_age + 1;
        Self {
            query_period,
            max_age,
            slots: 0,
            queries: 0,
            aoi_sum: 0,
            qaoi_sum: 0,
            aoi_hist: vec![0; width],
            qaoi_hist: vec![0; width],
            phase_hist: vec![0; query_period * width],
            phase_transmits: vec![0; query_period],
        }
    }

    pub fn query_period(&self) -> usize {
        self.query_period
    }

    pub fn max_age(&self) -> usize {
        self.max_age
    }

    /// Number of slots measured.
    pub fn slots(&self) -> u64 {
        self.slots
    }

    /// Number of query slots measured.
    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn avg_aoi(&self) -> f64 {
        self.aoi_sum as f64 / self.slots as f64
    }

    pub fn avg_qaoi(&self) -> f64 {
        self.qaoi_sum as f64 / self.queries as f64
    }

    /// `ccdf[v] = P(age > v)` for `v` in `0..=max_age`.
    pub fn ccdf_aoi(&self) -> Vec<f64> {
        ccdf(&self.aoi_hist, self.slots)
    }

    pub fn ccdf_qaoi(&self) -> Vec<f64> {
        ccdf(&self.qaoi_hist, self.queries)
    }

    /// Largest age seen in any slot.
    pub fn largest_age(&self) -> usize {
        self.aoi_hist.iter().rposition(|&c| c > 0).unwrap_or(0)
    }

    /// Age distribution per phase `t % query_period`, full resolution: row
    /// `phase`, column `age` in `0..=max_age` (column 0 is always empty).
    /// Phases that were never observed get an all-zero row.
    pub fn phase_pmf(&self) -> Vec<Vec<f64>> {
        let width = self.max_age + 1;
        self.phase_hist
            .chunks(width)
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Phase distribution over ages `1..=cap`, with everything older pooled
    /// into the `cap` bin. Entry `[phase][k]` is the mass of age `k + 1`.
    pub fn phase_pmf_capped(&self, cap: usize) -> Vec<Vec<f64>> {
        let width = self.max_age + 1;
        let cap = cap.clamp(1, self.max_age);
        self.phase_hist
            .chunks(width)
            .map(|row| {
                let total: u64 = row.iter().sum();
                let mut bins: Vec<u64> = row[1..cap].to_vec();
                bins.push(row[cap..].iter().sum());
                bins.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Fraction of measured slots with a transmission, over the slots whose
    /// countdown `sigma` satisfies `select`.
    pub fn transmit_frequency(&self, select: impl Fn(usize) -> bool) -> f64 {
        let width = self.max_age + 1;
        let (mut sent, mut slots) = (0u64, 0u64);
        for phase in 0..self.query_period {
            let sigma = (self.query_period - phase) % self.query_period;
            if select(sigma) {
                sent += self.phase_transmits[phase];
                slots += self.phase_hist[phase * width..(phase + 1) * width]
                    .iter()
                    .sum::<u64>();
            }
        }
        sent as f64 / slots as f64
    }

    /// Mean QAoI recovered from the phase-0 row of the phase distribution.
    pub fn avg_qaoi_from_phase_pmf(&self) -> f64 {
        self.phase_pmf()[0]
            .iter()
            .enumerate()
            .map(|(age, p)| age as f64 * p)
            .sum()
    }

    fn compatible(&self, other: &MetricsReport) -> bool {
        self.query_period == other.query_period && self.max_age == other.max_age
    }
}

fn ccdf(hist: &[u64], total: u64) -> Vec<f64> {
    let mut above = total;
    hist.iter()
        .map(|&c| {
            above -= c;
            above as f64 / total as f64
        })
        .collect()
}

/// Streaming reduction of trajectory records into a [`MetricsReport`].
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    report: MetricsReport,
}

impl MetricsAccumulator {
    pub fn new(query_period: usize, max_age: usize) -> Self {
        Self {
            report: MetricsReport::empty(query_period, max_age),
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.query_period, params.max_age)
    }

    pub fn push(&mut self, r: &TrajectoryRecord) -> Result<()> {
        let rep = &mut self.report;
        if r.age == 0 || r.age > rep.max_age {
            return Err(Error::InvalidRecord {
                t: r.t,
                reason: format!("age {} outside 1..={}", r.age, rep.max_age),
            });
        }
        let phase = (r.t % rep.query_period as u64) as usize;
        rep.slots += 1;
        rep.aoi_sum += r.age as u64;
        rep.aoi_hist[r.age] += 1;
        rep.phase_hist[phase * (rep.max_age + 1) + r.age] += 1;
        if r.action == Action::Transmit {
            rep.phase_transmits[phase] += 1;
        }
        if r.is_query_slot {
            rep.queries += 1;
            rep.qaoi_sum += r.age as u64;
            rep.qaoi_hist[r.age] += 1;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<MetricsReport> {
        if self.report.slots == 0 {
            return Err(Error::NoRecords);
        }
        if self.report.queries == 0 {
            return Err(Error::NoQuerySlots);
        }
        Ok(self.report)
    }
}

/// Empirical statistics of exactly the supplied records (warmup already
/// removed by the caller).
pub fn compute_metrics(
    records: &[TrajectoryRecord],
    params: &ModelParams,
) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::for_params(params);
    for r in records {
        acc.push(r)?;
    }
    acc.finish()
}

/// Count-weighted pooling of reports over the same model dimensions.
pub fn merge(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let (first, rest) = reports.split_first().ok_or(Error::EmptyMerge)?;
    let mut out = first.clone();
    for r in rest {
        if !out.compatible(r) {
            return Err(Error::DimensionMismatch(format!(
                "cannot merge reports for (query_period={}, max_age={}) and (query_period={}, max_age={})",
                out.query_period, out.max_age, r.query_period, r.max_age
            )));
        }
        out.slots += r.slots;
        out.queries += r.queries;
        out.aoi_sum += r.aoi_sum;
        out.qaoi_sum += r.qaoi_sum;
        for (dst, src) in [
            (&mut out.aoi_hist, &r.aoi_hist),
            (&mut out.qaoi_hist, &r.qaoi_hist),
            (&mut out.phase_hist, &r.phase_hist),
            (&mut out.phase_transmits, &r.phase_transmits),
        ] {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    Ok(out)
}

/// Mean and standard error of a per-replication quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero for a single sample.
    pub std_error: f64,
    pub n: usize,
}

impl SampleSummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            0.0
        } else {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, std_error, n }
    }
}

/// Spread of the averages across independent replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStats {
    pub aoi: SampleSummary,
    pub qaoi: SampleSummary,
}

impl ReplicationStats {
    pub fn from_reports(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyMerge);
        }
        let aoi: Vec<f64> = reports.iter().map(MetricsReport::avg_aoi).collect();
        let qaoi: Vec<f64> = reports.iter().map(MetricsReport::avg_qaoi).collect();
        Ok(Self {
            aoi: SampleSummary::from_samples(&aoi),
            qaoi: SampleSummary::from_samples(&qaoi),
        })
    }
}

pub const CCDF_HEADER: &str = "age,ccdf_aoi_pq,ccdf_qaoi_pq,ccdf_aoi_qapa,ccdf_qaoi_qapa";
pub const PHASE_HEADER: &str = "phase,age,probability";
pub const SUMMARY_HEADER: &str = "epsilon,tq,mu_b,policy,avg_aoi,avg_qaoi";

/// CCDF table for one grid point. Rows run from age 0 up to the largest age
/// observed; columns of a missing policy are left empty.
pub fn write_ccdf_csv<W: Write>(
    mut out: W,
    pq: Option<&MetricsReport>,
    qapa: Option<&MetricsReport>,
) -> io::Result<()> {
    let curves: Vec<Option<(Vec<f64>, Vec<f64>)>> = [pq, qapa]
        .iter()
        .map(|r| r.map(|r| (r.ccdf_aoi(), r.ccdf_qaoi())))
        .collect();
    let last = [pq, qapa]
        .iter()
        .flatten()
        .map(|r| r.largest_age())
        .max()
        .unwrap_or(0);
    writeln!(out, "{CCDF_HEADER}")?;
    for age in 0..=last {
        write!(out, "{age}")?;
        for curve in &curves {
            match curve {
                Some((aoi, qaoi)) => write!(out, ",{},{}", aoi[age], qaoi[age])?,
                None => write!(out, ",,")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Phase matrix in long format, ages `1..=PHASE_AGE_CAP` with the tail pooled
/// into the last bin.
pub fn write_phase_csv<W: Write>(mut out: W, report: &MetricsReport) -> io::Result<()> {
    writeln!(out, "{PHASE_HEADER}")?;
    for (phase, row) in report.phase_pmf_capped(PHASE_AGE_CAP).iter().enumerate() {
        for (k, p) in row.iter().enumerate() {
            writeln!(out, "{phase},{},{p}", k + 1)?;
        }
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub epsilon: f64,
    pub tq: usize,
    pub mu_b: f64,
    pub policy: Objective,
    pub avg_aoi: f64,
    pub avg_qaoi: f64,
}

pub fn write_summary_csv<W: Write>(mut out: W, rows: &[SummaryRow]) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6}",
            r.epsilon, r.tq, r.mu_b, r.policy, r.avg_aoi, r.avg_qaoi
        )?;
    }
    out.flush()
}
