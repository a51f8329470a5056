//! Fundamental diagrams: flow-density points from ring runs of varying length.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::ring_sim::{run, SimConfig, Trajectory};

pub const FD_CSV_HEADER: &str = "density_vpkm,flow_vph,mean_speed_kmh,ring_m,mpr,attack,seed_count";

/// Flows below this share of capacity count as jammed.
pub const JAM_FLOW_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdPoint {
    /// veh/km
    pub density: f64,
    /// km/h
    pub mean_speed: f64,
    /// veh/hr, always `density * mean_speed`
    pub flow: f64,
    pub ring_length: f64,
    pub mpr: f64,
    pub attack: AttackKind,
    pub seed_count: usize,
}

impl FdPoint {
    pub fn new(n_vehicles: usize, ring_length: f64, mean_speed_mps: f64, mpr: f64, attack: AttackKind) -> Self {
        let density = n_vehicles as f64 / (ring_length / 1000.0);
        let mean_speed = mean_speed_mps * 3.6;
        FdPoint {
            density,
            mean_speed,
            flow: density * mean_speed,
            ring_length,
            mpr,
            attack,
            seed_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdCurve {
    /// Sorted by ascending density.
    pub points: Vec<FdPoint>,
    /// veh/hr
    pub capacity: f64,
    /// veh/km
    pub critical_density: f64,
    /// Largest density whose flow is below 5% of capacity, if any.
    pub jam_density: Option<f64>,
}

impl FdCurve {
    pub fn from_points(mut points: Vec<FdPoint>) -> Result<Self> {
        points.sort_by(|a, b| a.density.total_cmp(&b.density));
        let (capacity, critical_density) = capacity_point(&points)?;
        let jam_density = points
            .iter()
            .filter(|p| p.flow < JAM_FLOW_SHARE * capacity)
            .map(|p| p.density)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
        Ok(FdCurve {
            points,
            capacity,
            critical_density,
            jam_density,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{FD_CSV_HEADER}")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                sig(p.density, 6),
                sig(p.flow, 6),
                sig(p.mean_speed, 6),
                sig(p.ring_length, 6),
                p.mpr,
                p.attack,
                p.seed_count
            )?;
        }
        Ok(())
    }
}

/// Fleet-and-time mean speed over `[warmup, warmup + window)`.
pub fn measure_fd_point(traj: &Trajectory, warmup: f64, window: f64) -> Result<FdPoint> {
    let cfg = &traj.config;
    let dt = cfg.dt;
    let first = (warmup / dt).round() as usize;
    let count = (window / dt).round() as usize;
    if !(warmup >= 0.0 && window > 0.0) || count == 0 || first + count > traj.n_steps() {
        return Err(Error::Argument(format!(
            "measurement window {warmup} s + {window} s exceeds the {:.3} s trajectory",
            traj.span()
        )));
    }
    let n = traj.n_vehicles();
    let rows = &traj.records[first * n..(first + count) * n];
    let mean_speed = rows.iter().map(|r| r.speed).sum::<f64>() / rows.len() as f64;
    Ok(FdPoint::new(n, cfg.ring_length, mean_speed, cfg.acc_mpr, cfg.attack.kind))
}

/// Maximum flow and its density, ties broken toward lower density.
pub fn capacity_point(points: &[FdPoint]) -> Result<(f64, f64)> {
    let mut best: Option<&FdPoint> = None;
    for p in points {
        best = match best {
            None => Some(p),
            Some(b) if p.flow > b.flow || (p.flow == b.flow && p.density < b.density) => Some(p),
            keep => keep,
        };
    }
    best.map(|p| (p.flow, p.density))
        .ok_or_else(|| Error::Argument("fundamental diagram has no points".into()))
}

/// Sweep settings for one fundamental diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lengths: Vec<f64>,
    pub seeds_per_length: usize,
    pub warmup: f64,
    pub window: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lengths: log_lengths(143.0, 2000.0, 20),
            seeds_per_length: 3,
            warmup: 300.0,
            window: 300.0,
        }
    }
}

/// `count` logarithmically spaced values from `start` to `stop` inclusive.
pub fn log_lengths(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let (a, b) = (start.ln(), stop.ln());
            (0..count)
                .map(|i| {
                    if i == 0 {
                        start
                    } else if i == count - 1 {
                        stop
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// One simulation job of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepJob {
    pub length_index: usize,
    pub seed_index: usize,
    pub config: SimConfig,
}

/// Expands a sweep into per-(length, seed) simulation configs, ordered by
/// `(length, seed)`. Seeds are `base.seed + seed_index` for every length.
pub fn sweep_jobs(base: &SimConfig, sweep: &SweepConfig) -> Result<Vec<SweepJob>> {
    if sweep.lengths.is_empty() {
        return Err(Error::Argument("length grid is empty".into()));
    }
    if sweep.lengths.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument("ring lengths must be strictly ascending".into()));
    }
    if sweep.seeds_per_length == 0 {
        return Err(Error::Argument("need at least one seed per length".into()));
    }
    let duration = sweep.warmup + sweep.window;
    let mut jobs = Vec::with_capacity(sweep.lengths.len() * sweep.seeds_per_length);
    for (li, &length) in sweep.lengths.iter().enumerate() {
        for si in 0..sweep.seeds_per_length {
            let config = SimConfig {
                ring_length: length,
                duration,
                seed: base.seed.wrapping_add(si as u64),
                ..base.clone()
            };
            config.validate()?;
            jobs.push(SweepJob {
                length_index: li,
                seed_index: si,
                config,
            });
        }
    }
    Ok(jobs)
}

/// Simulates and measures one sweep job.
pub fn run_sweep_job(job: &SweepJob, sweep: &SweepConfig) -> Result<FdPoint> {
    let tag = |e: Error| e.context(format!("ring length {} m", job.config.ring_length));
    let traj = run(&job.config).map_err(tag)?;
    measure_fd_point(&traj, sweep.warmup, sweep.window).map_err(tag)
}

/// Averages per-seed points of the same length (in job order) into a curve.
pub fn aggregate(points: &[(usize, FdPoint)]) -> Result<FdCurve> {
    let mut merged: Vec<FdPoint> = Vec::new();
    let mut current: Option<(usize, f64, FdPoint)> = None;
    let flush = |cur: Option<(usize, f64, FdPoint)>, merged: &mut Vec<FdPoint>| {
        if let Some((_, speed_sum, mut p)) = cur {
            p.mean_speed = speed_sum / p.seed_count as f64;
            p.flow = p.density * p.mean_speed;
            merged.push(p);
        }
    };
    for (li, p) in points {
        match current.as_mut() {
            Some((cur_li, speed_sum, acc)) if cur_li == li => {
                *speed_sum += p.mean_speed;
                acc.seed_count += 1;
            }
            _ => {
                flush(current.take(), &mut merged);
                current = Some((*li, p.mean_speed, FdPoint { seed_count: 1, ..p.clone() }));
            }
        }
    }
    flush(current, &mut merged);
    FdCurve::from_points(merged)
}

/// Sequential sweep; see `sweep_jobs` and `aggregate` for the parallel building blocks.
pub fn sweep_fd(base: &SimConfig, sweep: &SweepConfig) -> Result<FdCurve> {
    let jobs = sweep_jobs(base, sweep)?;
    let points = jobs
        .iter()
        .map(|job| run_sweep_job(job, sweep).map(|p| (job.length_index, p)))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&points)
}
