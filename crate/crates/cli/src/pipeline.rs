//! Building blocks shared by the subcommands and the end-to-end experiment.

use std::path::Path;

use accguard_core::attacks::{AttackKind, AttackSpec};
use accguard_core::dataset::{
    extract_windows, ExtractOptions, NormStats, Provenance, RunInfo, SplitSpec, Window, WindowSet, SAMPLE_RATE_HZ,
};
use accguard_core::ring_sim::{run, SimConfig};
use accguard_core::{Error, Result};
use accguard_gan::{checkpoint, GanConfig, GanModel};
use rayon::prelude::*;

use crate::args::{AttackArgs, FleetArgs, GanArgs, InversionArgs, WindowingArgs};
use crate::error::{CliError, CliResult};
use accguard_gan::DetectorConfig;

/// Attacked runs draw seeds from `seed + ATTACK_SEED_OFFSET` on, well clear of the
/// normal runs at `seed + i`.
pub const ATTACK_SEED_OFFSET: u64 = 1 << 20;
/// Run ids of attacked runs start here.
pub const ATTACK_RUN_ID: u32 = 1 << 20;
/// Upper bound on runs simulated while filling one window pool.
pub const MAX_RUNS: usize = 500;

pub fn worker_count(jobs: Option<usize>) -> CliResult<usize> {
    match jobs {
        Some(0) => Err(CliError::usage("jobs must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {jobs} workers: {e}")))
}

/// Fills in the kind-dependent attack window.
pub fn resolve_attack(a: &mut AttackArgs) {
    let defaults = AttackSpec::for_kind(a.attack);
    if a.attack_start.is_none() {
        a.attack_start = Some(defaults.active_start);
    }
    if a.attack_end.is_none() {
        a.attack_end = defaults.active_end;
    }
}

pub fn attack_spec(a: &AttackArgs) -> AttackSpec {
    let defaults = AttackSpec::for_kind(a.attack);
    AttackSpec {
        kind: a.attack,
        xi_std: a.xi_std,
        lambda1_std: a.lambda1_std,
        lambda2_std: a.lambda2_std,
        omega: a.omega,
        active_start: a.attack_start.unwrap_or(defaults.active_start),
        active_end: a.attack_end.or(defaults.active_end),
        target_fraction: a.target_fraction,
    }
}

pub fn sim_config(ring_m: f64, duration: f64, fleet: &FleetArgs, attack: AttackSpec, seed: u64) -> Result<SimConfig> {
    let config = SimConfig {
        ring_length: ring_m,
        n_vehicles: fleet.n_veh,
        acc_mpr: fleet.mpr,
        attack,
        dt: fleet.dt,
        duration,
        seed,
        ..SimConfig::default()
    };
    config.validate()?;
    Ok(config)
}

pub fn parse_ratio(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("val_ratio must look like 4:1, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok((a, b))
}

pub fn split_spec(w: &WindowingArgs) -> Result<SplitSpec> {
    Ok(SplitSpec {
        test_normal: w.test_normal,
        test_attacked: w.test_attacked,
        val_test_ratio: parse_ratio(&w.val_ratio)?,
    })
}

pub fn resolve_windowing(w: &mut WindowingArgs, window_s: f64) {
    if w.train_stride_s.is_none() {
        w.train_stride_s = Some(window_s);
    }
}

pub fn check_window_s(window_s: f64) -> Result<()> {
    if !(window_s.is_finite() && window_s * SAMPLE_RATE_HZ >= 2.0) {
        return Err(Error::Config(format!("window_s must be at least 2 samples long, got {window_s}")));
    }
    Ok(())
}

/// Windows from consecutive runs, simulated `jobs` at a time until `need` windows
/// are available. Only the shortest prefix of runs that reaches `need` is kept, so
/// the result does not depend on the worker count.
pub fn collect_runs<F>(need: usize, jobs: usize, what: &str, make: F) -> Result<(Vec<Window>, Vec<RunInfo>)>
where
    F: Fn(usize) -> Result<(Vec<Window>, RunInfo)> + Sync,
{
    let mut runs: Vec<(Vec<Window>, RunInfo)> = Vec::new();
    let mut total = 0;
    while total < need {
        if runs.len() >= MAX_RUNS {
            return Err(Error::Data(format!(
                "{what}: {MAX_RUNS} runs yield only {total} of {need} windows"
            )));
        }
        let start = runs.len();
        let batch: Vec<Result<(Vec<Window>, RunInfo)>> =
            (start..start + jobs).into_par_iter().map(&make).collect();
        for r in batch {
            let (windows, info) = r?;
            if windows.is_empty() {
                return Err(Error::Data(format!("{what}: run {} produced no usable windows", info.run_id)));
            }
            total += windows.len();
            runs.push((windows, info));
        }
    }
    let mut kept = 0;
    let mut count = 0;
    while count < need {
        count += runs[kept].0.len();
        kept += 1;
    }
    runs.truncate(kept);
    let mut windows = Vec::with_capacity(count);
    let mut infos = Vec::with_capacity(kept);
    for (w, info) in runs {
        windows.extend(w);
        infos.push(info);
    }
    Ok((windows, infos))
}

fn run_info(config: &SimConfig, run_id: u32) -> RunInfo {
    RunInfo {
        run_id,
        seed: config.seed,
        attack: config.attack.kind,
        mpr: config.acc_mpr,
        ring_length: config.ring_length,
    }
}

/// Windowing of one experiment: what to simulate and how to cut it.
#[derive(Debug, Clone)]
pub struct WindowPlan<'a> {
    pub window_s: f64,
    pub windowing: &'a WindowingArgs,
    pub fleet: &'a FleetArgs,
    pub seed: u64,
    pub jobs: usize,
}

impl WindowPlan<'_> {
    fn options(&self, stride_s: f64) -> ExtractOptions {
        ExtractOptions {
            classes: self.windowing.classes,
            ..ExtractOptions::new(self.window_s, stride_s)
        }
    }

    /// Windows from unattacked runs with seeds `seed, seed + 1, ...`.
    pub fn normal_pool(&self, spec: &SplitSpec) -> Result<(Vec<Window>, Vec<RunInfo>)> {
        let need = spec.test_normal + spec.validation_size() + self.windowing.min_train.max(1);
        let opts = self.options(self.windowing.train_stride_s.unwrap_or(self.window_s));
        collect_runs(need, self.jobs, "normal runs", |i| {
            let config = sim_config(
                self.windowing.ring_m,
                self.windowing.duration,
                self.fleet,
                AttackSpec::default(),
                self.seed.wrapping_add(i as u64),
            )?;
            let run_id = i as u32;
            let traj = run(&config)?;
            Ok((extract_windows(&traj, &opts, run_id)?, run_info(&config, run_id)))
        })
    }

    /// Attacked windows only, from runs with seeds `seed + ATTACK_SEED_OFFSET + j`.
    pub fn attacked_pool(&self, attack: &AttackSpec, spec: &SplitSpec) -> Result<(Vec<Window>, Vec<RunInfo>)> {
        if spec.test_attacked == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        if attack.kind == AttackKind::None {
            return Err(Error::Config("attacked test windows requested but attack is none".into()));
        }
        if attack.active_start >= self.windowing.duration {
            return Err(Error::Config(format!(
                "{} attack starts at {} s but runs last only {} s",
                attack.kind, attack.active_start, self.windowing.duration
            )));
        }
        let opts = self.options(self.windowing.test_stride_s);
        collect_runs(spec.test_attacked, self.jobs, "attacked runs", |j| {
            let config = sim_config(
                self.windowing.ring_m,
                self.windowing.duration,
                self.fleet,
                *attack,
                self.seed.wrapping_add(ATTACK_SEED_OFFSET + j as u64),
            )?;
            let run_id = ATTACK_RUN_ID + j as u32;
            let traj = run(&config)?;
            let windows = extract_windows(&traj, &opts, run_id)?
                .into_iter()
                .filter(Window::is_attacked)
                .collect();
            Ok((windows, run_info(&config, run_id)))
        })
    }
}

pub fn window_set(window_s: f64, windows: Vec<Window>, norm: &NormStats, runs: &[RunInfo], note: &str) -> Result<WindowSet> {
    let len = accguard_core::dataset::window_len(window_s);
    let mut set = WindowSet::new(
        len,
        windows,
        Provenance {
            window_s,
            sample_rate_hz: SAMPLE_RATE_HZ,
            runs: runs.to_vec(),
            note: note.to_string(),
        },
    )?;
    set.norm = Some(norm.clone());
    Ok(set)
}

pub fn write_window_set(set: &WindowSet, path: &Path) -> CliResult<()> {
    let mut bytes = Vec::new();
    set.write(&mut bytes)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_window_set(path: &Path) -> CliResult<WindowSet> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    WindowSet::from_bytes(&bytes).map_err(|e| CliError::from(e.context(path.display().to_string())))
}

/// Model bytes and their checksum.
pub fn read_model(path: &Path) -> CliResult<(GanModel, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let model = checkpoint::from_bytes(&bytes).map_err(|e| CliError::from(e.context(path.display().to_string())))?;
    Ok((model, checkpoint::checksum(&bytes)))
}

/// Fills every unset GAN option with the model default for `window_s`.
pub fn resolve_gan(g: &mut GanArgs, window_s: f64) -> Result<()> {
    let d = GanConfig::for_window(window_s, 0)?;
    g.epochs.get_or_insert(d.epochs);
    g.latent_dim.get_or_insert(d.latent_dim);
    g.base_channels.get_or_insert(d.base_channels);
    g.batch_size.get_or_insert(d.batch_size);
    g.lr_g.get_or_insert(d.lr_g);
    g.lr_d.get_or_insert(d.lr_d);
    g.momentum.get_or_insert(d.momentum);
    g.warmup_epochs.get_or_insert(d.warmup_epochs);
    g.input_scale.get_or_insert(d.input_scale);
    Ok(())
}

pub fn gan_config(g: &GanArgs, window_s: f64, seed: u64) -> Result<GanConfig> {
    let d = GanConfig::for_window(window_s, seed)?;
    let config = GanConfig {
        epochs: g.epochs.unwrap_or(d.epochs),
        latent_dim: g.latent_dim.unwrap_or(d.latent_dim),
        base_channels: g.base_channels.unwrap_or(d.base_channels),
        batch_size: g.batch_size.unwrap_or(d.batch_size),
        lr_g: g.lr_g.unwrap_or(d.lr_g),
        lr_d: g.lr_d.unwrap_or(d.lr_d),
        momentum: g.momentum.unwrap_or(d.momentum),
        warmup_epochs: g.warmup_epochs.unwrap_or(d.warmup_epochs),
        input_scale: g.input_scale.unwrap_or(d.input_scale),
        ..d
    };
    config.validate()?;
    Ok(config)
}

pub fn detector_config(inv: &InversionArgs, seed: u64) -> Result<DetectorConfig> {
    let config = DetectorConfig {
        lambda: inv.lambda,
        steps: inv.steps,
        lr: inv.inv_lr,
        restarts: inv.restarts,
        seed,
    };
    config.validate()?;
    Ok(config)
}

pub fn check_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Config(format!("percentile must be in (0, 100], got {p}")));
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}
