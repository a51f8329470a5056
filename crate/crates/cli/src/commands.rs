//! One function per subcommand. Each resolves its defaults, validates everything it
//! can before doing work, writes its outputs and reports what it touched.

use std::path::PathBuf;
use std::time::Instant;

use accguard_core::dataset::{split, DatasetSplit, NormStats};
use accguard_core::eval_metrics::{auc, confusion, metrics, Confusion};
use accguard_core::macro_fd::{aggregate, log_lengths, run_sweep_job, sweep_jobs, SweepConfig};
use accguard_core::ring_sim::run;
use accguard_core::{Error, Result};
use accguard_gan::detector::{calibrate_threshold, classify, score_windows, Threshold};
use accguard_gan::checkpoint;
use accguard_gan::train::train_gan;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::pipeline::*;

/// Files a command read and wrote.
#[derive(Debug, Clone)]
pub struct Record {
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// The manifest goes next to this path.
    pub primary: PathBuf,
    pub primary_is_dir: bool,
}

impl Record {
    fn file(seeds: Vec<u64>, inputs: Vec<PathBuf>, out: &std::path::Path) -> Self {
        Record {
            seeds,
            inputs,
            outputs: vec![out.to_path_buf()],
            primary: out.to_path_buf(),
            primary_is_dir: false,
        }
    }
}

pub fn write_bytes(path: &std::path::Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn simulate(mut a: SimulateArgs) -> CliResult<(Command, Record)> {
    resolve_attack(&mut a.attack);
    let config = sim_config(a.ring_m, a.duration, &a.fleet, attack_spec(&a.attack), a.seed)?;
    let traj = run(&config)?;
    if let Some(c) = traj.collisions.first() {
        eprintln!(
            "warning: {} collision(s), first by vehicle {} at step {}",
            traj.collisions.len(),
            c.veh_id,
            c.step
        );
    }
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).map_err(Error::from)?;
    write_bytes(&a.out, &buf)?;
    let record = Record::file(vec![a.seed], vec![], &a.out);
    Ok((Command::Simulate(a), record))
}

pub fn parse_lengths(s: &str) -> Result<(f64, f64, usize)> {
    let bad = || Error::Config(format!("lengths must be start:stop:count with 0 < start < stop, got '{s}'"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let [start, stop, count] = parts[..] else { return Err(bad()) };
    let start: f64 = start.parse().map_err(|_| bad())?;
    let stop: f64 = stop.parse().map_err(|_| bad())?;
    let count: usize = count.parse().map_err(|_| bad())?;
    if !(start > 0.0 && stop > start && stop.is_finite()) || count < 2 {
        return Err(bad());
    }
    Ok((start, stop, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdSummary {
    pub capacity_vph: f64,
    pub critical_density_vpkm: f64,
    pub jam_density_vpkm: Option<f64>,
    pub mpr: f64,
    pub attack: String,
    pub n_vehicles: usize,
    pub n_lengths: usize,
    pub seeds_per_length: usize,
    pub warmup_s: f64,
    pub window_s: f64,
}

pub fn fd(mut a: FdArgs) -> CliResult<(Command, Record)> {
    resolve_attack(&mut a.attack);
    let jobs = worker_count(a.jobs)?;
    a.jobs = Some(jobs);
    let summary_path = a.summary.get_or_insert_with(|| a.out.with_extension("summary.json")).clone();
    let (start, stop, count) = parse_lengths(&a.lengths)?;
    if !(a.warmup >= 0.0 && a.window > 0.0) {
        return Err(Error::Config("warmup must be >= 0 and window > 0".into()).into());
    }
    let sweep = SweepConfig {
        lengths: log_lengths(start, stop, count),
        seeds_per_length: a.seeds,
        warmup: a.warmup,
        window: a.window,
    };
    let base = sim_config(start, a.warmup + a.window, &a.fleet, attack_spec(&a.attack), a.seed)?;
    let jobs_list = sweep_jobs(&base, &sweep)?;
    let points = thread_pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|job| run_sweep_job(job, &sweep).map(|p| (job.length_index, p)))
            .collect::<Result<Vec<_>>>()
    })?;
    let curve = aggregate(&points)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).map_err(Error::from)?;
    write_bytes(&a.out, &buf)?;
    let summary = FdSummary {
        capacity_vph: curve.capacity,
        critical_density_vpkm: curve.critical_density,
        jam_density_vpkm: curve.jam_density,
        mpr: a.fleet.mpr,
        attack: a.attack.attack.to_string(),
        n_vehicles: a.fleet.n_veh,
        n_lengths: count,
        seeds_per_length: a.seeds,
        warmup_s: a.warmup,
        window_s: a.window,
    };
    write_json(&summary, &summary_path)?;
    eprintln!(
        "capacity {:.0} veh/hr at {:.1} veh/km",
        curve.capacity, curve.critical_density
    );
    let record = Record {
        seeds: (0..a.seeds as u64).map(|i| a.seed.wrapping_add(i)).collect(),
        inputs: vec![],
        outputs: vec![a.out.clone(), summary_path],
        primary: a.out.clone(),
        primary_is_dir: false,
    };
    Ok((Command::Fd(a), record))
}

pub fn dataset(mut a: DatasetArgs) -> CliResult<(Command, Record)> {
    check_window_s(a.window_s)?;
    resolve_attack(&mut a.attack);
    resolve_windowing(&mut a.windowing, a.window_s);
    let jobs = worker_count(a.jobs)?;
    a.jobs = Some(jobs);
    let spec = split_spec(&a.windowing)?;
    let attack = attack_spec(&a.attack);
    sim_config(a.windowing.ring_m, a.windowing.duration, &a.fleet, attack, a.seed)?;
    let plan = WindowPlan {
        window_s: a.window_s,
        windowing: &a.windowing,
        fleet: &a.fleet,
        seed: a.seed,
        jobs,
    };
    let ((normal, mut runs), (attacked, attack_runs)) =
        thread_pool(jobs)?.install(|| -> Result<_> { Ok((plan.normal_pool(&spec)?, plan.attacked_pool(&attack, &spec)?)) })?;
    runs.extend(attack_runs);
    let mut all = normal;
    all.extend(attacked);
    let DatasetSplit { train, validation, test } = split(all, a.seed, &spec)?;
    let norm = NormStats::fit(&train)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    let mut outputs = Vec::new();
    for (name, windows) in [("train", train), ("validation", validation), ("test", test)] {
        let path = a.out_dir.join(format!("{name}.accw"));
        eprintln!("{name}: {} windows", windows.len());
        write_window_set(&window_set(a.window_s, windows, &norm, &runs, name)?, &path)?;
        outputs.push(path);
    }
    let record = Record {
        seeds: runs.iter().map(|r| r.seed).collect(),
        inputs: vec![],
        outputs,
        primary: a.out_dir.clone(),
        primary_is_dir: true,
    };
    Ok((Command::Dataset(a), record))
}

pub fn train(mut a: TrainArgs) -> CliResult<(Command, Record)> {
    let set = read_window_set(&a.data)?;
    if set.windows.is_empty() {
        return Err(CliError::usage(format!("{}: no windows to train on", a.data.display())));
    }
    let window_s = set.len as f64 / accguard_core::dataset::SAMPLE_RATE_HZ;
    resolve_gan(&mut a.gan, window_s)?;
    let config = gan_config(&a.gan, window_s, a.seed)?;
    let norm = match &set.norm {
        Some(n) => n.clone(),
        None => NormStats::fit(&set.windows)?,
    };
    let started = Instant::now();
    let model = train_gan(&set.windows, &norm, &config)?;
    if let Some(last) = model.history.last() {
        eprintln!(
            "trained {} epochs in {:.1} s; final loss_d {:.4} loss_g {:.4}",
            model.history.len(),
            started.elapsed().as_secs_f64(),
            last.loss_d,
            last.loss_g
        );
    }
    write_bytes(&a.out, &checkpoint::to_bytes(&model)?)?;
    let record = Record::file(vec![a.seed], vec![a.data.clone()], &a.out);
    Ok((Command::Train(a), record))
}

pub fn calibrate(mut a: CalibrateArgs) -> CliResult<(Command, Record)> {
    check_percentile(a.percentile)?;
    let jobs = worker_count(a.jobs)?;
    a.jobs = Some(jobs);
    let config = detector_config(&a.inversion, a.seed)?;
    let (model, checksum) = read_model(&a.model)?;
    let set = read_window_set(&a.data)?;
    let (threshold, _) =
        thread_pool(jobs)?.install(|| calibrate_threshold(&model, &set.windows, a.percentile, &config, &checksum))?;
    eprintln!(
        "threshold {:.6} (p{} of {} validation scores)",
        threshold.value, threshold.percentile, threshold.n_validation
    );
    write_json(&threshold, &a.out)?;
    let record = Record::file(vec![a.seed], vec![a.model.clone(), a.data.clone()], &a.out);
    Ok((Command::Calibrate(a), record))
}

pub const SCORE_CSV_HEADER: &str = "window_idx,veh_id,t_start,true_label,score,pred_label";

pub fn detect(mut a: DetectArgs) -> CliResult<(Command, Record)> {
    let jobs = worker_count(a.jobs)?;
    a.jobs = Some(jobs);
    let threshold: Threshold = read_json(&a.threshold)?;
    let config = threshold.detector_config(a.seed);
    config.validate()?;
    let (model, checksum) = read_model(&a.model)?;
    if threshold.model_checksum != checksum {
        return Err(CliError::usage(format!(
            "{} was calibrated for a different model (checksum {} vs {})",
            a.threshold.display(),
            threshold.model_checksum,
            checksum
        )));
    }
    let set = read_window_set(&a.data)?;
    if set.windows.is_empty() {
        return Err(CliError::usage(format!("{}: dataset has no windows", a.data.display())));
    }
    let scores = thread_pool(jobs)?.install(|| score_windows(&model, &set.windows, &config))?;
    let mut csv = String::from(SCORE_CSV_HEADER);
    csv.push('\n');
    for (i, (w, s)) in set.windows.iter().zip(&scores).enumerate() {
        let pred = classify(s.score, threshold.value);
        csv.push_str(&format!("{i},{},{},{},{},{pred}\n", w.veh_id, w.t_start, w.label, s.score));
    }
    write_bytes(&a.out, csv.as_bytes())?;
    let flagged = scores.iter().filter(|s| classify(s.score, threshold.value) == 1).count();
    eprintln!("{flagged} of {} windows flagged", scores.len());
    let record = Record::file(vec![a.seed], vec![a.model.clone(), a.data.clone(), a.threshold.clone()], &a.out);
    Ok((Command::Detect(a), record))
}

/// Metrics of one labelled score list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
    /// Area under the ROC curve of the raw score; absent unless both classes occur.
    pub auc: Option<f64>,
}

pub fn evaluation(truth: &[u8], predicted: &[u8], scores: &[f64]) -> Result<Evaluation> {
    let m = metrics(&confusion(truth, predicted)?)?;
    let both = truth.contains(&0) && truth.contains(&1);
    Ok(Evaluation {
        n: truth.len(),
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        counts: m.counts,
        degenerate: m.degenerate,
        auc: if both { Some(auc(scores, truth)?) } else { None },
    })
}

/// `(true_label, score, pred_label)` per row of a score CSV.
pub fn parse_scores(text: &str) -> Result<Vec<(u8, f64, u8)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SCORE_CSV_HEADER => {}
        _ => return Err(Error::Format(format!("score CSV must start with '{SCORE_CSV_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::Format(format!("score CSV line {}: bad {what}", i + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        let label: u8 = f[3].parse().map_err(|_| bad("true_label"))?;
        let score: f64 = f[4].parse().map_err(|_| bad("score"))?;
        let pred: u8 = f[5].parse().map_err(|_| bad("pred_label"))?;
        rows.push((label, score, pred));
    }
    Ok(rows)
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<(Command, Record)> {
    let text = std::fs::read_to_string(&a.scores).map_err(|e| CliError::io(&a.scores, e))?;
    let rows = parse_scores(&text).map_err(|e| e.context(a.scores.display().to_string()))?;
    if rows.is_empty() {
        return Err(CliError::usage(format!("{}: no scored windows", a.scores.display())));
    }
    let truth: Vec<u8> = rows.iter().map(|r| r.0).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let pred: Vec<u8> = rows.iter().map(|r| r.2).collect();
    let e = evaluation(&truth, &pred, &scores)?;
    eprintln!(
        "accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
        e.accuracy, e.precision, e.recall, e.f1
    );
    write_json(&e, &a.out)?;
    let record = Record::file(vec![], vec![a.scores.clone()], &a.out);
    Ok((Command::Evaluate(a), record))
}
