//! Fixed-length `[speed, gap, acceleration]` windows cut from trajectories, their
//! normalization, the train/validation/test split and the `.accw` file format.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::ring_sim::{Trajectory, VehicleClass};

/// Rate at which trajectories are sampled into windows.
pub const SAMPLE_RATE_HZ: f64 = 30.0;
pub const CHANNELS: usize = 3;
pub const ACCW_MAGIC: &[u8; 4] = b"ACCW";
pub const ACCW_VERSION: u8 = 1;

/// Number of samples in a window of `seconds`.
pub fn window_len(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE_HZ).round() as usize
}

/// One vehicle's `[speed, gap, acceleration]` over `t` samples, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<f32>,
    pub len: usize,
    /// 0 normal, 1 attacked.
    pub label: u8,
    pub veh_id: u32,
    pub t_start: f32,
    pub run_id: u32,
    pub class: VehicleClass,
}

impl Window {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn is_attacked(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassFilter {
    All,
    Acc,
    Hv,
}

impl ClassFilter {
    pub fn accepts(&self, class: VehicleClass) -> bool {
        match self {
            ClassFilter::All => true,
            ClassFilter::Acc => class == VehicleClass::Acc,
            ClassFilter::Hv => class == VehicleClass::Hv,
        }
    }
}

impl std::str::FromStr for ClassFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(ClassFilter::All),
            "acc" => Ok(ClassFilter::Acc),
            "hv" | "human" => Ok(ClassFilter::Hv),
            other => Err(Error::Config(format!("classes must be all|acc|hv, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub window_s: f64,
    pub stride_s: f64,
    pub classes: ClassFilter,
    /// Windows start at or after this time (s).
    pub start_s: f64,
}

impl ExtractOptions {
    pub fn new(window_s: f64, stride_s: f64) -> Self {
        ExtractOptions {
            window_s,
            stride_s,
            classes: ClassFilter::All,
            start_s: 0.0,
        }
    }
}

/// Sliding windows per selected vehicle. A window is labelled attacked iff any of its
/// samples has the vehicle under an active attack.
pub fn extract_windows(traj: &Trajectory, opts: &ExtractOptions, run_id: u32) -> Result<Vec<Window>> {
    let len = window_len(opts.window_s);
    let stride = window_len(opts.stride_s);
    if len < 2 || stride == 0 {
        return Err(Error::Argument(format!(
            "window {} s / stride {} s too short at {SAMPLE_RATE_HZ} Hz",
            opts.window_s, opts.stride_s
        )));
    }
    let first = (opts.start_s.max(0.0) / traj.config.dt).round() as usize;
    let n_steps = traj.n_steps();
    if first + len > n_steps {
        return Err(Error::Argument(format!(
            "window of {len} samples does not fit in a trajectory of {n_steps} steps starting at {first}"
        )));
    }
    let mut out = Vec::new();
    for veh_id in 1..=traj.n_vehicles() {
        let class = traj.class_of(veh_id);
        if !opts.classes.accepts(class) {
            continue;
        }
        let rows: Vec<_> = traj.vehicle(veh_id).collect();
        let mut start = first;
        while start + len <= n_steps {
            let slice = &rows[start..start + len];
            let mut data = Vec::with_capacity(CHANNELS * len);
            data.extend(slice.iter().map(|r| r.speed as f32));
            data.extend(slice.iter().map(|r| r.gap as f32));
            data.extend(slice.iter().map(|r| r.accel as f32));
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite sample in vehicle {veh_id} window at {}",
                    slice[0].time
                )));
            }
            out.push(Window {
                data,
                len,
                label: u8::from(slice.iter().any(|r| r.attacked)),
                veh_id: veh_id as u32,
                t_start: slice[0].time as f32,
                run_id,
                class,
            });
            start += stride;
        }
    }
    Ok(out)
}

/// Per-channel z-score statistics fitted on normal training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn fit(windows: &[Window]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Data("cannot fit normalization on zero windows".into()));
        }
        if let Some(w) = windows.iter().find(|w| w.label != 0) {
            return Err(Error::Data(format!(
                "normalization must be fitted on normal windows; vehicle {} at {} s is attacked",
                w.veh_id, w.t_start
            )));
        }
        let mut mean = [0.0; CHANNELS];
        let mut std = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let mut count = 0usize;
            let mut sum = 0.0;
            for w in windows {
                sum += w.channel(c).iter().map(|&x| x as f64).sum::<f64>();
                count += w.len;
            }
            let m = sum / count as f64;
            let var = windows
                .iter()
                .flat_map(|w| w.channel(c).iter())
                .map(|&x| (x as f64 - m).powi(2))
                .sum::<f64>()
                / count as f64;
            if !(var > 0.0) {
                return Err(Error::Data(format!("channel {c} has zero variance")));
            }
            mean[c] = m;
            std[c] = var.sqrt();
        }
        Ok(NormStats { mean, std })
    }

    /// Channel-major z-scores of one window.
    pub fn normalize(&self, w: &Window) -> Vec<f64> {
        let mut out = Vec::with_capacity(w.data.len());
        for c in 0..CHANNELS {
            out.extend(w.channel(c).iter().map(|&x| (x as f64 - self.mean[c]) / self.std[c]));
        }
        out
    }

    pub fn denormalize(&self, z: &[f64], len: usize) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / len;
                v * self.std[c] + self.mean[c]
            })
            .collect()
    }
}

/// Fits statistics on the training windows and returns them normalized.
pub fn fit_apply_norm(train: &[Window]) -> Result<(NormStats, Vec<Vec<f64>>)> {
    let stats = NormStats::fit(train)?;
    let normalized = apply_norm(&stats, train);
    Ok((stats, normalized))
}

pub fn apply_norm(stats: &NormStats, windows: &[Window]) -> Vec<Vec<f64>> {
    windows.iter().map(|w| stats.normalize(w)).collect()
}

/// Requested split sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_normal: usize,
    pub test_attacked: usize,
    /// Validation size relative to the whole test set, as `validation : test`.
    pub val_test_ratio: (usize, usize),
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_normal: 200,
            test_attacked: 200,
            val_test_ratio: (4, 1),
        }
    }
}

impl SplitSpec {
    pub fn validation_size(&self) -> usize {
        let (v, t) = self.val_test_ratio;
        ((self.test_normal + self.test_attacked) * v).div_ceil(t.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    /// Normal windows only.
    pub train: Vec<Window>,
    /// Normal windows only.
    pub validation: Vec<Window>,
    /// Normal windows first, then attacked ones.
    pub test: Vec<Window>,
}

/// Seeded split. Normal windows are shuffled with one stream and attacked windows with
/// another, so the normal partition depends only on the normal pool and the seed.
/// Attacked windows beyond the requested test count are left out.
pub fn split(windows: Vec<Window>, seed: u64, spec: &SplitSpec) -> Result<DatasetSplit> {
    let (mut normal, mut attacked): (Vec<Window>, Vec<Window>) =
        windows.into_iter().partition(|w| w.label == 0);
    let n_val = spec.validation_size();
    let need_normal = spec.test_normal + n_val + 1;
    if normal.len() < need_normal {
        return Err(Error::Data(format!(
            "need {need_normal} normal windows ({} test + {n_val} validation + at least 1 train), have {} (deficit {})",
            spec.test_normal,
            normal.len(),
            need_normal - normal.len()
        )));
    }
    if attacked.len() < spec.test_attacked {
        return Err(Error::Data(format!(
            "need {} attacked windows, have {} (deficit {})",
            spec.test_attacked,
            attacked.len(),
            spec.test_attacked - attacked.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    normal.shuffle(&mut rng);
    rng.set_stream(1);
    attacked.shuffle(&mut rng);

    let mut rest = normal.split_off(spec.test_normal);
    let mut test = normal;
    let train = rest.split_off(n_val);
    let validation = rest;
    attacked.truncate(spec.test_attacked);
    test.extend(attacked);
    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}

/// One simulation run that contributed windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: u32,
    pub seed: u64,
    pub attack: AttackKind,
    pub mpr: f64,
    pub ring_length: f64,
}

/// JSON footer of an `.accw` file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub window_s: f64,
    pub sample_rate_hz: f64,
    pub runs: Vec<RunInfo>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Footer {
    norm: Option<NormStats>,
    provenance: Provenance,
    run_ids: Vec<u32>,
    classes: Vec<VehicleClass>,
}

/// Windows of equal length with optional normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub len: usize,
    pub windows: Vec<Window>,
    pub norm: Option<NormStats>,
    pub provenance: Provenance,
}

impl WindowSet {
    pub fn new(len: usize, windows: Vec<Window>, provenance: Provenance) -> Result<Self> {
        if let Some(w) = windows.iter().find(|w| w.len != len || w.data.len() != CHANNELS * len) {
            return Err(Error::Data(format!(
                "window of vehicle {} has length {} but the set expects {len}",
                w.veh_id, w.len
            )));
        }
        Ok(WindowSet {
            len,
            windows,
            norm: None,
            provenance,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ACCW_MAGIC)?;
        w.write_all(&[ACCW_VERSION])?;
        w.write_all(&(self.windows.len() as u32).to_le_bytes())?;
        w.write_all(&(CHANNELS as u32).to_le_bytes())?;
        w.write_all(&(self.len as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(9 + 4 * CHANNELS * self.len);
        for win in &self.windows {
            buf.clear();
            buf.push(win.label);
            buf.extend_from_slice(&win.veh_id.to_le_bytes());
            buf.extend_from_slice(&win.t_start.to_le_bytes());
            for x in &win.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        let footer = Footer {
            norm: self.norm.clone(),
            provenance: self.provenance.clone(),
            run_ids: self.windows.iter().map(|w| w.run_id).collect(),
            classes: self.windows.iter().map(|w| w.class).collect(),
        };
        let json = serde_json::to_vec(&footer).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != ACCW_MAGIC {
            return Err(Error::Format("not an ACCW file (bad magic)".into()));
        }
        let version = cur.take(1)?[0];
        if version != ACCW_VERSION {
            return Err(Error::Format(format!("unsupported ACCW version {version}")));
        }
        let n = cur.u32()? as usize;
        let channels = cur.u32()? as usize;
        let len = cur.u32()? as usize;
        if channels != CHANNELS {
            return Err(Error::Format(format!("expected {CHANNELS} channels, file has {channels}")));
        }
        let record = 9 + 4 * CHANNELS * len;
        if bytes.len() < cur.pos + n * record + 4 {
            return Err(Error::Format(format!(
                "truncated ACCW file: {n} windows of {record} bytes do not fit in {} bytes",
                bytes.len()
            )));
        }
        let mut windows = Vec::with_capacity(n);
        for _ in 0..n {
            let label = cur.take(1)?[0];
            if label > 1 {
                return Err(Error::Format(format!("label must be 0 or 1, got {label}")));
            }
            let veh_id = cur.u32()?;
            let t_start = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
            let data = cur
                .take(4 * CHANNELS * len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            windows.push(Window {
                data,
                len,
                label,
                veh_id,
                t_start,
                run_id: 0,
                class: VehicleClass::Hv,
            });
        }
        let footer_len = cur.u32()? as usize;
        let footer: Footer = serde_json::from_slice(cur.take(footer_len)?)
            .map_err(|e| Error::Format(format!("bad ACCW footer: {e}")))?;
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after ACCW footer",
                bytes.len() - cur.pos
            )));
        }
        if footer.run_ids.len() != n || footer.classes.len() != n {
            return Err(Error::Format("ACCW footer does not describe every window".into()));
        }
        for ((w, run_id), class) in windows.iter_mut().zip(footer.run_ids).zip(footer.classes) {
            w.run_id = run_id;
            w.class = class;
        }
        Ok(WindowSet {
            len,
            windows,
            norm: footer.norm,
            provenance: footer.provenance,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!(
                "unexpected end of file at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
