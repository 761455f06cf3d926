//! Reference demonstrations: CSV ingestion, serialization and window sampling.
//!
//! File layout:
//!
//! ```text
//! # motion leap
//! t,vx,vz,pitch_rate,gx,gz,height
//! # trajectory 0
//! 0.0000000000000000e0,...
//! # trajectory 1
//! ...
//! ```
//!
//! The header may be extended with `q0..q3,dq0..dq3` joint columns, which are
//! only used by full-state discriminators. Rows before the first
//! `# trajectory` marker form an implicit first trajectory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{
    frame_features, Observation, ObservationWindow, JOINT_FEATURE_DIM, OBS_DIM,
};

pub const BASE_HEADER: [&str; 7] = ["t", "vx", "vz", "pitch_rate", "gx", "gz", "height"];
pub const JOINT_HEADER: [&str; JOINT_FEATURE_DIM] =
    ["q0", "q1", "q2", "q3", "dq0", "dq1", "dq2", "dq3"];

const GRAVITY_NORM_TOL: f64 = 1e-6;
const DT_TOL: f64 = 1e-9;
const DEFAULT_DT: f64 = 0.02;

/// One demonstration: base observations and, optionally, joint features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub joints: Option<Vec<[f64; JOINT_FEATURE_DIM]>>,
}

impl Trajectory {
    pub fn new(observations: Vec<Observation>) -> Self {
        Self {
            observations,
            joints: None,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    fn frame(&self, i: usize, full_state: bool) -> Vec<f64> {
        let joints = if full_state {
            self.joints.as_ref().map(|j| &j[i])
        } else {
            None
        };
        frame_features(&self.observations[i], joints)
    }
}

/// The demonstration distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDataset {
    pub trajectories: Vec<Trajectory>,
    pub motion_name: String,
    pub dt: f64,
}

impl ReferenceDataset {
    pub fn new(trajectories: Vec<Trajectory>, motion_name: impl Into<String>, dt: f64) -> Self {
        Self {
            trajectories,
            motion_name: motion_name.into(),
            dt,
        }
    }

    pub fn has_joints(&self) -> bool {
        !self.trajectories.is_empty() && self.trajectories.iter().all(|t| t.joints.is_some())
    }

    pub fn min_len(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).min().unwrap_or(0)
    }

    pub fn max_len(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).max().unwrap_or(0)
    }

    /// Number of valid window start positions for `horizon`.
    pub fn window_count(&self, horizon: usize) -> usize {
        self.trajectories
            .iter()
            .map(|t| (t.len() + 1).saturating_sub(horizon))
            .sum()
    }

    pub fn window_at(
        &self,
        trajectory: usize,
        start: usize,
        horizon: usize,
        full_state: bool,
    ) -> Result<ObservationWindow> {
        let t = &self.trajectories[trajectory];
        let frame_dim = if full_state {
            OBS_DIM + JOINT_FEATURE_DIM
        } else {
            OBS_DIM
        };
        if full_state && t.joints.is_none() {
            return Err(Error::InvalidArgument(
                "full-state windows need joint columns in the reference data".into(),
            ));
        }
        let data = (start..start + horizon)
            .flat_map(|i| t.frame(i, full_state))
            .collect();
        ObservationWindow::new(horizon, frame_dim, data)
    }

    /// Every window of length `horizon` in dataset order.
    pub fn all_windows(&self, horizon: usize, full_state: bool) -> Result<Vec<ObservationWindow>> {
        let mut out = Vec::with_capacity(self.window_count(horizon));
        for (ti, t) in self.trajectories.iter().enumerate() {
            for start in 0..(t.len() + 1).saturating_sub(horizon) {
                out.push(self.window_at(ti, start, horizon, full_state)?);
            }
        }
        Ok(out)
    }

    /// Per-feature mean and standard deviation over all frames.
    pub fn frame_moments(&self, full_state: bool) -> (Vec<f64>, Vec<f64>) {
        let frames: Vec<Vec<f64>> = self
            .trajectories
            .iter()
            .flat_map(|t| (0..t.len()).map(move |i| t.frame(i, full_state)))
            .collect();
        let dim = frames.first().map_or(OBS_DIM, Vec::len);
        let n = frames.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for f in &frames {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for f in &frames {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        (mean, var.into_iter().map(f64::sqrt).collect())
    }

    pub fn validate(&self, horizon: usize, path: &Path) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::NoTrajectories(path.to_path_buf()));
        }
        for (index, t) in self.trajectories.iter().enumerate() {
            if t.len() < horizon {
                return Err(Error::TrajectoryTooShort {
                    path: path.to_path_buf(),
                    index,
                    len: t.len(),
                    horizon,
                });
            }
        }
        Ok(())
    }

    /// Uniform draw, with replacement, over all valid (trajectory, start) pairs.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        batch: usize,
        horizon: usize,
        full_state: bool,
        rng: &mut R,
    ) -> Result<Vec<ObservationWindow>> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let counts: Vec<usize> = self
            .trajectories
            .iter()
            .map(|t| (t.len() + 1).saturating_sub(horizon))
            .collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument(format!(
                "no trajectory is long enough for horizon {horizon}"
            )));
        }
        (0..batch)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                let mut ti = 0;
                while k >= counts[ti] {
                    k -= counts[ti];
                    ti += 1;
                }
                self.window_at(ti, k, horizon, full_state)
            })
            .collect()
    }
}

/// Free-function form of [`ReferenceDataset::sample_windows`] for base-only windows.
pub fn sample_reference_windows<R: Rng + ?Sized>(
    dataset: &ReferenceDataset,
    batch: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<ObservationWindow>> {
    dataset.sample_windows(batch, horizon, false, rng)
}

/// Loads a CSV file, or every `*.csv` file in a directory (sorted by name).
pub fn load_reference_dataset(path: &Path, horizon: usize) -> Result<ReferenceDataset> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };

    let mut trajectories = Vec::new();
    let mut motion_name = String::new();
    let mut dt: Option<f64> = None;
    for file in &files {
        let text = fs::read_to_string(file)?;
        let parsed = parse_csv(&text, file)?;
        if motion_name.is_empty() {
            motion_name = parsed.motion;
        }
        for (t, times) in parsed.trajectories.into_iter().zip(parsed.times) {
            let index = trajectories.len();
            if let Some(step) = uniform_step(&times, file, index)? {
                match dt {
                    None => dt = Some(step),
                    Some(d) if (d - step).abs() > DT_TOL => {
                        return Err(Error::NonUniformDt {
                            path: file.clone(),
                            index,
                            row: 1,
                        })
                    }
                    _ => {}
                }
            }
            trajectories.push(t);
        }
    }

    let dataset = ReferenceDataset {
        trajectories,
        motion_name,
        dt: dt.unwrap_or(DEFAULT_DT),
    };
    dataset.validate(horizon, path)?;
    Ok(dataset)
}

struct ParsedFile {
    motion: String,
    trajectories: Vec<Trajectory>,
    times: Vec<Vec<f64>>,
}

fn parse_csv(text: &str, path: &Path) -> Result<ParsedFile> {
    let mut motion = String::new();
    let mut columns: Option<Vec<String>> = None;
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut times: Vec<Vec<f64>> = Vec::new();
    let mut current: Option<(Vec<f64>, Vec<Observation>, Vec<[f64; JOINT_FEATURE_DIM]>)> = None;

    let flush = |current: &mut Option<(Vec<f64>, Vec<Observation>, Vec<[f64; JOINT_FEATURE_DIM]>)>,
                 trajectories: &mut Vec<Trajectory>,
                 times: &mut Vec<Vec<f64>>,
                 with_joints: bool| {
        if let Some((t, obs, joints)) = current.take() {
            if !obs.is_empty() {
                trajectories.push(Trajectory {
                    observations: obs,
                    joints: with_joints.then_some(joints),
                });
                times.push(t);
            }
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(name) = comment.strip_prefix("motion") {
                motion = name.trim().to_string();
            } else if comment.starts_with("trajectory") {
                let with_joints = columns.as_ref().is_some_and(|c| c.len() > BASE_HEADER.len());
                flush(&mut current, &mut trajectories, &mut times, with_joints);
                current = Some(Default::default());
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = &columns else {
            columns = Some(parse_header(&cells, path, line_no)?);
            continue;
        };
        if cells.len() != cols.len() {
            return Err(Error::ColumnCount {
                path: path.to_path_buf(),
                line: line_no,
                expected: cols.len(),
                found: cells.len(),
            });
        }
        let mut values = Vec::with_capacity(cells.len());
        for (cell, col) in cells.iter().zip(cols) {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                path: path.to_path_buf(),
                line: line_no,
                column: col.clone(),
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumericCell {
                    path: path.to_path_buf(),
                    line: line_no,
                    column: col.clone(),
                    cell: cell.to_string(),
                });
            }
            values.push(v);
        }
        let obs = Observation::from_slice(&values[1..1 + OBS_DIM])?;
        let norm = obs.gravity_norm();
        if (norm - 1.0).abs() > GRAVITY_NORM_TOL {
            return Err(Error::NonUnitGravity {
                path: path.to_path_buf(),
                line: line_no,
                norm,
            });
        }
        let entry = current.get_or_insert_with(Default::default);
        entry.0.push(values[0]);
        entry.1.push(obs);
        if values.len() > BASE_HEADER.len() {
            let mut j = [0.0; JOINT_FEATURE_DIM];
            j.copy_from_slice(&values[BASE_HEADER.len()..]);
            entry.2.push(j);
        }
    }
    let with_joints = columns.as_ref().is_some_and(|c| c.len() > BASE_HEADER.len());
    flush(&mut current, &mut trajectories, &mut times, with_joints);
    Ok(ParsedFile {
        motion,
        trajectories,
        times,
    })
}

fn parse_header(cells: &[&str], path: &Path, line: usize) -> Result<Vec<String>> {
    let base_ok = cells.len() >= BASE_HEADER.len()
        && cells[..BASE_HEADER.len()]
            .iter()
            .zip(BASE_HEADER)
            .all(|(a, b)| *a == b);
    let rest = &cells[BASE_HEADER.len().min(cells.len())..];
    let rest_ok = rest.is_empty()
        || (rest.len() == JOINT_HEADER.len() && rest.iter().zip(JOINT_HEADER).all(|(a, b)| *a == b));
    if !base_ok || !rest_ok {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            line,
            msg: format!(
                "expected `{}` (optionally followed by `{}`), found `{}`",
                BASE_HEADER.join(","),
                JOINT_HEADER.join(","),
                cells.join(",")
            ),
        });
    }
    Ok(cells.iter().map(|s| s.to_string()).collect())
}

fn uniform_step(times: &[f64], path: &Path, index: usize) -> Result<Option<f64>> {
    if times.len() < 2 {
        return Ok(None);
    }
    let step = times[1] - times[0];
    for (row, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > DT_TOL {
            return Err(Error::NonUniformDt {
                path: path.to_path_buf(),
                index,
                row: row + 1,
            });
        }
    }
    Ok(Some(step))
}

fn fmt_float(out: &mut String, v: f64) {
    // 17 significant digits: exact round trip for every f64.
    let _ = write!(out, "{v:.16e}");
}

/// Serializes trajectories into the multi-trajectory CSV layout.
pub fn to_csv(trajectories: &[Trajectory], motion_name: &str, dt: f64) -> String {
    let with_joints = !trajectories.is_empty() && trajectories.iter().all(|t| t.joints.is_some());
    let mut out = String::new();
    if !motion_name.is_empty() {
        let _ = writeln!(out, "# motion {motion_name}");
    }
    out.push_str(&BASE_HEADER.join(","));
    if with_joints {
        out.push(',');
        out.push_str(&JOINT_HEADER.join(","));
    }
    out.push('\n');
    for (n, t) in trajectories.iter().enumerate() {
        let _ = writeln!(out, "# trajectory {n}");
        for (i, o) in t.observations.iter().enumerate() {
            fmt_float(&mut out, i as f64 * dt);
            for v in o.to_array() {
                out.push(',');
                fmt_float(&mut out, v);
            }
            if with_joints {
                if let Some(j) = &t.joints {
                    for v in j[i] {
                        out.push(',');
                        fmt_float(&mut out, v);
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_dataset(path: &Path, dataset: &ReferenceDataset) -> Result<()> {
    fs::write(
        path,
        to_csv(&dataset.trajectories, &dataset.motion_name, dataset.dt),
    )?;
    Ok(())
}
