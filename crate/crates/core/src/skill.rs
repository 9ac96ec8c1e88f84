//! Demonstrations, via-point sets and the six-GP skill model.
//!
//! The GP runs on physical seconds. Public queries take a phase in `[0, 1]`
//! (`t = phase · duration`) and return derivatives per second.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::envs::TaskConfiguration;
use crate::error::{invalid, Error, Result};
use crate::gp::{kernel_terms, GpBasis, GpModel, KernelParams};
use crate::lsq::{self, LmOptions};
use crate::so3;

pub const AXIS_NAMES: [&str; 6] = ["px", "py", "pz", "rx", "ry", "rz"];
pub const DEFAULT_VIA_COUNT: usize = 15;
pub const MIN_DEMO_SAMPLES: usize = 20;
const CSV_HEADER: [&str; 8] = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"];

/// A single timestamped 6-DoF pose series.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    times: Vec<f64>,
    timestamps: Vec<f64>,
    positions: Vec<[f64; 3]>,
    orientations: Vec<[f64; 4]>,
    rotation_vectors: Vec<[f64; 3]>,
}

impl Demonstration {
    /// Builds a demonstration from recorded times (seconds), positions and
    /// `[w, x, y, z]` quaternions.
    pub fn new(times: Vec<f64>, positions: Vec<[f64; 3]>, orientations: Vec<[f64; 4]>) -> Result<Self> {
        let n = times.len();
        if positions.len() != n || orientations.len() != n {
            return Err(invalid("times, positions and orientations differ in length"));
        }
        if n < MIN_DEMO_SAMPLES {
            return Err(invalid(format!(
                "demonstration needs at least {MIN_DEMO_SAMPLES} samples, got {n}"
            )));
        }
        let finite = times.iter().all(|t| t.is_finite())
            && positions.iter().flatten().all(|v| v.is_finite())
            && orientations.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(invalid("demonstration contains non-finite values"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("demonstration timestamps must be strictly increasing"));
        }
        let mut orientations = orientations;
        for (i, q) in orientations.iter().enumerate() {
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("quaternion {i} is not unit norm ({norm})")));
            }
        }
        for i in 1..n {
            let dot: f64 = (0..4).map(|k| orientations[i][k] * orientations[i - 1][k]).sum();
            if dot < 0.0 {
                let q = orientations[i];
                orientations[i] = [-q[0], -q[1], -q[2], -q[3]];
            }
        }
        let rotation_vectors = so3::to_rotation_vectors(&orientations)?;
        let t0 = times[0];
        let span = times[n - 1] - t0;
        let timestamps = times.iter().map(|t| (t - t0) / span).collect();
        Ok(Self {
            times,
            timestamps,
            positions,
            orientations,
            rotation_vectors,
        })
    }

    /// Parses the CSV format `t,px,py,pz,qw,qx,qy,qz`.
    pub fn load_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names != CSV_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {}, got {}", CSV_HEADER.join(","), names.join(",")),
            });
        }
        let mut times = Vec::new();
        let mut positions = Vec::new();
        let mut orientations = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let line = row as u64 + 2;
            let record = record.map_err(|e| csv_error(e, line))?;
            let mut vals = [0.0; 8];
            for (k, field) in record.iter().enumerate() {
                vals[k] = field.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("column {}: {e}", CSV_HEADER[k]),
                })?;
            }
            times.push(vals[0]);
            positions.push([vals[1], vals[2], vals[3]]);
            orientations.push([vals[4], vals[5], vals[6], vals[7]]);
        }
        Self::new(times, positions, orientations)
    }

    pub fn save_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER).map_err(|e| csv_error(e, 0))?;
        for i in 0..self.len() {
            let p = self.positions[i];
            let q = self.orientations[i];
            let row = [self.times[i], p[0], p[1], p[2], q[0], q[1], q[2], q[3]];
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(e, 0))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Recorded times in seconds.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Times rescaled to `[0, 1]`.
    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    /// Times in seconds measured from the first sample.
    pub fn elapsed(&self) -> Vec<f64> {
        self.times.iter().map(|t| t - self.times[0]).collect()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.len() - 1] - self.times[0]
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn orientations(&self) -> &[[f64; 4]] {
        &self.orientations
    }

    pub fn rotation_vectors(&self) -> &[[f64; 3]] {
        &self.rotation_vectors
    }

    /// Values of one of the six axes (`px, py, pz, rx, ry, rz`).
    pub fn axis_values(&self, axis: usize) -> Vec<f64> {
        if axis < 3 {
            self.positions.iter().map(|p| p[axis]).collect()
        } else {
            self.rotation_vectors.iter().map(|r| r[axis - 3]).collect()
        }
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Loads a demonstration; see [`Demonstration::load_csv`].
pub fn load_demonstration<R: Read>(source: R) -> Result<Demonstration> {
    Demonstration::load_csv(source)
}

/// Sparse via-points: one shared time grid and six value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ViaPointSet {
    times: Vec<f64>,
    columns: [Vec<f64>; 6],
}

impl ViaPointSet {
    pub fn new(times: Vec<f64>, columns: [Vec<f64>; 6]) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid("via-point set needs at least two times"));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("via-point times must be finite and strictly increasing"));
        }
        for c in &columns {
            if c.len() != times.len() {
                return Err(invalid("via-point columns must match the time grid"));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(invalid("via-point values must be finite"));
            }
        }
        Ok(Self { times, columns })
    }

    /// `n` times linearly spaced over `[0, duration]`.
    pub fn linspace_times(duration: f64, n: usize) -> Vec<f64> {
        (0..n).map(|j| duration * j as f64 / (n - 1) as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn duration(&self) -> f64 {
        self.times[self.len() - 1] - self.times[0]
    }

    pub fn column(&self, axis: usize) -> &[f64] {
        &self.columns[axis]
    }

    pub fn columns(&self) -> &[Vec<f64>; 6] {
        &self.columns
    }

    pub fn value(&self, index: usize, axis: usize) -> f64 {
        self.columns[axis][index]
    }

    pub fn set(&mut self, index: usize, axis: usize, value: f64) {
        self.columns[axis][index] = value;
    }

    /// Adds position shifts laid out axis-major (`px_0..px_n, py_0.., pz_0..`),
    /// each clamped to `±bound`.
    pub fn with_position_shifts(&self, shifts: &[f64], bound: f64) -> Result<Self> {
        let n = self.len();
        if shifts.len() != 3 * n {
            return Err(invalid(format!("expected {} shifts, got {}", 3 * n, shifts.len())));
        }
        if shifts.iter().any(|s| s.is_nan()) {
            return Err(invalid("via-point shifts must not be NaN"));
        }
        let mut out = self.clone();
        for axis in 0..3 {
            for j in 0..n {
                out.columns[axis][j] += shifts[axis * n + j].clamp(-bound, bound);
            }
        }
        Ok(out)
    }

    /// Position differences `self − other`, axis-major.
    pub fn position_difference(&self, other: &ViaPointSet) -> Vec<f64> {
        (0..3)
            .flat_map(|axis| {
                self.columns[axis]
                    .iter()
                    .zip(&other.columns[axis])
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Pose, twist and acceleration at one query time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseTwistAccel {
    /// Seconds since the start of the skill.
    pub time: f64,
    pub position: [f64; 3],
    pub rotation_vector: [f64; 3],
    pub linear_velocity: [f64; 3],
    pub rotvec_rate: [f64; 3],
    pub linear_accel: [f64; 3],
    pub rotvec_accel: [f64; 3],
}

impl PoseTwistAccel {
    pub fn angular_velocity(&self) -> [f64; 3] {
        so3::rotvec_rate_to_angular_velocity(self.rotation_vector, self.rotvec_rate)
    }

    pub fn orientation(&self) -> [f64; 4] {
        so3::rotvec_to_quat(self.rotation_vector)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.position,
            self.rotation_vector,
            self.linear_velocity,
            self.rotvec_rate,
            self.linear_accel,
            self.rotvec_accel,
        ]
        .iter()
        .flatten()
        .all(|v| v.is_finite())
            && self.time.is_finite()
    }
}

/// Six via-point GPs sharing one time grid and kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillModel {
    via: ViaPointSet,
    params: KernelParams,
    models: Vec<GpModel>,
}

impl SkillModel {
    pub fn build(via: ViaPointSet, params: KernelParams) -> Result<Self> {
        let cols: Vec<&[f64]> = via.columns.iter().map(|c| c.as_slice()).collect();
        let models = GpModel::fit_shared(&via.times, &cols, params)?;
        Ok(Self { via, params, models })
    }

    /// Rebuilds with new via-points and the same kernel.
    pub fn with_via(&self, via: ViaPointSet) -> Result<Self> {
        Self::build(via, self.params)
    }

    pub fn via(&self) -> &ViaPointSet {
        &self.via
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }

    pub fn duration(&self) -> f64 {
        self.via.duration()
    }

    /// Query at a phase in `[0, 1]`; extrapolation is silent.
    pub fn query(&self, phase: f64) -> PoseTwistAccel {
        self.query_seconds(self.via.times[0] + phase * self.duration())
    }

    /// Query at time `t` in seconds.
    pub fn query_seconds(&self, t: f64) -> PoseTwistAccel {
        let mut m = [0.0; 6];
        let mut d1 = [0.0; 6];
        let mut d2 = [0.0; 6];
        for (i, ti) in self.via.times.iter().enumerate() {
            let ke = kernel_terms(t - ti, &self.params);
            for axis in 0..6 {
                let a = self.models[axis].alpha()[i];
                m[axis] += ke.k * a;
                d1[axis] += ke.dk_dt * a;
                d2[axis] += ke.d2k_dt2 * a;
            }
        }
        PoseTwistAccel {
            time: t - self.via.times[0],
            position: [m[0], m[1], m[2]],
            rotation_vector: [m[3], m[4], m[5]],
            linear_velocity: [d1[0], d1[1], d1[2]],
            rotvec_rate: [d1[3], d1[4], d1[5]],
            linear_accel: [d2[0], d2[1], d2[2]],
            rotvec_accel: [d2[3], d2[4], d2[5]],
        }
    }

    /// `n` samples at uniform phases over `[0, 1]`.
    pub fn sample_uniform(&self, n: usize) -> Vec<PoseTwistAccel> {
        let n = n.max(2);
        (0..n).map(|i| self.query(i as f64 / (n - 1) as f64)).collect()
    }

    /// Samples every `dt` seconds from start to end (inclusive).
    pub fn sample_step(&self, dt: f64) -> Vec<PoseTwistAccel> {
        let steps = (self.duration() / dt).round().max(1.0) as usize;
        (0..=steps)
            .map(|i| self.query_seconds(self.via.times[0] + i as f64 * dt))
            .collect()
    }

    /// Queried positions `p*(t_j)` at the via-point times.
    pub fn via_positions(&self) -> Vec<[f64; 3]> {
        self.via.times.iter().map(|t| self.query_seconds(*t).position).collect()
    }

    pub fn to_document(&self) -> SkillDocument {
        let c = &self.via.columns;
        SkillDocument {
            kernel: self.params,
            via: ViaDocument {
                times: self.via.times.clone(),
                columns: ColumnsDocument {
                    px: c[0].clone(),
                    py: c[1].clone(),
                    pz: c[2].clone(),
                    rx: c[3].clone(),
                    ry: c[4].clone(),
                    rz: c[5].clone(),
                },
            },
        }
    }

    pub fn from_document(doc: SkillDocument) -> Result<Self> {
        doc.kernel.validate()?;
        let c = doc.via.columns;
        let via = ViaPointSet::new(doc.via.times, [c.px, c.py, c.pz, c.rx, c.ry, c.rz])?;
        Self::build(via, doc.kernel)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// Serialised skill layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillDocument {
    pub kernel: KernelParams,
    pub via: ViaDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaDocument {
    pub times: Vec<f64>,
    pub columns: ColumnsDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnsDocument {
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    pub pz: Vec<f64>,
    pub rx: Vec<f64>,
    pub ry: Vec<f64>,
    pub rz: Vec<f64>,
}

/// Builds a skill; see [`SkillModel::build`].
pub fn build_skill(via: ViaPointSet, params: KernelParams) -> Result<SkillModel> {
    SkillModel::build(via, params)
}

/// Queries a skill at a phase in `[0, 1]`, warning on extrapolation.
pub fn query_skill(skill: &SkillModel, phase: f64) -> Result<PoseTwistAccel> {
    if !phase.is_finite() {
        return Err(invalid("query phase must be finite"));
    }
    if !(0.0..=1.0).contains(&phase) {
        log::warn!("skill queried outside [0, 1] at phase {phase}");
    }
    Ok(skill.query(phase))
}

/// Result of compressing a demonstration into via-points.
#[derive(Debug, Clone)]
pub struct ViaFit {
    pub via: ViaPointSet,
    /// Total objective over all axes per iteration.
    pub objective_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Fits `n_via` linearly spaced via-points per axis so the GP mean reproduces
/// the demonstration samples in the least-squares sense.
pub fn fit_via_points(demo: &Demonstration, n_via: usize, params: KernelParams) -> Result<ViaFit> {
    if n_via < 5 {
        return Err(invalid(format!("need at least 5 via-points, got {n_via}")));
    }
    let via_times = ViaPointSet::linspace_times(demo.duration(), n_via);
    let sample_times = demo.elapsed();
    let basis = GpBasis::new(&via_times, params)?;
    let w = basis.rows(&sample_times)?.value;
    let opts = LmOptions::default();

    let mut columns: [Vec<f64>; 6] = Default::default();
    let mut histories = Vec::with_capacity(6);
    let mut converged = true;
    let mut iterations = 0;
    for (axis, column) in columns.iter_mut().enumerate() {
        let y = DVector::from_vec(demo.axis_values(axis));
        let x0 = DVector::from_iterator(
            n_via,
            via_times.iter().map(|t| interpolate(&sample_times, y.as_slice(), *t)),
        );
        let rep = lsq::minimize(x0, |x| &w * x - &y, |_| w.clone(), &opts)?;
        converged &= rep.converged;
        iterations = iterations.max(rep.iterations);
        *column = rep.x.as_slice().to_vec();
        histories.push(rep.cost_history);
    }
    if !converged {
        log::warn!("via-point fit did not converge within {} iterations", opts.max_iterations);
    }
    Ok(ViaFit {
        via: ViaPointSet::new(via_times, columns)?,
        objective_history: combine_histories(&histories),
        converged,
        iterations,
    })
}

/// Position and rotation-vector RMSE of `skill` against the demonstration
/// samples, with demonstration time measured from its first sample.
pub fn reconstruction_rmse(skill: &SkillModel, demo: &Demonstration) -> (f64, f64) {
    let t0 = skill.via().times()[0];
    let (mut pos, mut rot) = (0.0, 0.0);
    for (i, t) in demo.elapsed().iter().enumerate() {
        let s = skill.query_seconds(t0 + t);
        let p = demo.positions()[i];
        let r = demo.rotation_vectors()[i];
        for k in 0..3 {
            pos += (s.position[k] - p[k]).powi(2);
            rot += (s.rotation_vector[k] - r[k]).powi(2);
        }
    }
    let n = demo.len() as f64;
    ((pos / n).sqrt(), (rot / n).sqrt())
}

/// Sums per-axis cost histories, holding each axis at its final value once done.
pub(crate) fn combine_histories(histories: &[Vec<f64>]) -> Vec<f64> {
    let len = histories.iter().map(|h| h.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| histories.iter().map(|h| h[k.min(h.len() - 1)]).sum())
        .collect()
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|v| *v < x);
    if i == 0 {
        return ys[0];
    }
    if i >= xs.len() {
        return ys[xs.len() - 1];
    }
    let f = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + f * (ys[i] - ys[i - 1])
}

/// Vanilla GP baseline: each observed pose overwrites its nearest via-point.
pub fn condition_on_tc(skill: &SkillModel, tc: &TaskConfiguration) -> Result<SkillModel> {
    let anchors = crate::adapt::select_anchors(skill, tc)?;
    skill.with_via(anchors.apply(skill.via()))
}
