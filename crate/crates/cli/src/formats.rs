//! File formats: trajectory CSV, demonstration logs, sample point sets.
//!
//! Trajectories are CSV with a header. Euclidean: `t,s1..sn,u1..um`; group
//! trajectories: `t`, 16 row-major homogeneous entries `p00..p33`, then the
//! twist `u1..ud`. Row k holds the state reached after applying control
//! row k at time `t = (k+1) dt`, matching the in-memory convention.
//!
//! Demonstration logs are rows of `t,x,y,z,qw,qx,qy,qz` (scalar-first
//! Hamilton quaternions, active rotations), nominally 10 Hz. Quaternions
//! are normalized on ingest; a norm more than 1e-3 from 1 is rejected.

use anyhow::{bail, Context, Result};
use kes_core::liegroups::{GroupElement, GroupKind};
use kes_core::metric::{EuclideanTrajectory, LieTrajectory};
use nalgebra::{DMatrix, DVector, Matrix3};

fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn euclidean_trajectory_to_csv(traj: &EuclideanTrajectory<f64>) -> String {
    let n = traj.dim();
    let m = traj.control_dim();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((1..=n).map(|i| format!("s{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..traj.steps() {
        let mut row = vec![fmt((k + 1) as f64 * traj.dt())];
        row.extend((0..n).map(|i| fmt(traj.states()[(i, k)])));
        row.extend((0..m).map(|i| fmt(traj.controls()[(i, k)])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn lie_trajectory_to_csv(traj: &LieTrajectory<f64>) -> String {
    let d = traj.kind().dof();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..4).flat_map(|i| (0..4).map(move |j| format!("p{i}{j}"))));
    header.extend((1..=d).map(|i| format!("u{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for k in 0..traj.steps() {
        let mut row = vec![fmt((k + 1) as f64 * traj.dt())];
        let h = traj.states()[k].homogeneous();
        row.extend((0..4).flat_map(|i| (0..4).map(move |j| fmt(h[(i, j)]))));
        row.extend((0..d).map(|i| fmt(traj.controls()[(i, k)])));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn split_row(line: &str, row: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .with_context(|| format!("row {row}: bad number {f:?}"))
        })
        .collect()
}

pub fn euclidean_trajectory_from_csv(text: &str) -> Result<EuclideanTrajectory<f64>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty trajectory file")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        bail!("trajectory header must start with `t`");
    }
    let n = cols.iter().filter(|c| c.starts_with('s')).count();
    let m = cols.iter().filter(|c| c.starts_with('u')).count();
    if n == 0 || cols.len() != 1 + n + m {
        bail!("trajectory header must be t,s1..sn,u1..um");
    }
    let mut states: Vec<f64> = Vec::new();
    let mut controls: Vec<f64> = Vec::new();
    let mut times = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = split_row(line, idx + 2)?;
        if row.len() != cols.len() {
            bail!("row {}: expected {} fields, got {}", idx + 2, cols.len(), row.len());
        }
        times.push(row[0]);
        states.extend(&row[1..1 + n]);
        controls.extend(&row[1 + n..]);
    }
    let steps = times.len();
    if steps < 2 {
        bail!("trajectory needs at least 2 rows");
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        bail!("timestamps must be increasing");
    }
    let states = DMatrix::from_fn(n, steps, |i, k| states[k * n + i]);
    let controls = DMatrix::from_fn(m.max(1), steps, |i, k| {
        if m == 0 { 0.0 } else { controls[k * m + i] }
    });
    Ok(EuclideanTrajectory::new(states, controls, dt)?)
}

pub fn lie_trajectory_from_csv(kind: GroupKind, text: &str) -> Result<LieTrajectory<f64>> {
    let d = kind.dof();
    let mut lines = text.lines();
    let header = lines.next().context("empty trajectory file")?;
    let cols = header.split(',').count();
    if cols != 1 + 16 + d {
        bail!("{kind} trajectory header must have 1 + 16 + {d} columns, got {cols}");
    }
    let mut states = Vec::new();
    let mut controls: Vec<f64> = Vec::new();
    let mut times = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = split_row(line, idx + 2)?;
        if row.len() != cols {
            bail!("row {}: expected {cols} fields, got {}", idx + 2, row.len());
        }
        times.push(row[0]);
        let m = DMatrix::from_fn(4, 4, |i, j| row[1 + 4 * i + j]);
        // poses are re-projected onto the group at the ingest boundary
        states.push(GroupElement::project(kind, &m)?);
        controls.extend(&row[17..]);
    }
    let steps = times.len();
    if steps < 2 {
        bail!("trajectory needs at least 2 rows");
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        bail!("timestamps must be increasing");
    }
    let controls = DMatrix::from_fn(d, steps, |i, k| controls[k * d + i]);
    Ok(LieTrajectory::new(states, controls, dt)?)
}

/// Scalar-first Hamilton quaternion to rotation matrix.
fn quaternion_to_rotation(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Parse a demonstration log into SE(3) poses. Rows are
/// `t,x,y,z,qw,qx,qy,qz`; an optional header line is skipped. Timestamps
/// must be strictly increasing.
pub fn demonstration_from_csv(text: &str) -> Result<Vec<GroupElement<f64>>> {
    let mut poses = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (idx, line) in text.lines().enumerate() {
        let row_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed.split(',').next().unwrap_or("").parse::<f64>().is_err() {
            continue; // header
        }
        let row = split_row(trimmed, row_no)?;
        if row.len() != 8 {
            bail!("row {row_no}: expected 8 fields (t,x,y,z,qw,qx,qy,qz), got {}", row.len());
        }
        let t = row[0];
        if t <= last_t {
            bail!("row {row_no}: timestamps must be strictly increasing");
        }
        last_t = t;
        let (qw, qx, qy, qz) = (row[4], row[5], row[6], row[7]);
        let norm = (qw * qw + qx * qx + qy * qy + qz * qz).sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            bail!("row {row_no}: quaternion norm {norm} deviates from 1 by more than 1e-3");
        }
        let r = quaternion_to_rotation(qw / norm, qx / norm, qy / norm, qz / norm);
        let mut h = DMatrix::identity(4, 4);
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] = r[(i, j)];
            }
            h[(i, 3)] = row[1 + i];
        }
        poses.push(GroupElement::project(GroupKind::SE3, &h)?);
    }
    if poses.is_empty() {
        bail!("demonstration log has no data rows");
    }
    Ok(poses)
}

/// Sample points: one comma-separated point per line, optional header.
pub fn samples_from_csv(text: &str) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed.split(',').next().unwrap_or("").parse::<f64>().is_err() {
            continue;
        }
        let row = split_row(trimmed, idx + 1)?;
        if *dim.get_or_insert(row.len()) != row.len() {
            bail!("row {}: inconsistent dimension", idx + 1);
        }
        out.push(DVector::from_vec(row));
    }
    if out.is_empty() {
        bail!("sample file has no data rows");
    }
    Ok(out)
}
