//! Overlap and boundary metrics between binary masks.
//!
//! Undefined cases (both masks empty for Dice/Jaccard, either mask empty for
//! Hausdorff) yield `Ok(None)` rather than a sentinel number.

use crate::error::Result;
use crate::volume::{Dims, MaskVolume};

fn overlap_counts(a: &MaskVolume, b: &MaskVolume) -> Result<(usize, usize, usize)> {
    a.check_same_dims(b, "metric")?;
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += usize::from(x);
        nb += usize::from(y);
        both += usize::from(x && y);
    }
    Ok((na, nb, both))
}

/// `2|A∩B| / (|A| + |B|)`.
pub fn dice(a: &MaskVolume, b: &MaskVolume) -> Result<Option<f64>> {
    let (na, nb, both) = overlap_counts(a, b)?;
    if na + nb == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (na + nb) as f64))
}

/// `|A∩B| / |A∪B|`.
pub fn jaccard(a: &MaskVolume, b: &MaskVolume) -> Result<Option<f64>> {
    let (na, nb, both) = overlap_counts(a, b)?;
    let union = na + nb - both;
    if union == 0 {
        return Ok(None);
    }
    Ok(Some(both as f64 / union as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HausdorffMode {
    /// Maximum of the two directed distances.
    Max,
    /// Maximum of the two directed q-th percentiles, `q` in `[0, 100]`,
    /// with linear interpolation between order statistics.
    Percentile(f64),
}

/// Symmetric Hausdorff distance, in mm, between the voxel-center point sets
/// of `a` and `b`, with voxel spacing `spacing`.
pub fn hausdorff(
    a: &MaskVolume,
    b: &MaskVolume,
    spacing: [f64; 3],
    mode: HausdorffMode,
) -> Result<Option<f64>> {
    a.check_same_dims(b, "hausdorff")?;
    if a.is_all_clear() || b.is_all_clear() {
        return Ok(None);
    }
    let ab = directed_distances(a, b, spacing);
    let ba = directed_distances(b, a, spacing);
    let h = match mode {
        HausdorffMode::Max => {
            let m = ab.iter().chain(&ba).copied().fold(0.0, f64::max);
            m.sqrt()
        }
        HausdorffMode::Percentile(q) => {
            let q = q.clamp(0.0, 100.0);
            percentile(ab, q).max(percentile(ba, q))
        }
    };
    Ok(Some(h))
}

/// Squared distances from every voxel of `from` to the nearest voxel of `to`.
fn directed_distances(from: &MaskVolume, to: &MaskVolume, spacing: [f64; 3]) -> Vec<f64> {
    let dt = squared_distance_transform(to, spacing);
    from.data()
        .iter()
        .zip(&dt)
        .filter_map(|(&f, &d)| f.then_some(d))
        .collect()
}

/// q-th percentile of the distances whose squares are `sq`.
fn percentile(mut sq: Vec<f64>, q: f64) -> f64 {
    for v in sq.iter_mut() {
        *v = v.sqrt();
    }
    sq.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (sq.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sq[lo] + (sq[hi] - sq[lo]) * t
}

/// Exact squared Euclidean distance (mm²) from each voxel to the nearest set
/// voxel of `mask`, by separable lower envelopes of parabolas. Returns
/// `f64::INFINITY` everywhere when `mask` is empty.
pub fn squared_distance_transform(mask: &MaskVolume, spacing: [f64; 3]) -> Vec<f64> {
    let dims = mask.dims();
    let mut f: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..3 {
        transform_axis(&mut f, dims, axis, spacing[axis]);
    }
    f
}

fn transform_axis(f: &mut [f64], dims: Dims, axis: usize, spacing: f64) {
    let n = dims.as_array()[axis];
    let stride = [1, dims.nx, dims.nx * dims.ny][axis];
    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut hull = vec![0usize; n];
    let mut bounds = vec![0.0f64; n + 1];
    let lines = dims.len() / n;
    let (a1, a2) = match axis {
        0 => (dims.ny, dims.nz),
        1 => (dims.nx, dims.nz),
        _ => (dims.nx, dims.ny),
    };
    debug_assert_eq!(a1 * a2, lines);
    for j in 0..a2 {
        for i in 0..a1 {
            let start = match axis {
                0 => dims.index(0, i, j),
                1 => dims.index(i, 0, j),
                _ => dims.index(i, j, 0),
            };
            for (k, v) in line.iter_mut().enumerate() {
                *v = f[start + k * stride];
            }
            envelope_1d(&line, &mut out, &mut hull, &mut bounds, spacing);
            for (k, v) in out.iter().enumerate() {
                f[start + k * stride] = *v;
            }
        }
    }
}

fn envelope_1d(f: &[f64], out: &mut [f64], hull: &mut [usize], bounds: &mut [f64], s: f64) {
    let n = f.len();
    let pos = |q: usize| q as f64 * s;
    let mut k: isize = -1;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                hull[0] = q;
                bounds[0] = f64::NEG_INFINITY;
                bounds[1] = f64::INFINITY;
                break;
            }
            let v = hull[k as usize];
            let (pq, pv) = (pos(q), pos(v));
            let x = ((f[q] + pq * pq) - (f[v] + pv * pv)) / (2.0 * (pq - pv));
            if x <= bounds[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            hull[k as usize] = q;
            bounds[k as usize] = x;
            bounds[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|v| *v = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while bounds[j + 1] < pos(q) {
            j += 1;
        }
        let v = hull[j];
        let d = (q as f64 - v as f64) * s;
        *o = d * d + f[v];
    }
}

/// Dice, Jaccard and Hausdorff of one prediction/reference pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub hausdorff: Option<f64>,
}

pub fn evaluate_pair(
    pred: &MaskVolume,
    truth: &MaskVolume,
    spacing: [f64; 3],
    mode: HausdorffMode,
) -> Result<MetricReport> {
    Ok(MetricReport {
        dice: dice(pred, truth)?,
        jaccard: jaccard(pred, truth)?,
        hausdorff: hausdorff(pred, truth, spacing, mode)?,
    })
}
