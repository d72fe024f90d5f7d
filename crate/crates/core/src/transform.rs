//! Grid transforms: resampling, flips, quarter-turn rotations and integer
//! translations.
//!
//! All transforms work in voxel space. Spacing follows the data (it is
//! permuted by rotations and rescaled by resampling); the affine is carried
//! through unchanged.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::volume::{Dims, ScalarVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Axis::X),
            1 => Ok(Axis::Y),
            2 => Ok(Axis::Z),
            _ => Err(Error::invalid(format!("axis index {i} is not 0, 1 or 2"))),
        }
    }

    /// The two in-plane axes `(u, v)` of a rotation about `self`, ordered so
    /// that a positive quarter turn carries `u` onto `v`.
    fn plane(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (2, 0),
            Axis::Z => (0, 1),
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Continuous source coordinate of output index `i`, corner-to-corner.
#[inline]
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

fn rescaled_spacing(spacing: [f32; 3], from: Dims, to: Dims) -> [f32; 3] {
    let from = from.as_array();
    let to = to.as_array();
    let mut out = spacing;
    for a in 0..3 {
        let s = spacing[a] as f64;
        out[a] = if from[a] > 1 && to[a] > 1 {
            (s * (from[a] - 1) as f64 / (to[a] - 1) as f64) as f32
        } else {
            (s * from[a] as f64 / to[a] as f64) as f32
        };
    }
    out
}

/// Lower lattice index and fractional weight of `p` on an axis of `n` samples.
#[inline]
fn lerp_cell(p: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (p.floor().max(0.0) as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f64)
}

/// Resamples `vol` onto `target` dims. Trilinear interpolation applies to
/// real-valued volumes only; use [`resample_nearest`] for masks and labels.
pub fn resample(
    vol: &ScalarVolume,
    target: [usize; 3],
    mode: Interpolation,
) -> Result<ScalarVolume> {
    match mode {
        Interpolation::Nearest => resample_nearest(vol, target),
        Interpolation::Trilinear => resample_trilinear(vol, target),
    }
}

fn resample_trilinear(vol: &ScalarVolume, target: [usize; 3]) -> Result<ScalarVolume> {
    let src = vol.dims();
    let dst = Dims::new(target[0], target[1], target[2])?;
    let data = vol.data();
    let xs: Vec<_> = (0..dst.nx)
        .map(|i| lerp_cell(source_coord(i, src.nx, dst.nx), src.nx))
        .collect();
    let ys: Vec<_> = (0..dst.ny)
        .map(|i| lerp_cell(source_coord(i, src.ny, dst.ny), src.ny))
        .collect();
    let zs: Vec<_> = (0..dst.nz)
        .map(|i| lerp_cell(source_coord(i, src.nz, dst.nz), src.nz))
        .collect();
    let at = |x: usize, y: usize, z: usize| data[src.index(x, y, z)] as f64;
    let mut out = Vec::with_capacity(dst.len());
    for &(z0, z1, tz) in &zs {
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), tx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), tx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), tx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), tx);
                let c0 = lerp(c00, c10, ty);
                let c1 = lerp(c01, c11, ty);
                out.push(lerp(c0, c1, tz) as f32);
            }
        }
    }
    let spacing = rescaled_spacing(vol.spacing(), src, dst);
    let mut v = Volume::from_vec(dst, out)?;
    v.set_geometry(spacing, *vol.affine());
    Ok(v)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Nearest-neighbour resampling; output values are always taken from the input.
pub fn resample_nearest<T: Copy>(vol: &Volume<T>, target: [usize; 3]) -> Result<Volume<T>> {
    let src = vol.dims();
    let dst = Dims::new(target[0], target[1], target[2])?;
    let pick = |i: usize, n_in: usize, n_out: usize| {
        ((source_coord(i, n_in, n_out) + 0.5).floor() as usize).min(n_in - 1)
    };
    let xs: Vec<usize> = (0..dst.nx).map(|i| pick(i, src.nx, dst.nx)).collect();
    let ys: Vec<usize> = (0..dst.ny).map(|i| pick(i, src.ny, dst.ny)).collect();
    let zs: Vec<usize> = (0..dst.nz).map(|i| pick(i, src.nz, dst.nz)).collect();
    let data = vol.data();
    let mut out = Vec::with_capacity(dst.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push(data[src.index(x, y, z)]);
            }
        }
    }
    let spacing = rescaled_spacing(vol.spacing(), src, dst);
    let mut v = Volume::from_vec(dst, out)?;
    v.set_geometry(spacing, *vol.affine());
    Ok(v)
}

/// Mirrors the volume along `axis`.
pub fn flip<T: Copy>(vol: &Volume<T>, axis: Axis) -> Volume<T> {
    let d = vol.dims();
    let data = vol.data();
    let mut out = Vec::with_capacity(d.len());
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let (sx, sy, sz) = match axis {
                    Axis::X => (d.nx - 1 - x, y, z),
                    Axis::Y => (x, d.ny - 1 - y, z),
                    Axis::Z => (x, y, d.nz - 1 - z),
                };
                out.push(data[d.index(sx, sy, sz)]);
            }
        }
    }
    vol.with_data(out)
}

/// Rotates by `quarter_turns` × 90° about `axis`. Negative turns rotate the
/// other way. Odd turns swap the two in-plane dims (and spacings).
pub fn rotate90<T: Copy>(vol: &Volume<T>, axis: Axis, quarter_turns: i32) -> Volume<T> {
    let turns = quarter_turns.rem_euclid(4);
    if turns == 0 {
        return vol.clone();
    }
    let mut cur = vol.clone();
    for _ in 0..turns {
        cur = rotate_once(&cur, axis);
    }
    cur
}

// (u, v) -> (n_v - 1 - v, u) in the plane of `axis`.
fn rotate_once<T: Copy>(vol: &Volume<T>, axis: Axis) -> Volume<T> {
    let (u, v) = axis.plane();
    let src = vol.dims().as_array();
    let mut dst = src;
    dst.swap(u, v);
    let dst_dims = Dims::new(dst[0], dst[1], dst[2]).expect("rotation keeps dims positive");
    let sd = vol.dims();
    let data = vol.data();
    let mut out = Vec::with_capacity(sd.len());
    let mut o = [0usize; 3];
    for z in 0..dst[2] {
        for y in 0..dst[1] {
            for x in 0..dst[0] {
                o[0] = x;
                o[1] = y;
                o[2] = z;
                // output (u', v') came from source u = v', v = n_v - 1 - u'
                let mut s = o;
                s[u] = o[v];
                s[v] = src[v] - 1 - o[u];
                out.push(data[sd.index(s[0], s[1], s[2])]);
            }
        }
    }
    let mut spacing = vol.spacing();
    spacing.swap(u, v);
    let mut r = Volume::from_vec(dst_dims, out).expect("length preserved");
    r.set_geometry(spacing, *vol.affine());
    r
}

/// Shifts content by `offset` voxels; vacated voxels take `pad`.
pub fn translate<T: Copy>(vol: &Volume<T>, offset: [i64; 3], pad: T) -> Volume<T> {
    let d = vol.dims();
    let data = vol.data();
    let mut out = vec![pad; d.len()];
    let span = |n: usize, o: i64| -> (usize, usize) {
        let lo = o.max(0).min(n as i64) as usize;
        let hi = (n as i64 + o).max(0).min(n as i64) as usize;
        (lo, hi)
    };
    let (x0, x1) = span(d.nx, offset[0]);
    let (y0, y1) = span(d.ny, offset[1]);
    let (z0, z1) = span(d.nz, offset[2]);
    if x0 < x1 {
        for z in z0..z1 {
            let sz = (z as i64 - offset[2]) as usize;
            for y in y0..y1 {
                let sy = (y as i64 - offset[1]) as usize;
                let sx0 = (x0 as i64 - offset[0]) as usize;
                let src_start = d.index(sx0, sy, sz);
                let dst_start = d.index(x0, y, z);
                let len = x1 - x0;
                out[dst_start..dst_start + len]
                    .copy_from_slice(&data[src_start..src_start + len]);
            }
        }
    }
    vol.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{LabelVolume, MaskVolume};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ramp(d: Dims) -> ScalarVolume {
        let data = (0..d.len()).map(|i| (i as f32 * 0.37).sin()).collect();
        ScalarVolume::from_vec(d, data).unwrap()
    }

    #[test]
    fn identity_resample_is_exact() {
        let v = ramp(Dims::new(5, 6, 7).unwrap());
        let r = resample(&v, [5, 6, 7], Interpolation::Trilinear).unwrap();
        for (a, b) in v.data().iter().zip(r.data()) {
            assert!((a - b).abs() as f64 <= 1e-9);
        }
        assert_eq!(r.spacing(), v.spacing());
    }

    #[test]
    fn constant_survives_upscale() {
        let v = ScalarVolume::filled(Dims::new(3, 4, 5).unwrap(), 0.7);
        let r = resample(&v, [9, 11, 13], Interpolation::Trilinear).unwrap();
        assert_eq!(r.dims(), Dims::new(9, 11, 13).unwrap());
        assert!(r.data().iter().all(|&x| (x as f64 - 0.7f32 as f64).abs() <= 1e-9));
    }

    #[test]
    fn nearest_keeps_label_set() {
        let d = Dims::new(6, 5, 4).unwrap();
        let labels =
            LabelVolume::from_vec(d, (0..d.len()).map(|i| (i * 7 % 3) as u8).collect()).unwrap();
        for target in [[3, 3, 3], [13, 7, 9], [1, 1, 1], [6, 5, 4]] {
            let r = resample_nearest(&labels, target).unwrap();
            let values: BTreeSet<u8> = r.data().iter().copied().collect();
            assert!(values.is_subset(&BTreeSet::from([0, 1, 2])));
        }
    }

    #[test]
    fn resample_preserves_physical_extent() {
        let v = ScalarVolume::filled(Dims::new(5, 9, 3).unwrap(), 0.0)
            .with_spacing([2.0, 1.0, 1.5])
            .unwrap();
        let r = resample(&v, [9, 5, 7], Interpolation::Trilinear).unwrap();
        assert_eq!(r.spacing(), [1.0, 2.0, 0.5]);
    }

    #[test]
    fn resample_rejects_zero_dims() {
        let v = ScalarVolume::filled(Dims::cube(2).unwrap(), 0.0);
        assert!(resample(&v, [0, 2, 2], Interpolation::Trilinear).is_err());
    }

    #[test]
    fn trilinear_midpoint() {
        let d = Dims::new(2, 1, 1).unwrap();
        let v = ScalarVolume::from_vec(d, vec![0.0, 1.0]).unwrap();
        let r = resample(&v, [3, 1, 1], Interpolation::Trilinear).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn translate_moves_single_voxel() {
        let d = Dims::cube(8).unwrap();
        let mut m = MaskVolume::filled(d, false);
        m.set(3, 3, 3, true);
        let t = translate(&m, [1, 0, 0], false);
        // direct-indexing oracle
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(t.get(x, y, z), (x, y, z) == (4, 3, 3));
                }
            }
        }
    }

    #[test]
    fn translate_out_of_range_pads_everything() {
        let v = ramp(Dims::cube(4).unwrap());
        let t = translate(&v, [10, 0, 0], -1.0);
        assert!(t.data().iter().all(|&x| x == -1.0));
    }

    #[test]
    fn rotate_quarter_turn_about_z() {
        // (x, y) -> (ny - 1 - y, x)
        let d = Dims::new(3, 2, 1).unwrap();
        let mut m = MaskVolume::filled(d, false);
        m.set(2, 0, 0, true);
        let r = rotate90(&m, Axis::Z, 1);
        assert_eq!(r.dims(), Dims::new(2, 3, 1).unwrap());
        assert!(r.get(1, 2, 0));
        assert_eq!(r.count(), 1);
    }

    #[test]
    fn rotate_negative_turn_inverts_positive() {
        let v = ramp(Dims::new(4, 5, 6).unwrap());
        for axis in Axis::ALL {
            assert_eq!(rotate90(&rotate90(&v, axis, 1), axis, -1), v);
        }
    }

    #[test]
    fn axis_parse() {
        assert_eq!("z".parse::<Axis>().unwrap(), Axis::Z);
        assert!("w".parse::<Axis>().is_err());
        assert!(Axis::from_index(3).is_err());
    }

    fn arb_volume() -> impl Strategy<Value = ScalarVolume> {
        (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(x, y, z)| {
            proptest::collection::vec(-10.0f32..10.0, x * y * z).prop_map(move |data| {
                ScalarVolume::from_vec(Dims::new(x, y, z).unwrap(), data).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn flip_is_involution(v in arb_volume(), a in 0usize..3) {
            let axis = Axis::from_index(a).unwrap();
            prop_assert_eq!(flip(&flip(&v, axis), axis), v);
        }

        #[test]
        fn four_quarter_turns_are_identity(v in arb_volume(), a in 0usize..3) {
            let axis = Axis::from_index(a).unwrap();
            let mut r = v.clone();
            for _ in 0..4 { r = rotate90(&r, axis, 1); }
            prop_assert_eq!(&r, &v);
            prop_assert_eq!(rotate90(&v, axis, 4), v);
        }

        #[test]
        fn mask_count_preserved(bits in proptest::collection::vec(any::<bool>(), 64), a in 0usize..3, t in -3i32..4) {
            let m = MaskVolume::from_vec(Dims::cube(4).unwrap(), bits).unwrap();
            let axis = Axis::from_index(a).unwrap();
            prop_assert_eq!(flip(&m, axis).count(), m.count());
            let r = rotate90(&m, axis, t);
            prop_assert_eq!(r.count(), m.count());
            prop_assert_eq!(r.dims(), m.dims());
        }

        #[test]
        fn translate_inverse_away_from_border(v in arb_volume(), ox in -2i64..3, oy in -2i64..3, oz in -2i64..3) {
            let back = translate(&translate(&v, [ox, oy, oz], 0.0), [-ox, -oy, -oz], 0.0);
            let d = v.dims();
            for z in 0..d.nz { for y in 0..d.ny { for x in 0..d.nx {
                let interior = [(x, d.nx, ox), (y, d.ny, oy), (z, d.nz, oz)]
                    .iter()
                    .all(|&(c, n, o)| (c as i64) >= o.abs() && (c as i64) < n as i64 - o.abs());
                if interior {
                    prop_assert_eq!(back.get(x, y, z), v.get(x, y, z));
                }
            }}}
        }
    }
}
