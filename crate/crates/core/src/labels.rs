//! Three-class training targets: brain, an outer boundary band, background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Label, LabelVolume, MaskVolume};

/// Voxel neighbourhood: face neighbours (6) or the full 3×3×3 cube (26).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    /// Neighbour offsets, excluding the origin.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let mut v = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        v.push([dx, dy, dz]);
                    }
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelBandConfig {
    /// Band width in voxels (dilation iterations).
    pub band_thickness: u32,
    pub connectivity: Connectivity,
}

impl Default for LabelBandConfig {
    fn default() -> Self {
        Self {
            band_thickness: 2,
            connectivity: Connectivity::TwentySix,
        }
    }
}

/// `radius` iterations of binary dilation with the given element.
pub fn dilate(mask: &MaskVolume, radius: u32, connectivity: Connectivity) -> MaskVolume {
    if radius == 0 {
        return mask.clone();
    }
    match connectivity {
        // r iterations of the 3×3×3 cube equal a (2r+1)³ box: separable
        Connectivity::TwentySix => {
            let dims = mask.dims();
            let mut cur = mask.data().to_vec();
            for axis in 0..3 {
                cur = dilate_axis(&cur, dims, axis, radius as usize);
            }
            mask.with_data(cur)
        }
        Connectivity::Six => {
            let mut cur = mask.clone();
            for _ in 0..radius {
                cur = dilate_cross(&cur);
            }
            cur
        }
    }
}

// Views the data as [outer][len][inner] with `len` along `axis` and slides a
// window of 2r + 1 whole rows, keeping one running count per inner position.
fn dilate_axis(data: &[bool], dims: Dims, axis: usize, r: usize) -> Vec<bool> {
    let len = dims.as_array()[axis];
    let inner = [1, dims.nx, dims.nx * dims.ny][axis];
    let outer = data.len() / (len * inner);
    let mut out = vec![false; data.len()];
    let mut count = vec![0u32; inner];
    for o in 0..outer {
        let block = &data[o * len * inner..][..len * inner];
        let dst = &mut out[o * len * inner..][..len * inner];
        count.iter_mut().for_each(|c| *c = 0);
        let row = |k: usize| &block[k * inner..][..inner];
        for k in 0..r.min(len) {
            for (c, &b) in count.iter_mut().zip(row(k)) {
                *c += u32::from(b);
            }
        }
        for k in 0..len {
            if k + r < len {
                for (c, &b) in count.iter_mut().zip(row(k + r)) {
                    *c += u32::from(b);
                }
            }
            if k > r {
                for (c, &b) in count.iter_mut().zip(row(k - r - 1)) {
                    *c -= u32::from(b);
                }
            }
            for (d, &c) in dst[k * inner..][..inner].iter_mut().zip(&count) {
                *d = c > 0;
            }
        }
    }
    out
}

fn dilate_cross(mask: &MaskVolume) -> MaskVolume {
    let dims = mask.dims();
    let src = mask.data();
    let mut out = src.to_vec();
    let (sx, sy, sz) = (1, dims.nx, dims.nx * dims.ny);
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                if !src[i] {
                    continue;
                }
                if x > 0 {
                    out[i - sx] = true;
                }
                if x + 1 < dims.nx {
                    out[i + sx] = true;
                }
                if y > 0 {
                    out[i - sy] = true;
                }
                if y + 1 < dims.ny {
                    out[i + sy] = true;
                }
                if z > 0 {
                    out[i - sz] = true;
                }
                if z + 1 < dims.nz {
                    out[i + sz] = true;
                }
            }
        }
    }
    mask.with_data(out)
}

/// Brain voxels become class 1, `dilate(brain) \ brain` class 2, the rest 0.
pub fn make_labels(brain: &MaskVolume, cfg: &LabelBandConfig) -> Result<LabelVolume> {
    if cfg.band_thickness < 1 {
        return Err(Error::invalid("band thickness must be >= 1"));
    }
    if brain.is_all_clear() {
        return Err(Error::invalid("brain mask is empty"));
    }
    let grown = dilate(brain, cfg.band_thickness, cfg.connectivity);
    let data = brain
        .data()
        .iter()
        .zip(grown.data())
        .map(|(&b, &g)| {
            if b {
                Label::Brain as u8
            } else if g {
                Label::Boundary as u8
            } else {
                Label::Background as u8
            }
        })
        .collect();
    Ok(brain.with_data(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_dilate(mask: &MaskVolume, radius: u32, conn: Connectivity) -> MaskVolume {
        let d = mask.dims();
        let mut cur = mask.clone();
        for _ in 0..radius {
            let mut next = cur.clone();
            for z in 0..d.nz {
                for y in 0..d.ny {
                    for x in 0..d.nx {
                        if !cur.get(x, y, z) {
                            continue;
                        }
                        for o in conn.offsets() {
                            let (px, py, pz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                            if d.contains(px, py, pz) {
                                next.set(px as usize, py as usize, pz as usize, true);
                            }
                        }
                    }
                }
            }
            cur = next;
        }
        cur
    }

    fn single(n: usize, p: (usize, usize, usize)) -> MaskVolume {
        let mut m = MaskVolume::filled(Dims::cube(n).unwrap(), false);
        m.set(p.0, p.1, p.2, true);
        m
    }

    #[test]
    fn offsets_counts() {
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = single(5, (1, 2, 3));
        assert_eq!(dilate(&m, 0, Connectivity::Six), m);
        assert_eq!(dilate(&m, 0, Connectivity::TwentySix), m);
    }

    #[test]
    fn single_voxel_neighbourhoods() {
        let m = single(7, (3, 3, 3));
        assert_eq!(dilate(&m, 1, Connectivity::Six).count(), 7);
        assert_eq!(dilate(&m, 1, Connectivity::TwentySix).count(), 27);
        // 6-connected radius 2 is the L1 ball: 25 voxels
        assert_eq!(dilate(&m, 2, Connectivity::Six).count(), 25);
        assert_eq!(dilate(&m, 2, Connectivity::TwentySix).count(), 125);
    }

    #[test]
    fn single_voxel_labels() {
        let m = single(7, (3, 3, 3));
        let cfg = LabelBandConfig {
            band_thickness: 1,
            connectivity: Connectivity::TwentySix,
        };
        let l = make_labels(&m, &cfg).unwrap();
        assert_eq!(l.class_counts(), [343 - 27, 1, 26]);
    }

    #[test]
    fn empty_brain_rejected() {
        let m = MaskVolume::filled(Dims::cube(4).unwrap(), false);
        assert!(matches!(
            make_labels(&m, &LabelBandConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    fn arb_mask() -> impl Strategy<Value = MaskVolume> {
        (2usize..9, 2usize..9, 2usize..9).prop_flat_map(|(x, y, z)| {
            proptest::collection::vec(proptest::bool::weighted(0.08), x * y * z)
                .prop_map(move |bits| MaskVolume::from_vec(Dims::new(x, y, z).unwrap(), bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dilation_matches_brute_force(m in arb_mask(), r in 0u32..4, six in any::<bool>()) {
            let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
            prop_assert_eq!(dilate(&m, r, conn), brute_dilate(&m, r, conn));
        }

        #[test]
        fn labels_partition_and_hug(m in arb_mask(), t in 1u32..4, six in any::<bool>()) {
            prop_assume!(!m.is_all_clear());
            let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
            let cfg = LabelBandConfig { band_thickness: t, connectivity: conn };
            let l = make_labels(&m, &cfg).unwrap();
            let c = l.class_counts();
            prop_assert_eq!(c[0] + c[1] + c[2], m.dims().len());
            prop_assert_eq!(&l.class_mask(Label::Brain), &m);
            // re-dilating class 1 recovers class 1 ∪ class 2
            let union = l.map(|v| v == 1 || v == 2);
            prop_assert_eq!(dilate(&l.class_mask(Label::Brain), t, conn), union);
            // every band voxel lies within Chebyshev distance t of the brain
            let d = m.dims();
            let brain: Vec<(usize, usize, usize)> =
                (0..d.len()).filter(|&i| m.data()[i]).map(|i| d.coords(i)).collect();
            for i in (0..d.len()).filter(|&i| l.data()[i] == 2) {
                let (x, y, z) = d.coords(i);
                let near = brain.iter().any(|&(bx, by, bz)| {
                    x.abs_diff(bx).max(y.abs_diff(by)).max(z.abs_diff(bz)) <= t as usize
                });
                prop_assert!(near);
            }
        }
    }
}
