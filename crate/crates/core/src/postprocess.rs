//! From three-class network output to a single solid brain mask.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::labels::Connectivity;
use crate::volume::{Dims, Label, LabelVolume, MaskVolume, Volume};

/// Per-voxel probabilities over background, brain and boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbVolume {
    dims: Dims,
    probs: Vec<[f32; 3]>,
}

impl ClassProbVolume {
    pub fn new(dims: Dims, probs: Vec<[f32; 3]>) -> Result<Self> {
        if probs.len() != dims.len() {
            return Err(Error::invalid(format!(
                "{} probability triples for {} voxels",
                probs.len(),
                dims.len()
            )));
        }
        Ok(Self { dims, probs })
    }

    /// Builds from three class planes laid out one after another (the 4D
    /// NIfTI order with the class index slowest).
    pub fn from_planar(dims: Dims, planes: &[f32]) -> Result<Self> {
        let n = dims.len();
        if planes.len() != 3 * n {
            return Err(Error::invalid(format!(
                "expected {} values for 3 class planes, got {}",
                3 * n,
                planes.len()
            )));
        }
        let probs = (0..n)
            .map(|i| [planes[i], planes[n + i], planes[2 * n + i]])
            .collect();
        Ok(Self { dims, probs })
    }

    /// One-hot probabilities of a label volume.
    pub fn one_hot(labels: &LabelVolume) -> Result<Self> {
        labels.validate_classes()?;
        let probs = labels
            .data()
            .iter()
            .map(|&l| {
                let mut p = [0.0; 3];
                p[l as usize] = 1.0;
                p
            })
            .collect();
        Self::new(labels.dims(), probs)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn probs(&self) -> &[[f32; 3]] {
        &self.probs
    }
}

/// Per-voxel argmax, ties going to the lower class index. Rejects negative
/// entries and triples whose sum is more than 1e-3 away from 1.
pub fn argmax_labels(probs: &ClassProbVolume) -> Result<LabelVolume> {
    let mut out = Vec::with_capacity(probs.probs.len());
    for (i, p) in probs.probs.iter().enumerate() {
        let sum = p[0] as f64 + p[1] as f64 + p[2] as f64;
        if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-3 {
            return Err(Error::invalid(format!(
                "voxel {i}: malformed class probabilities {p:?} (sum {sum})"
            )));
        }
        let mut best = 0;
        for c in 1..3 {
            if p[c] > p[best] {
                best = c;
            }
        }
        out.push(best as u8);
    }
    LabelVolume::from_vec(probs.dims, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentInfo {
    pub voxel_count: usize,
    /// Mean voxel coordinate.
    pub centroid: [f64; 3],
}

/// Connected-component labelling. Ids run from 1 in raster order of each
/// component's first voxel; 0 marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub labels: Volume<u32>,
    /// `components[id - 1]` describes component `id`.
    pub components: Vec<ComponentInfo>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mask_of(&self, id: u32) -> MaskVolume {
        self.labels.map(|l| l == id)
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let p = self.parent[a as usize];
            self.parent[a as usize] = self.parent[p as usize];
            a = p;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass raster labelling with union-find over the already-visited half
/// of the neighbourhood.
pub fn connected_components(mask: &MaskVolume, connectivity: Connectivity) -> ComponentSet {
    let dims = mask.dims();
    let src = mask.data();
    let back: Vec<[i64; 3]> = connectivity
        .offsets()
        .into_iter()
        .filter(|o| (o[2], o[1], o[0]) < (0, 0, 0))
        .collect();
    let mut provisional = vec![0u32; dims.len()];
    let mut sets = DisjointSet { parent: vec![0] };
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                if !src[i] {
                    continue;
                }
                let mut label = 0u32;
                for o in &back {
                    let (px, py, pz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                    if !dims.contains(px, py, pz) {
                        continue;
                    }
                    let n = provisional[dims.index(px as usize, py as usize, pz as usize)];
                    if n == 0 {
                        continue;
                    }
                    if label == 0 {
                        label = n;
                    } else if n != label {
                        sets.union(label, n);
                    }
                }
                if label == 0 {
                    label = sets.parent.len() as u32;
                    sets.parent.push(label);
                }
                provisional[i] = label;
            }
        }
    }

    // Compact ids in raster order of first appearance.
    let mut remap = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    let mut sums: Vec<([f64; 3], usize)> = Vec::new();
    for (i, l) in provisional.iter_mut().enumerate() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
            sums.push(([0.0; 3], 0));
        }
        *l = remap[root];
        let (x, y, z) = dims.coords(i);
        let s = &mut sums[*l as usize - 1];
        s.0[0] += x as f64;
        s.0[1] += y as f64;
        s.0[2] += z as f64;
        s.1 += 1;
    }
    let components = sums
        .into_iter()
        .map(|(s, n)| ComponentInfo {
            voxel_count: n,
            centroid: s.map(|v| v / n as f64),
        })
        .collect();
    ComponentSet {
        labels: mask.with_data(provisional),
        components,
    }
}

/// Sets every voxel that is not reachable from the grid border through
/// unset voxels (6-connected).
pub fn fill_holes(mask: &MaskVolume) -> MaskVolume {
    let dims = mask.dims();
    let src = mask.data();
    let mut outside = vec![false; dims.len()];
    let mut queue = VecDeque::new();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let border = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == dims.nx
                    || y + 1 == dims.ny
                    || z + 1 == dims.nz;
                let i = dims.index(x, y, z);
                if border && !src[i] {
                    outside[i] = true;
                    queue.push_back((x, y, z));
                }
            }
        }
    }
    let offsets = Connectivity::Six.offsets();
    while let Some((x, y, z)) = queue.pop_front() {
        for o in &offsets {
            let (px, py, pz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
            if !dims.contains(px, py, pz) {
                continue;
            }
            let (px, py, pz) = (px as usize, py as usize, pz as usize);
            let j = dims.index(px, py, pz);
            if !src[j] && !outside[j] {
                outside[j] = true;
                queue.push_back((px, py, pz));
            }
        }
    }
    mask.with_data(outside.into_iter().map(|o| !o).collect())
}

/// Picks the brain among the class-1 components (6-connected; boundary
/// voxels separate blobs): the largest one, ties broken by the smallest
/// centroid distance to the grid center. The winner is returned with its
/// interior holes filled, or `None` when there is no class-1 voxel.
pub fn select_brain_mask(labels: &LabelVolume) -> Result<Option<MaskVolume>> {
    labels.validate_classes()?;
    let brain = labels.class_mask(Label::Brain);
    let cc = connected_components(&brain, Connectivity::Six);
    if cc.is_empty() {
        return Ok(None);
    }
    let center = labels.dims().center();
    let dist2 = |c: &[f64; 3]| {
        (0..3).map(|a| (c[a] - center[a]).powi(2)).sum::<f64>()
    };
    let mut best = 0usize;
    for (i, comp) in cc.components.iter().enumerate().skip(1) {
        let cur = &cc.components[best];
        if comp.voxel_count > cur.voxel_count
            || (comp.voxel_count == cur.voxel_count && dist2(&comp.centroid) < dist2(&cur.centroid))
        {
            best = i;
        }
    }
    Ok(Some(fill_holes(&cc.mask_of(best as u32 + 1))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label_cube(labels: &mut LabelVolume, lo: [usize; 3], size: usize, class: u8) {
        for z in lo[2]..lo[2] + size {
            for y in lo[1]..lo[1] + size {
                for x in lo[0]..lo[0] + size {
                    labels.set(x, y, z, class);
                }
            }
        }
    }

    #[test]
    fn argmax_one_hot_and_ties() {
        let d = Dims::new(4, 1, 1).unwrap();
        let p = ClassProbVolume::new(
            d,
            vec![
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            ],
        )
        .unwrap();
        assert_eq!(argmax_labels(&p).unwrap().data(), &[0, 1, 2, 0]);
        let tie12 = ClassProbVolume::new(Dims::cube(1).unwrap(), vec![[0.0, 0.5, 0.5]]).unwrap();
        assert_eq!(argmax_labels(&tie12).unwrap().data(), &[1]);
    }

    #[test]
    fn argmax_rejects_malformed() {
        let p = ClassProbVolume::new(Dims::cube(1).unwrap(), vec![[0.2, 0.2, 0.1]]).unwrap();
        assert!(matches!(argmax_labels(&p), Err(Error::InvalidArgument(_))));
        let p = ClassProbVolume::new(Dims::cube(1).unwrap(), vec![[-0.5, 1.0, 0.5]]).unwrap();
        assert!(argmax_labels(&p).is_err());
    }

    #[test]
    fn planar_layout() {
        let d = Dims::new(2, 1, 1).unwrap();
        let p = ClassProbVolume::from_planar(d, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.probs(), &[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(ClassProbVolume::from_planar(d, &[0.0; 5]).is_err());
    }

    #[test]
    fn two_separate_cubes() {
        let d = Dims::cube(8).unwrap();
        let mut l = LabelVolume::filled(d, 0);
        label_cube(&mut l, [0, 0, 0], 2, 1);
        label_cube(&mut l, [5, 5, 5], 2, 1);
        let cc = connected_components(&l.class_mask(Label::Brain), Connectivity::Six);
        assert_eq!(cc.len(), 2);
        assert!(cc.components.iter().all(|c| c.voxel_count == 8));
        assert_eq!(cc.components[0].centroid, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn corner_contact() {
        let d = Dims::cube(3).unwrap();
        let mut m = MaskVolume::filled(d, false);
        m.set(0, 0, 0, true);
        m.set(1, 1, 1, true);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Six).len(), 2);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = MaskVolume::filled(Dims::cube(4).unwrap(), false);
        assert!(connected_components(&m, Connectivity::Six).is_empty());
    }

    #[test]
    fn u_shape_merges_late() {
        // arms joined only at the far end exercise union-find merging
        let d = Dims::new(5, 5, 1).unwrap();
        let mut m = MaskVolume::filled(d, false);
        for y in 0..5 {
            m.set(0, y, 0, true);
            m.set(4, y, 0, true);
        }
        for x in 0..5 {
            m.set(x, 4, 0, true);
        }
        let cc = connected_components(&m, Connectivity::Six);
        assert_eq!(cc.len(), 1);
        assert_eq!(cc.components[0].voxel_count, 13);
    }

    #[test]
    fn larger_blob_wins() {
        let d = Dims::cube(20).unwrap();
        let mut l = LabelVolume::filled(d, 0);
        // 100 voxels: 5×5×4 slab; 50 voxels: 5×5×2
        for z in 2..6 {
            for y in 2..7 {
                for x in 2..7 {
                    l.set(x, y, z, 1);
                }
            }
        }
        for z in 12..14 {
            for y in 10..15 {
                for x in 10..15 {
                    l.set(x, y, z, 1);
                }
            }
        }
        let m = select_brain_mask(&l).unwrap().unwrap();
        assert_eq!(m.count(), 100);
        assert!(m.get(2, 2, 2) && !m.get(10, 10, 12));
    }

    #[test]
    fn centered_blob_wins_tie() {
        let d = Dims::cube(21).unwrap();
        let mut l = LabelVolume::filled(d, 0);
        label_cube(&mut l, [0, 0, 0], 3, 1);
        label_cube(&mut l, [9, 9, 9], 3, 1);
        let m = select_brain_mask(&l).unwrap().unwrap();
        assert_eq!(m.count(), 27);
        assert!(m.get(10, 10, 10));
        assert!(!m.get(0, 0, 0));
    }

    #[test]
    fn holes_are_filled() {
        let d = Dims::cube(12).unwrap();
        let mut l = LabelVolume::filled(d, 0);
        label_cube(&mut l, [2, 2, 2], 7, 1);
        // enclosed cavity carrying boundary and background labels
        label_cube(&mut l, [4, 4, 4], 3, 2);
        l.set(5, 5, 5, 0);
        let m = select_brain_mask(&l).unwrap().unwrap();
        assert_eq!(m.count(), 343);
        assert!(m.get(5, 5, 5));
    }

    #[test]
    fn open_pocket_is_not_filled() {
        let d = Dims::cube(12).unwrap();
        let mut l = LabelVolume::filled(d, 0);
        label_cube(&mut l, [2, 2, 2], 7, 1);
        // tunnel from the surface into the block
        for x in 0..6 {
            l.set(x, 5, 5, 0);
        }
        let m = select_brain_mask(&l).unwrap().unwrap();
        assert_eq!(m.count(), 343 - 4);
    }

    #[test]
    fn boundary_band_separates_blobs() {
        let d = Dims::cube(16).unwrap();
        let mut l = LabelVolume::filled(d, 0);
        label_cube(&mut l, [1, 1, 1], 14, 1);
        // a boundary wall splits the slab into 7 + 6 thick parts
        for z in 1..15 {
            for y in 1..15 {
                l.set(8, y, z, 2);
            }
        }
        let m = select_brain_mask(&l).unwrap().unwrap();
        assert_eq!(m.count(), 7 * 14 * 14);
        assert!(!m.get(8, 5, 5) && !m.get(10, 5, 5));
    }

    #[test]
    fn no_brain_is_signalled() {
        let mut l = LabelVolume::filled(Dims::cube(6).unwrap(), 0);
        l.set(2, 2, 2, 2);
        assert_eq!(select_brain_mask(&l).unwrap(), None);
    }

    #[test]
    fn invalid_labels_rejected() {
        let l = LabelVolume::filled(Dims::cube(2).unwrap(), 7);
        assert!(select_brain_mask(&l).is_err());
    }

    proptest! {
        #[test]
        fn selection_is_idempotent_and_solid(bits in proptest::collection::vec(0u8..3, 8 * 8 * 8)) {
            let l = LabelVolume::from_vec(Dims::cube(8).unwrap(), bits).unwrap();
            if let Some(m) = select_brain_mask(&l).unwrap() {
                prop_assert_eq!(connected_components(&m, Connectivity::Six).len(), 1);
                prop_assert_eq!(&fill_holes(&m), &m);
                // subset of class 1 plus filled holes
                let brain = l.class_mask(Label::Brain);
                let cc = connected_components(&brain, Connectivity::Six);
                let winner = m.and(&brain).unwrap();
                prop_assert!(cc.components.iter().any(|c| c.voxel_count == winner.count()));
                let relabeled = m.map(u8::from);
                let again = select_brain_mask(&relabeled).unwrap().unwrap();
                prop_assert_eq!(again, m);
            }
        }
    }
}
