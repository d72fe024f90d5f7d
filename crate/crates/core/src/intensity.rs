//! Intensity synthesis: Voronoi partition of each warped ellipsoid, Gaussian
//! noise per region, background noise, artifact intensities and
//! normalization to `[0, 1]`.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{Interval, IntensityParams};
use crate::error::{Error, Result};
use crate::geometry::{ArtifactKind, ShapeMasks};
use crate::rng::RngStream;
use crate::volume::{MaskVolume, ScalarVolume, Volume};

/// Splits `mask` into `k` regions around `k` distinct seed voxels drawn
/// uniformly from the mask. Each mask voxel takes the label `1..=k` of its
/// nearest seed (squared Euclidean distance in voxel units, ties to the lower
/// seed index); voxels off the mask are 0.
pub fn partition_mask(mask: &MaskVolume, k: usize, rng: &mut RngStream) -> Result<Volume<u8>> {
    if k == 0 || k > u8::MAX as usize {
        return Err(Error::invalid(format!("part count must be in 1..=255, got {k}")));
    }
    let members: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    if members.is_empty() {
        return Err(Error::invalid("cannot partition an empty mask"));
    }
    if k > members.len() {
        return Err(Error::invalid(format!(
            "cannot split {} voxels into {k} parts",
            members.len()
        )));
    }
    let dims = mask.dims();
    let seeds: Vec<[i64; 3]> = index::sample(rng, members.len(), k)
        .into_iter()
        .map(|j| {
            let (x, y, z) = dims.coords(members[j]);
            [x as i64, y as i64, z as i64]
        })
        .collect();
    let mut out = vec![0u8; dims.len()];
    let data = mask.data();
    let mut i = 0;
    for z in 0..dims.nz as i64 {
        for y in 0..dims.ny as i64 {
            for x in 0..dims.nx as i64 {
                if data[i] {
                    out[i] = nearest_seed([x, y, z], &seeds) as u8 + 1;
                }
                i += 1;
            }
        }
    }
    Ok(mask.with_data(out))
}

#[inline]
fn nearest_seed(p: [i64; 3], seeds: &[[i64; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = i64::MAX;
    for (s, c) in seeds.iter().enumerate() {
        let d = (p[0] - c[0]).pow(2) + (p[1] - c[1]).pow(2) + (p[2] - c[2]).pow(2);
        if d < best_d {
            best_d = d;
            best = s;
        }
    }
    best
}

/// Overwrites voxels of `region` with independent `Normal(mean, std)` draws
/// in index order; other voxels are untouched.
pub fn fill_gaussian(
    img: &mut ScalarVolume,
    region: &MaskVolume,
    mean: f64,
    std: f64,
    rng: &mut RngStream,
) -> Result<()> {
    img.check_same_dims(region, "fill_gaussian")?;
    check_std(std)?;
    let idx: Vec<usize> = region
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    fill_indices(img.data_mut(), &idx, mean, std, rng);
    Ok(())
}

fn check_std(std: f64) -> Result<()> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid(format!("std must be finite and >= 0, got {std}")));
    }
    Ok(())
}

fn fill_indices(data: &mut [f32], idx: &[usize], mean: f64, std: f64, rng: &mut RngStream) {
    for &i in idx {
        let z: f64 = rng.sample(StandardNormal);
        data[i] = (mean + std * z) as f32;
    }
}

/// Painting layer, in increasing precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    Background,
    Shell,
    Brain,
    Blob,
    Hole,
}

/// Parameters and coverage of one painted region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecord {
    pub layer: Layer,
    /// 1-based part within the layer (artifact index for blobs and holes).
    pub part: usize,
    pub mean: f64,
    pub std: f64,
    /// Number of voxels this region finally owns.
    pub voxel_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityReport {
    pub regions: Vec<RegionRecord>,
    /// Index into `regions` of the region painting each voxel.
    pub owner: Volume<u16>,
    /// Divisor applied during normalization (the clamped maximum), 0 when the
    /// raw image had no positive voxel.
    pub scale: f64,
}

impl IntensityReport {
    pub fn parts(&self, layer: Layer) -> usize {
        self.regions.iter().filter(|r| r.layer == layer).count()
    }

    /// Voxel indices owned by region `r`, ascending.
    pub fn region_voxels(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner
            .data()
            .iter()
            .enumerate()
            .filter_map(move |(i, &o)| (o as usize == r).then_some(i))
    }
}

fn draw(rng: &mut RngStream, r: Interval) -> f64 {
    if r.min() == r.max() {
        r.min()
    } else {
        rng.gen_range(r.min()..=r.max())
    }
}

/// Paints the raw (unnormalized) image. Every voxel is written exactly once,
/// by the highest-precedence layer covering it:
/// background < shell < brain < blobs < holes.
pub fn paint_intensity(
    shapes: &ShapeMasks,
    params: &IntensityParams,
    rng: &mut RngStream,
) -> Result<(ScalarVolume, IntensityReport)> {
    params.validate().map_err(|e| Error::invalid(e.to_string()))?;
    let dims = shapes.brain.dims();
    shapes.shell.check_same_dims(&shapes.brain, "shell vs brain")?;
    for (m, _) in &shapes.artifacts {
        m.check_same_dims(&shapes.brain, "artifact vs brain")?;
    }

    let max_regions = 1 + params.outer_parts as usize + params.inner_parts as usize + shapes.artifacts.len();
    if max_regions > u16::MAX as usize {
        return Err(Error::invalid(format!("{max_regions} regions exceed the limit of 65535")));
    }
    // owner[i] = region slot painting voxel i
    let mut owner = vec![0u16; dims.len()];
    let mut regions = vec![RegionRecord {
        layer: Layer::Background,
        part: 1,
        mean: params.background_mean,
        std: params.background_std,
        voxel_count: 0,
    }];

    let mut ellipsoid_layer = |mask: &MaskVolume,
                               layer: Layer,
                               parts: u32,
                               means: Interval,
                               stds: Interval,
                               rng: &mut RngStream,
                               owner: &mut [u16]|
     -> Result<()> {
        let n = mask.count();
        if n == 0 {
            return Ok(());
        }
        let k = (parts as usize).min(n);
        let part = partition_mask(mask, k, rng)?;
        let base = regions.len();
        for p in 0..k {
            regions.push(RegionRecord {
                layer,
                part: p + 1,
                mean: draw(rng, means),
                std: draw(rng, stds),
                voxel_count: 0,
            });
        }
        for (o, &l) in owner.iter_mut().zip(part.data()) {
            if l > 0 {
                *o = (base + l as usize - 1) as u16;
            }
        }
        Ok(())
    };
    ellipsoid_layer(
        &shapes.shell,
        Layer::Shell,
        params.outer_parts,
        params.outer_mean_range,
        params.outer_std_range,
        rng,
        &mut owner,
    )?;
    ellipsoid_layer(
        &shapes.brain,
        Layer::Brain,
        params.inner_parts,
        params.inner_mean_range,
        params.inner_std_range,
        rng,
        &mut owner,
    )?;
    for kind in [ArtifactKind::Blob, ArtifactKind::Hole] {
        for (i, (m, _)) in shapes
            .artifacts
            .iter()
            .enumerate()
            .filter(|(_, (_, k))| *k == kind)
        {
            let (layer, mean, std) = match kind {
                ArtifactKind::Blob => (Layer::Blob, params.small_mean, params.small_std),
                ArtifactKind::Hole => (Layer::Hole, params.background_mean, params.background_std),
            };
            let slot = regions.len() as u16;
            regions.push(RegionRecord {
                layer,
                part: i + 1,
                mean,
                std,
                voxel_count: 0,
            });
            for (o, &b) in owner.iter_mut().zip(m.data()) {
                if b {
                    *o = slot;
                }
            }
        }
    }

    let mut img = ScalarVolume::filled(dims, 0.0);
    // one raster pass: each voxel is painted exactly once, by its owner
    for (v, &o) in img.data_mut().iter_mut().zip(&owner) {
        let r = &mut regions[o as usize];
        r.voxel_count += 1;
        let z: f64 = rng.sample(StandardNormal);
        *v = (r.mean + r.std * z) as f32;
    }
    let owner = shapes.brain.with_data(owner);
    Ok((
        img,
        IntensityReport {
            regions,
            owner,
            scale: 0.0,
        },
    ))
}

/// Clamps to `>= 0` and divides by the maximum. Returns the divisor, or 0
/// when there is no positive voxel (the image is then all zeros).
pub fn normalize_unit(img: &mut ScalarVolume) -> f64 {
    let data = img.data_mut();
    let mut max = 0.0f32;
    for v in data.iter_mut() {
        if !(*v > 0.0) {
            *v = 0.0;
        }
        max = max.max(*v);
    }
    if max > 0.0 {
        for v in data.iter_mut() {
            *v /= max;
        }
        // guard against x / x rounding below 1
        for v in data.iter_mut() {
            if *v > 1.0 {
                *v = 1.0;
            }
        }
    }
    max as f64
}

/// Full intensity stage: [`paint_intensity`] then [`normalize_unit`].
pub fn synthesize_intensity(
    shapes: &ShapeMasks,
    params: &IntensityParams,
    rng: &mut RngStream,
) -> Result<(ScalarVolume, IntensityReport)> {
    let (mut img, mut report) = paint_intensity(shapes, params, rng)?;
    report.scale = normalize_unit(&mut img);
    Ok((img, report))
}
