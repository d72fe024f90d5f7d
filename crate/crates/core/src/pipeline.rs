//! One labeled sample from one seed: geometry, deformation, labels,
//! intensities and augmentation, each stage on its own random sub-stream.

use rand::Rng;

use crate::config::{AugmentConfig, GeneratorConfig};
use crate::deform::{sample_displacement_field, warp_masks};
use crate::error::{Error, Result};
use crate::geometry::{build_masks, sample_head_geometry, ArtifactKind, HeadGeometry, ShapeMasks};
use crate::intensity::{synthesize_intensity, IntensityReport};
use crate::labels::make_labels;
use crate::rng::{sample_seed, RngStream, Stage};
use crate::volume::{Dims, LabelVolume, ScalarVolume, Volume};

/// Spatial augmentation of one sample. Applied as: flips (x, y, z), then
/// quarter turns about z, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentParams {
    pub flips: [bool; 3],
    pub z_quarter_turns: i32,
    pub offset: [i64; 3],
}

impl AugmentParams {
    pub fn sample(rng: &mut RngStream, cfg: &AugmentConfig, dims: Dims) -> Self {
        let flips = cfg.flip_probability.map(|p| rng.gen_bool(p));
        let turns = rng.gen_range(0..4);
        let t = cfg.translate_max as i64;
        let offset = [0; 3].map(|_| rng.gen_range(-t..=t));
        // odd turns would change dims unless the xy plane is square
        let z_quarter_turns = if cfg.rotate_z && dims.nx == dims.ny { turns } else { 0 };
        Self {
            flips,
            z_quarter_turns,
            offset,
        }
    }

    /// Applies the transform in one scatter pass; voxels with no source get
    /// `pad`.
    pub fn apply<T: Copy>(&self, vol: &Volume<T>, pad: T) -> Volume<T> {
        let src = vol.dims();
        let odd = self.z_quarter_turns.rem_euclid(2) == 1;
        let dst = if odd {
            Dims::new(src.ny, src.nx, src.nz).expect("dims stay positive")
        } else {
            src
        };
        let n = [dst.nx as i64, dst.ny as i64, dst.nz as i64];
        // each output coordinate is affine in (x, y, z): base + step · coord
        let o = self.map_point(src, [0, 0, 0]);
        let ex = self.map_point(src, [1, 0, 0]);
        let ey = self.map_point(src, [0, 1, 0]);
        let ez = self.map_point(src, [0, 0, 1]);
        let step = |e: [i64; 3]| [e[0] - o[0], e[1] - o[1], e[2] - o[2]];
        let (sx, sy, sz) = (step(ex), step(ey), step(ez));
        let lin = |q: [i64; 3]| q[0] + n[0] * (q[1] + n[1] * q[2]);
        let inside = |q: [i64; 3]| (0..3).all(|a| (0..n[a]).contains(&q[a]));
        let mut out = vec![pad; dst.len()];
        let data = vol.data();
        let mut i = 0;
        for z in 0..src.nz as i64 {
            for y in 0..src.ny as i64 {
                let row = [0, 1, 2].map(|a| o[a] + sy[a] * y + sz[a] * z);
                let first = row;
                let last = [0, 1, 2].map(|a| row[a] + sx[a] * (src.nx as i64 - 1));
                if inside(first) && inside(last) {
                    let (base, dx) = (lin(first), lin(sx) - lin([0; 3]));
                    for x in 0..src.nx as i64 {
                        out[(base + dx * x) as usize] = data[i];
                        i += 1;
                    }
                } else {
                    for x in 0..src.nx as i64 {
                        let q = [0, 1, 2].map(|a| row[a] + sx[a] * x);
                        if inside(q) {
                            out[lin(q) as usize] = data[i];
                        }
                        i += 1;
                    }
                }
            }
        }
        let mut spacing = vol.spacing();
        if odd {
            spacing.swap(0, 1);
        }
        let mut r = Volume::from_vec(dst, out).expect("length matches dims");
        r.set_geometry(spacing, *vol.affine());
        r
    }

    /// Where voxel `p` of the input grid lands in the augmented grid.
    pub fn map_point(&self, dims: Dims, p: [i64; 3]) -> [i64; 3] {
        let mut n = [dims.nx as i64, dims.ny as i64, dims.nz as i64];
        let mut q = p;
        for a in 0..3 {
            if self.flips[a] {
                q[a] = n[a] - 1 - q[a];
            }
        }
        for _ in 0..self.z_quarter_turns.rem_euclid(4) {
            q = [n[1] - 1 - q[1], q[0], q[2]];
            n.swap(0, 1);
        }
        [q[0] + self.offset[0], q[1] + self.offset[1], q[2] + self.offset[2]]
    }
}

/// A generated training pair plus everything needed to audit it.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: u64,
    pub seed: u64,
    pub image: ScalarVolume,
    pub labels: LabelVolume,
    pub geometry: HeadGeometry,
    pub intensity: IntensityReport,
    pub max_disp: f64,
    pub augmentation: Option<AugmentParams>,
}

/// Warped shapes and labels of one sample, before painting.
#[derive(Debug, Clone)]
pub struct WarpedSample {
    pub geometry: HeadGeometry,
    pub shapes: ShapeMasks,
    pub labels: LabelVolume,
    pub max_disp: f64,
}

/// Geometry, deformation and labels for the sample seeded with `seed`.
pub fn synthesize_shapes(cfg: &GeneratorConfig, seed: u64) -> Result<WarpedSample> {
    let dims = cfg.grid()?;
    let geometry = sample_head_geometry(
        &mut RngStream::for_stage(seed, Stage::Geometry),
        &cfg.shape,
        dims,
    )?;
    let masks = build_masks(&geometry, dims)?;

    let mut rng = RngStream::for_stage(seed, Stage::Deform);
    let r = cfg.deform.max_disp;
    let max_disp = if r.min() == r.max() {
        r.min()
    } else {
        rng.gen_range(r.min()..=r.max())
    };
    let field = sample_displacement_field(&mut rng, dims, cfg.deform.control_spacing, max_disp)?;
    let mut inputs = vec![&masks.shell, &masks.brain];
    inputs.extend(masks.artifacts.iter().map(|(m, _)| m));
    let mut warped = warp_masks(&inputs, &field)?.into_iter();
    let shell = warped.next().expect("shell warped");
    let brain = warped.next().expect("brain warped");
    // a tie at exactly 0.5 can set a voxel in both warped masks; brain wins
    let shell = shell.and_not(&brain)?;
    let artifacts = warped
        .zip(masks.artifacts.iter().map(|(_, k)| *k))
        .map(|(m, kind)| match kind {
            ArtifactKind::Hole => m.and_not(&brain).map(|m| (m, kind)),
            ArtifactKind::Blob => Ok((m, kind)),
        })
        .collect::<Result<Vec<_>>>()?;
    if brain.is_all_clear() {
        return Err(Error::config("deformation erased the brain mask"));
    }
    let labels = make_labels(&brain, &cfg.labels)?;
    Ok(WarpedSample {
        geometry,
        shapes: ShapeMasks {
            shell,
            brain,
            artifacts,
        },
        labels,
        max_disp,
    })
}

/// Generates sample `index` of the stream defined by `master_seed`.
pub fn generate_sample(cfg: &GeneratorConfig, master_seed: u64, index: u64) -> Result<Sample> {
    let seed = sample_seed(master_seed, index);
    let warped = synthesize_shapes(cfg, seed)?;
    let (mut image, intensity) = synthesize_intensity(
        &warped.shapes,
        &cfg.intensity,
        &mut RngStream::for_stage(seed, Stage::Intensity),
    )?;
    let mut labels = warped.labels;

    let augmentation = cfg.augment.enabled.then(|| {
        AugmentParams::sample(
            &mut RngStream::for_stage(seed, Stage::Augment),
            &cfg.augment,
            image.dims(),
        )
    });
    if let Some(aug) = &augmentation {
        let pad = if intensity.scale > 0.0 {
            (cfg.intensity.background_mean / intensity.scale).clamp(0.0, 1.0) as f32
        } else {
            0.0
        };
        image = aug.apply(&image, pad);
        labels = aug.apply(&labels, 0);
    }
    Ok(Sample {
        index,
        seed,
        image,
        labels,
        geometry: warped.geometry,
        intensity,
        max_disp: warped.max_disp,
        augmentation,
    })
}

/// Structural checks every generated sample must pass.
pub fn check_sample(sample: &Sample) -> Result<()> {
    sample.geometry.validate()?;
    sample.labels.validate_classes()?;
    let c = sample.labels.class_counts();
    if c.iter().sum::<usize>() != sample.labels.dims().len() {
        return Err(Error::invalid("label classes do not cover the grid"));
    }
    if sample.image.dims() != sample.labels.dims() {
        return Err(Error::invalid("image and labels differ in dims"));
    }
    if sample.image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid("image value outside [0, 1]"));
    }
    Ok(())
}
