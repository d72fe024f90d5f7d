//! Head geometry: a hollow outer ellipsoid (the head), a brain ellipsoid
//! inside the cavity, and small blob/hole artifacts. All ellipsoids are
//! axis-aligned; shape variety comes from the deformation stage.

use rand::Rng;

use crate::config::ShapeConfig;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::volume::{Dims, MaskVolume};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArtifactKind {
    /// Bright small ellipsoid.
    Blob,
    /// Region repainted with background statistics.
    Hole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub center: Vec3,
    pub semiaxes: Vec3,
    pub kind: ArtifactKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGeometry {
    pub outer_center: Vec3,
    pub outer_semiaxes: Vec3,
    pub shell_thickness: f64,
    pub brain_center: Vec3,
    pub brain_semiaxes: Vec3,
    pub artifacts: Vec<Artifact>,
}

impl HeadGeometry {
    pub fn cavity_semiaxes(&self) -> Vec3 {
        self.outer_semiaxes.map(|a| a - self.shell_thickness)
    }

    /// Checks the structural invariants: positive cavity, brain strictly
    /// inside the cavity (per axis and as ellipsoids), and a short brain z axis.
    pub fn validate(&self) -> Result<()> {
        let cavity = self.cavity_semiaxes();
        if cavity.iter().any(|&c| c <= 0.0) {
            return Err(Error::invalid(format!("cavity semi-axes {cavity:?} not positive")));
        }
        for a in 0..3 {
            let off = (self.brain_center[a] - self.outer_center[a]).abs();
            if self.brain_semiaxes[a] + off >= cavity[a] {
                return Err(Error::invalid(format!(
                    "brain exceeds cavity along axis {a}: {} + {off} >= {}",
                    self.brain_semiaxes[a], cavity[a]
                )));
            }
        }
        if !ellipsoid_inside(
            self.brain_center,
            self.brain_semiaxes,
            self.outer_center,
            cavity,
        ) {
            return Err(Error::invalid("brain ellipsoid not contained in cavity"));
        }
        let b = self.brain_semiaxes;
        if b[2] >= b[0].min(b[1]) {
            return Err(Error::invalid(format!(
                "brain z semi-axis {} is not the shortest of {b:?}",
                b[2]
            )));
        }
        Ok(())
    }
}

/// Sufficient test that ellipsoid `(c, a)` lies strictly inside `(c0, a0)`:
/// in coordinates scaled by `a0` the container is the unit ball and the inner
/// ellipsoid fits in a ball of radius `max(a / a0)` around its center.
fn ellipsoid_inside(c: Vec3, a: Vec3, c0: Vec3, a0: Vec3) -> bool {
    let mut off2 = 0.0;
    let mut r: f64 = 0.0;
    for i in 0..3 {
        let d = (c[i] - c0[i]) / a0[i];
        off2 += d * d;
        r = r.max(a[i] / a0[i]);
    }
    off2.sqrt() + r < 1.0
}

/// Voxels `v` with `Σ((v - center) / semiaxes)² <= 1`.
pub fn rasterize_ellipsoid(dims: Dims, center: Vec3, semiaxes: Vec3) -> Result<MaskVolume> {
    if semiaxes.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!(
            "ellipsoid semi-axes must be positive, got {semiaxes:?}"
        )));
    }
    let mut mask = MaskVolume::filled(dims, false);
    fill_ellipsoid(&mut mask, center, semiaxes);
    Ok(mask)
}

fn axis_span(c: f64, a: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (c - a).ceil().max(0.0);
    let hi = (c + a).floor().min((n - 1) as f64);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

fn fill_ellipsoid(mask: &mut MaskVolume, center: Vec3, semiaxes: Vec3) {
    let dims = mask.dims();
    let (Some((x0, x1)), Some((y0, y1)), Some((z0, z1))) = (
        axis_span(center[0], semiaxes[0], dims.nx),
        axis_span(center[1], semiaxes[1], dims.ny),
        axis_span(center[2], semiaxes[2], dims.nz),
    ) else {
        return;
    };
    let inv = semiaxes.map(|s| 1.0 / (s * s));
    let data = mask.data_mut();
    for z in z0..=z1 {
        let dz = z as f64 - center[2];
        let qz = dz * dz * inv[2];
        if qz > 1.0 {
            continue;
        }
        for y in y0..=y1 {
            let dy = y as f64 - center[1];
            let qyz = qz + dy * dy * inv[1];
            if qyz > 1.0 {
                continue;
            }
            let row = dims.index(0, y, z);
            for x in x0..=x1 {
                let dx = x as f64 - center[0];
                if qyz + dx * dx * inv[0] <= 1.0 {
                    data[row + x] = true;
                }
            }
        }
    }
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Samples a feasible head geometry centered in a grid of `dims`.
///
/// The brain draw is rejected and redrawn until it fits strictly inside the
/// cavity with its z semi-axis at least one voxel shorter than x and y; after
/// `cfg.max_attempts` failures a config error is returned.
pub fn sample_head_geometry(
    rng: &mut RngStream,
    cfg: &ShapeConfig,
    dims: Dims,
) -> Result<HeadGeometry> {
    if cfg.outer_semiaxes.min() > cfg.outer_semiaxes.max()
        || cfg.shell_thickness.min() > cfg.shell_thickness.max()
        || cfg.brain_scale.min() > cfg.brain_scale.max()
        || cfg.brain_z_scale.min() > cfg.brain_z_scale.max()
        || cfg.artifact_semiaxes.min() > cfg.artifact_semiaxes.max()
        || cfg.artifact_count.0 > cfg.artifact_count.1
    {
        return Err(Error::config("shape ranges must satisfy min <= max"));
    }
    if cfg.brain_scale.min() >= 1.0 {
        return Err(Error::config(
            "brain semi-axis range lies entirely outside the cavity",
        ));
    }
    let center = dims.center();
    let mut found = None;
    for _ in 0..cfg.max_attempts.max(1) {
        let outer = [0; 3].map(|_| uniform(rng, cfg.outer_semiaxes.min(), cfg.outer_semiaxes.max()));
        let thickness = uniform(rng, cfg.shell_thickness.min(), cfg.shell_thickness.max());
        let cavity = outer.map(|a| a - thickness);
        let mut brain = cavity.map(|c| c * uniform(rng, cfg.brain_scale.min(), cfg.brain_scale.max()));
        brain[2] *= uniform(rng, cfg.brain_z_scale.min(), cfg.brain_z_scale.max());
        let j = cfg.brain_center_jitter;
        let mut brain_center = center;
        for a in 0..3 {
            brain_center[a] += uniform(rng, -j, j) * cavity[a];
        }
        let geom = HeadGeometry {
            outer_center: center,
            outer_semiaxes: outer,
            shell_thickness: thickness,
            brain_center,
            brain_semiaxes: brain,
            artifacts: Vec::new(),
        };
        // one voxel of slack keeps the rasterized z extent strictly shortest
        let short_z = brain[2] + 1.0 <= brain[0].min(brain[1]);
        if short_z && geom.validate().is_ok() {
            found = Some(geom);
            break;
        }
    }
    let mut geom = found.ok_or_else(|| {
        Error::config(format!(
            "no feasible head geometry after {} attempts; brain/cavity ranges are incompatible",
            cfg.max_attempts
        ))
    })?;

    let n = if cfg.artifact_count.0 == cfg.artifact_count.1 {
        cfg.artifact_count.0
    } else {
        rng.gen_range(cfg.artifact_count.0..=cfg.artifact_count.1)
    };
    for _ in 0..n {
        let semiaxes = [0; 3].map(|_| {
            uniform(rng, cfg.artifact_semiaxes.min(), cfg.artifact_semiaxes.max())
        });
        let kind = if rng.gen_bool(cfg.hole_probability) {
            ArtifactKind::Hole
        } else {
            ArtifactKind::Blob
        };
        let u = unit_ball_point(rng);
        let center = [0, 1, 2].map(|a| geom.outer_center[a] + u[a] * geom.outer_semiaxes[a]);
        geom.artifacts.push(Artifact {
            center,
            semiaxes,
            kind,
        });
    }
    Ok(geom)
}

fn unit_ball_point(rng: &mut RngStream) -> Vec3 {
    loop {
        let p: Vec3 = [0; 3].map(|_| rng.gen_range(-1.0..=1.0));
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return p;
        }
    }
}

/// Rasterized, pre-deformation shapes of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMasks {
    pub shell: MaskVolume,
    pub brain: MaskVolume,
    pub artifacts: Vec<(MaskVolume, ArtifactKind)>,
}

impl ShapeMasks {
    pub fn dims(&self) -> Dims {
        self.brain.dims()
    }
}

/// Rasterizes `geom`: shell = outer minus cavity, brain ellipsoid, and each
/// artifact separately (clipped to the grid). Hole artifacts never cover brain
/// voxels.
pub fn build_masks(geom: &HeadGeometry, dims: Dims) -> Result<ShapeMasks> {
    let n = dims.as_array();
    for a in 0..3 {
        let lo = geom.outer_center[a] - geom.outer_semiaxes[a];
        let hi = geom.outer_center[a] + geom.outer_semiaxes[a];
        if lo < 0.0 || hi > (n[a] - 1) as f64 {
            return Err(Error::OutOfBounds(format!(
                "outer ellipsoid spans [{lo}, {hi}] on axis {a}, grid is [0, {}]",
                n[a] - 1
            )));
        }
    }
    let cavity = geom.cavity_semiaxes();
    let outer = rasterize_ellipsoid(dims, geom.outer_center, geom.outer_semiaxes)?;
    let inner = rasterize_ellipsoid(dims, geom.outer_center, cavity)?;
    let shell = outer.and_not(&inner)?;
    let brain = rasterize_ellipsoid(dims, geom.brain_center, geom.brain_semiaxes)?;
    let mut artifacts = Vec::with_capacity(geom.artifacts.len());
    for art in &geom.artifacts {
        let mut m = rasterize_ellipsoid(dims, art.center, art.semiaxes)?;
        if art.kind == ArtifactKind::Hole {
            m = m.and_not(&brain)?;
        }
        artifacts.push((m, art.kind));
    }
    Ok(ShapeMasks {
        shell,
        brain,
        artifacts,
    })
}
