//! Smooth random displacement fields and backward warping of binary masks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::volume::{Dims, MaskVolume};

/// Per-voxel displacement, in voxels, interpolated trilinearly from knots
/// on a regular lattice. Only the x/y-interpolated knot planes are stored;
/// z-planes of the dense field are produced on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    /// `lz` planes of `nx * ny` vectors, already interpolated along x and y.
    knot_planes: Vec<[f64; 3]>,
    /// Per output z: lower knot plane, upper knot plane, weight of the upper.
    z_cells: Vec<(usize, usize, f64)>,
    max_magnitude: f64,
    smoothness_bound: f64,
}

impl DisplacementField {
    pub fn zeros(dims: Dims) -> Self {
        Self::constant(dims, [0.0; 3])
    }

    pub fn constant(dims: Dims, v: [f64; 3]) -> Self {
        Self {
            dims,
            knot_planes: vec![v; dims.nx * dims.ny],
            z_cells: vec![(0, 0, 0.0); dims.nz],
            max_magnitude: norm(v),
            smoothness_bound: 0.0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Writes the displacements of plane `z` (x fastest) into `out`.
    pub fn plane(&self, z: usize, out: &mut Vec<[f64; 3]>) {
        let n = self.dims.nx * self.dims.ny;
        let (k0, k1, t) = self.z_cells[z];
        let p0 = &self.knot_planes[k0 * n..][..n];
        let p1 = &self.knot_planes[k1 * n..][..n];
        out.clear();
        out.extend(p0.iter().zip(p1).map(|(&a, &b)| lerp3(a, b, t)));
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let n = self.dims.nx * self.dims.ny;
        let i = x + self.dims.nx * y;
        let (k0, k1, t) = self.z_cells[z];
        lerp3(self.knot_planes[k0 * n + i], self.knot_planes[k1 * n + i], t)
    }

    /// Largest vector norm over the grid.
    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    /// Upper bound on the change of any component between 6-neighbours.
    pub fn smoothness_bound(&self) -> f64 {
        self.smoothness_bound
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Draws i.i.d. uniform vectors in `[-max_disp, max_disp]³` on a lattice of
/// pitch `control_spacing` voxels anchored at voxel 0, then interpolates them
/// trilinearly onto every voxel.
///
/// Along any axis the interpolant is piecewise linear with knot differences of
/// at most `2 * max_disp`, so 6-neighbour differences are bounded by
/// `2 * max_disp / control_spacing`.
pub fn sample_displacement_field(
    rng: &mut RngStream,
    dims: Dims,
    control_spacing: usize,
    max_disp: f64,
) -> Result<DisplacementField> {
    if control_spacing < 2 {
        return Err(Error::invalid(format!(
            "control spacing must be >= 2, got {control_spacing}"
        )));
    }
    if !(max_disp >= 0.0) || !max_disp.is_finite() {
        return Err(Error::invalid(format!(
            "max displacement must be finite and >= 0, got {max_disp}"
        )));
    }
    if max_disp == 0.0 {
        return Ok(DisplacementField::zeros(dims));
    }

    let s = control_spacing;
    let lattice = |n: usize| (n - 1).div_ceil(s) + 1;
    let (lx, ly, lz) = (lattice(dims.nx), lattice(dims.ny), lattice(dims.nz));
    let knots: Vec<[f64; 3]> = (0..lx * ly * lz)
        .map(|_| [0; 3].map(|_| rng.gen_range(-max_disp..=max_disp)))
        .collect();

    let cells = |n: usize, l: usize| -> Vec<(usize, usize, f64)> {
        (0..n)
            .map(|i| {
                if l == 1 {
                    return (0, 0, 0.0);
                }
                let p = i as f64 / s as f64;
                let i0 = (p.floor() as usize).min(l - 2);
                (i0, i0 + 1, p - i0 as f64)
            })
            .collect()
    };
    let (nx, ny) = (dims.nx, dims.ny);
    // separable trilinear interpolation: along x, then y; z is done lazily
    let mut ax = Vec::with_capacity(nx * ly * lz);
    for row in knots.chunks_exact(lx) {
        for &(i0, i1, t) in &cells(nx, lx) {
            ax.push(lerp3(row[i0], row[i1], t));
        }
    }
    let cy = cells(ny, ly);
    let mut knot_planes = Vec::with_capacity(nx * ny * lz);
    for kz in 0..lz {
        for &(j0, j1, t) in &cy {
            let r0 = &ax[(kz * ly + j0) * nx..][..nx];
            let r1 = &ax[(kz * ly + j1) * nx..][..nx];
            knot_planes.extend(r0.iter().zip(r1).map(|(&a, &b)| lerp3(a, b, t)));
        }
    }
    let mut field = DisplacementField {
        dims,
        knot_planes,
        z_cells: cells(dims.nz, lz),
        max_magnitude: 0.0,
        smoothness_bound: 2.0 * max_disp / s as f64,
    };
    let mut plane = Vec::with_capacity(nx * ny);
    let mut max_sq: f64 = 0.0;
    for z in 0..dims.nz {
        field.plane(z, &mut plane);
        for v in &plane {
            max_sq = max_sq.max(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
    }
    field.max_magnitude = max_sq.sqrt();
    Ok(field)
}

#[inline]
fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

/// Backward-warps one mask: output voxel `v` reads the mask trilinearly at
/// `v + field(v)` (out-of-grid samples read 0) and is set when the value is
/// at least 0.5.
pub fn warp_mask(mask: &MaskVolume, field: &DisplacementField) -> Result<MaskVolume> {
    Ok(warp_masks(&[mask], field)?.pop().expect("one mask in, one out"))
}

/// Warps several masks through the same field. Sample positions and weights
/// are shared, so the result equals calling [`warp_mask`] on each.
pub fn warp_masks(masks: &[&MaskVolume], field: &DisplacementField) -> Result<Vec<MaskVolume>> {
    let dims = field.dims();
    for m in masks {
        if m.dims() != dims {
            return Err(Error::invalid(format!(
                "mask dims {:?} do not match field dims {:?}",
                m.dims(),
                dims
            )));
        }
    }
    let mut out = Vec::with_capacity(masks.len());
    for group in masks.chunks(8) {
        let mut packed = vec![0u8; dims.len()];
        for (bit, m) in group.iter().enumerate() {
            for (p, &b) in packed.iter_mut().zip(m.data()) {
                *p |= u8::from(b) << bit;
            }
        }
        let warped = warp_packed(&packed, dims, field, group.len());
        for bit in 0..group.len() {
            out.push(group[bit].with_data(warped.iter().map(|&w| w >> bit & 1 == 1).collect()));
        }
    }
    Ok(out)
}

fn warp_packed(packed: &[u8], dims: Dims, field: &DisplacementField, bits: usize) -> Vec<u8> {
    let (nx, ny, nz) = (dims.nx as i64, dims.ny as i64, dims.nz as i64);
    let read = |x: i64, y: i64, z: i64| -> u8 {
        if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
            0
        } else {
            packed[(x + nx * (y + ny * z)) as usize]
        }
    };
    let mut out = Vec::with_capacity(dims.len());
    let mut plane = Vec::with_capacity(dims.nx * dims.ny);
    for z in 0..nz {
        field.plane(z as usize, &mut plane);
        let mut i = 0usize;
        for y in 0..ny {
            for x in 0..nx {
                let d = plane[i];
                i += 1;
                let px = x as f64 + d[0];
                let py = y as f64 + d[1];
                let pz = z as f64 + d[2];
                let (fx, fy, fz) = (px.floor(), py.floor(), pz.floor());
                let (tx, ty, tz) = (px - fx, py - fy, pz - fz);
                let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
                let corners = if x0 >= 0 && y0 >= 0 && z0 >= 0 && x0 + 1 < nx && y0 + 1 < ny && z0 + 1 < nz
                {
                    let b = (x0 + nx * (y0 + ny * z0)) as usize;
                    let (sy, sz) = (nx as usize, (nx * ny) as usize);
                    [
                        packed[b],
                        packed[b + 1],
                        packed[b + sy],
                        packed[b + sy + 1],
                        packed[b + sz],
                        packed[b + sz + 1],
                        packed[b + sz + sy],
                        packed[b + sz + sy + 1],
                    ]
                } else {
                    [
                        read(x0, y0, z0),
                        read(x0 + 1, y0, z0),
                        read(x0, y0 + 1, z0),
                        read(x0 + 1, y0 + 1, z0),
                        read(x0, y0, z0 + 1),
                        read(x0 + 1, y0, z0 + 1),
                        read(x0, y0 + 1, z0 + 1),
                        read(x0 + 1, y0 + 1, z0 + 1),
                    ]
                };
                if corners.iter().all(|&c| c == corners[0]) {
                    out.push(corners[0]);
                    continue;
                }
                let w = [
                    (1.0 - tx) * (1.0 - ty) * (1.0 - tz),
                    tx * (1.0 - ty) * (1.0 - tz),
                    (1.0 - tx) * ty * (1.0 - tz),
                    tx * ty * (1.0 - tz),
                    (1.0 - tx) * (1.0 - ty) * tz,
                    tx * (1.0 - ty) * tz,
                    (1.0 - tx) * ty * tz,
                    tx * ty * tz,
                ];
                let mut code = 0u8;
                for bit in 0..bits {
                    let mut acc = 0.0;
                    for (c, wc) in corners.iter().zip(&w) {
                        if c >> bit & 1 == 1 {
                            acc += wc;
                        }
                    }
                    if acc >= 0.5 {
                        code |= 1 << bit;
                    }
                }
                out.push(code);
            }
        }
    }
    out
}
