//! Volumetric containers.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`, which is also the NIfTI on-disk order. Voxel
//! centers sit at integer coordinates, so continuous position `p` along an
//! axis lies between voxels `floor(p)` and `floor(p) + 1`.

use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!(
                "dims must be positive, got ({nx}, {ny}, {nz})"
            )));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let yz = idx / self.nx;
        (x, yz % self.ny, yz / self.ny)
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.nx
            && (y as usize) < self.ny
            && (z as usize) < self.nz
    }

    /// Continuous coordinate of the grid center.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.nx - 1) as f64 / 2.0,
            (self.ny - 1) as f64 / 2.0,
            (self.nz - 1) as f64 / 2.0,
        ]
    }
}

pub type Affine = [[f32; 4]; 4];

pub fn diagonal_affine(spacing: [f32; 3]) -> Affine {
    [
        [spacing[0], 0.0, 0.0, 0.0],
        [0.0, spacing[1], 0.0, 0.0],
        [0.0, 0.0, spacing[2], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Dense 3D grid with spacing (mm per voxel) and voxel-to-world affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    data: Vec<T>,
    spacing: [f32; 3],
    affine: Affine,
}

/// Real-valued intensities.
pub type ScalarVolume = Volume<f32>;
/// Binary mask, one flag per voxel.
pub type MaskVolume = Volume<bool>;
/// Three-class training target, see [`Label`].
pub type LabelVolume = Volume<u8>;

/// Categories of a [`LabelVolume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Brain = 1,
    Boundary = 2,
}

impl Label {
    pub const COUNT: usize = 3;

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Background),
            1 => Some(Label::Brain),
            2 => Some(Label::Boundary),
            _ => None,
        }
    }
}

impl<T: Copy> Volume<T> {
    pub fn filled(dims: Dims, fill: T) -> Self {
        Self {
            dims,
            data: vec![fill; dims.len()],
            spacing: [1.0; 3],
            affine: diagonal_affine([1.0; 3]),
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                dims.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            spacing: [1.0; 3],
            affine: diagonal_affine([1.0; 3]),
        })
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn with_affine(mut self, affine: Affine) -> Self {
        self.affine = affine;
        self
    }

    /// Same geometry (dims, spacing, affine) with a different payload.
    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
            spacing: self.spacing,
            affine: self.affine,
        }
    }

    pub(crate) fn with_data<U: Copy>(&self, data: Vec<U>) -> Volume<U> {
        debug_assert_eq!(data.len(), self.dims.len());
        Volume {
            dims: self.dims,
            data,
            spacing: self.spacing,
            affine: self.affine,
        }
    }

    pub(crate) fn set_geometry(&mut self, spacing: [f32; 3], affine: Affine) {
        self.spacing = spacing;
        self.affine = affine;
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub(crate) fn check_same_dims<U>(&self, other: &Volume<U>, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::invalid(format!(
                "{what}: dims {:?} and {:?} differ",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Constant-filled scalar volume with unit spacing.
pub fn new_volume(dims: [i64; 3], fill: f32) -> Result<ScalarVolume> {
    if dims.iter().any(|&d| d < 1) {
        return Err(Error::invalid(format!("dims must be >= 1, got {dims:?}")));
    }
    Ok(Volume::filled(
        Dims::new(dims[0] as usize, dims[1] as usize, dims[2] as usize)?,
        fill,
    ))
}

impl MaskVolume {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_all_clear(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn and(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.check_same_dims(other, "and")?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        ))
    }

    pub fn or(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.check_same_dims(other, "or")?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a || b)
                .collect(),
        ))
    }

    /// `self \ other`.
    pub fn and_not(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.check_same_dims(other, "and_not")?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && !b)
                .collect(),
        ))
    }

    pub fn is_subset_of(&self, other: &MaskVolume) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint(&self, other: &MaskVolume) -> bool {
        self.dims == other.dims && !self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }

    /// Inclusive voxel bounding box `(min, max)`, or `None` when empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y, z) = self.dims.coords(i);
            for (a, v) in [x, y, z].into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }

    /// Voxel-count extent along each axis of the bounding box.
    pub fn extents(&self) -> Option<[usize; 3]> {
        self.bounding_box()
            .map(|(lo, hi)| [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1])
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut sum = [0f64; 3];
        let mut n = 0usize;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y, z) = self.dims.coords(i);
            sum[0] += x as f64;
            sum[1] += y as f64;
            sum[2] += z as f64;
            n += 1;
        }
        (n > 0).then(|| sum.map(|s| s / n as f64))
    }
}

impl LabelVolume {
    /// Mask of voxels carrying `label`.
    pub fn class_mask(&self, label: Label) -> MaskVolume {
        let l = label as u8;
        self.map(|v| v == l)
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0usize; 3];
        for &v in &self.data {
            if let Some(slot) = c.get_mut(v as usize) {
                *slot += 1;
            }
        }
        c
    }

    pub fn validate_classes(&self) -> Result<()> {
        match self.data.iter().position(|&v| Label::from_u8(v).is_none()) {
            None => Ok(()),
            Some(i) => Err(Error::invalid(format!(
                "label value {} at voxel {i} is outside {{0, 1, 2}}",
                self.data[i]
            ))),
        }
    }
}
