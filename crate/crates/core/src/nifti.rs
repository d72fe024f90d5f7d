//! NIfTI-1 single-file reader and writer (`.nii` and `.nii.gz`).
//!
//! Writing always produces little-endian files with `vox_offset = 352`,
//! `sform_code = 1` and the volume affine in the `srow_*` rows. Reading
//! accepts either byte order, detects gzip by its magic bytes, applies
//! `scl_slope`/`scl_inter` when they are not the identity, and keeps the
//! on-disk voxel order (x fastest), which is the crate's canonical order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::{Compression, GzBuilder};

use crate::error::{Error, Result};
use crate::postprocess::ClassProbVolume;
use crate::volume::{Affine, Dims, LabelVolume, MaskVolume, ScalarVolume, Volume};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const REGULAR: usize = 38;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDataType {
    UInt8,
    Int8,
    Int16,
    UInt16,
    Int32,
    Float32,
    Float64,
}

impl NiftiDataType {
    pub fn code(self) -> i16 {
        match self {
            NiftiDataType::UInt8 => 2,
            NiftiDataType::Int16 => 4,
            NiftiDataType::Int32 => 8,
            NiftiDataType::Float32 => 16,
            NiftiDataType::Float64 => 64,
            NiftiDataType::Int8 => 256,
            NiftiDataType::UInt16 => 512,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => NiftiDataType::UInt8,
            4 => NiftiDataType::Int16,
            8 => NiftiDataType::Int32,
            16 => NiftiDataType::Float32,
            64 => NiftiDataType::Float64,
            256 => NiftiDataType::Int8,
            512 => NiftiDataType::UInt16,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            NiftiDataType::UInt8 | NiftiDataType::Int8 => 1,
            NiftiDataType::Int16 | NiftiDataType::UInt16 => 2,
            NiftiDataType::Int32 | NiftiDataType::Float32 => 4,
            NiftiDataType::Float64 => 8,
        }
    }
}

/// The header fields this crate reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeaderView {
    /// `[nx, ny, nz, nt]`; `nt` is 1 for 3D images.
    pub dims: [usize; 4],
    pub datatype: NiftiDataType,
    pub pixdim: [f32; 3],
    pub affine: Affine,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub vox_offset: usize,
    pub little_endian: bool,
}

impl NiftiHeaderView {
    pub fn spatial_dims(&self) -> Result<Dims> {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
    }

    fn scaling(&self) -> Option<(f32, f32)> {
        let identity = self.scl_slope == 1.0 && self.scl_inter == 0.0;
        (self.scl_slope != 0.0 && self.scl_slope.is_finite() && !identity)
            .then_some((self.scl_slope, self.scl_inter))
    }
}

/// Decoded voxel payload.
#[derive(Debug, Clone, PartialEq)]
pub enum NiftiData {
    UInt8(Vec<u8>),
    Float32(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub header: NiftiHeaderView,
    pub data: NiftiData,
}

/// A 3D volume as stored on disk: integer labels or real intensities.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl NiftiImage {
    fn spatial<T: Copy>(&self, data: Vec<T>) -> Result<Volume<T>> {
        let dims = self.header.spatial_dims()?;
        Ok(Volume::from_vec(dims, data)?
            .with_spacing(sanitize_spacing(self.header.pixdim))?
            .with_affine(self.header.affine))
    }

    fn require_3d(&self) -> Result<()> {
        if self.header.dims[3] != 1 {
            return Err(Error::format(
                offsets::DIM as u64,
                format!("expected a 3D volume, got 4th dim {}", self.header.dims[3]),
            ));
        }
        Ok(())
    }

    pub fn into_volume(self) -> Result<VolumeData> {
        self.require_3d()?;
        match &self.data {
            NiftiData::UInt8(v) => Ok(VolumeData::Label(self.spatial(v.clone())?)),
            NiftiData::Float32(v) => Ok(VolumeData::Scalar(self.spatial(v.clone())?)),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarVolume> {
        self.require_3d()?;
        let data = match &self.data {
            NiftiData::UInt8(v) => v.iter().map(|&b| b as f32).collect(),
            NiftiData::Float32(v) => v.clone(),
        };
        self.spatial(data)
    }

    /// Integer-valued volume as labels; real values must be whole numbers in `0..=255`.
    pub fn into_labels(self) -> Result<LabelVolume> {
        self.require_3d()?;
        let data = match &self.data {
            NiftiData::UInt8(v) => v.clone(),
            NiftiData::Float32(v) => v
                .iter()
                .map(|&x| {
                    if x.fract() == 0.0 && (0.0..=255.0).contains(&x) {
                        Ok(x as u8)
                    } else {
                        Err(Error::format(
                            self.header.vox_offset as u64,
                            format!("value {x} is not an integer label"),
                        ))
                    }
                })
                .collect::<Result<_>>()?,
        };
        self.spatial(data)
    }

    /// 4D volume with three class planes.
    pub fn into_class_probs(self) -> Result<ClassProbVolume> {
        if self.header.dims[3] != 3 {
            return Err(Error::format(
                offsets::DIM as u64,
                format!("expected 3 class planes, got 4th dim {}", self.header.dims[3]),
            ));
        }
        let dims = self.header.spatial_dims()?;
        let planes = match self.data {
            NiftiData::Float32(v) => v,
            NiftiData::UInt8(v) => v.into_iter().map(|b| b as f32).collect(),
        };
        ClassProbVolume::from_planar(dims, &planes)
    }
}

fn sanitize_spacing(p: [f32; 3]) -> [f32; 3] {
    p.map(|s| if s.is_finite() && s != 0.0 { s.abs() } else { 1.0 })
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(0, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads any supported NIfTI-1 file.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    decode(&read_all(path.as_ref())?)
}

/// Reads a 3D volume: `uint8` files become labels, everything else scalars.
pub fn read_volume(path: impl AsRef<Path>) -> Result<VolumeData> {
    read_nifti(path)?.into_volume()
}

pub fn decode(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            bytes.len() as u64,
            format!("file holds {} bytes, header needs {HEADER_SIZE}", bytes.len()),
        ));
    }
    if LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode_with::<LittleEndian>(bytes, true)
    } else if BigEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode_with::<BigEndian>(bytes, false)
    } else {
        Err(Error::format(0, "sizeof_hdr is not 348"))
    }
}

fn decode_with<B: ByteOrder>(bytes: &[u8], little_endian: bool) -> Result<NiftiImage> {
    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != MAGIC_SINGLE {
        return Err(Error::format(
            offsets::MAGIC as u64,
            format!("bad magic {magic:?}, expected \"n+1\\0\""),
        ));
    }
    let i16_at = |o: usize| B::read_i16(&bytes[o..]);
    let f32_at = |o: usize| B::read_f32(&bytes[o..]);

    let ndim = i16_at(offsets::DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(offsets::DIM as u64, format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 4];
    for k in 0..ndim as usize {
        let d = i16_at(offsets::DIM + 2 * (k + 1));
        if d < 1 {
            return Err(Error::format(
                (offsets::DIM + 2 * (k + 1)) as u64,
                format!("dim[{}] = {d}", k + 1),
            ));
        }
        if k < 4 {
            dims[k] = d as usize;
        } else if d != 1 {
            return Err(Error::format(
                (offsets::DIM + 2 * (k + 1)) as u64,
                "volumes beyond 4 dimensions are not supported",
            ));
        }
    }
    let code = i16_at(offsets::DATATYPE);
    let datatype = NiftiDataType::from_code(code).ok_or_else(|| {
        Error::format(offsets::DATATYPE as u64, format!("unsupported datatype {code}"))
    })?;
    let pixdim = [1, 2, 3].map(|k| f32_at(offsets::PIXDIM + 4 * k));
    let vox_offset = f32_at(offsets::VOX_OFFSET);
    if !(vox_offset >= VOX_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::format(
            offsets::VOX_OFFSET as u64,
            format!("vox_offset {vox_offset} is not an integer >= 352"),
        ));
    }
    let vox_offset = vox_offset as usize;
    let sform_code = i16_at(offsets::SFORM_CODE);
    let qform_code = i16_at(offsets::QFORM_CODE);
    let affine = if sform_code > 0 {
        let mut a = [[0.0f32; 4]; 4];
        for (r, row) in a.iter_mut().take(3).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(offsets::SROW_X + 16 * r + 4 * c);
            }
        }
        a[3] = [0.0, 0.0, 0.0, 1.0];
        a
    } else if qform_code > 0 {
        let quat = [0, 1, 2].map(|k| f32_at(offsets::QUATERN_B + 4 * k));
        let offset = [0, 1, 2].map(|k| f32_at(offsets::QOFFSET_X + 4 * k));
        let qfac = f32_at(offsets::PIXDIM);
        qform_affine(quat, offset, pixdim, qfac)
    } else {
        crate::volume::diagonal_affine(sanitize_spacing(pixdim))
    };
    let header = NiftiHeaderView {
        dims,
        datatype,
        pixdim,
        affine,
        scl_slope: f32_at(offsets::SCL_SLOPE),
        scl_inter: f32_at(offsets::SCL_INTER),
        vox_offset,
        little_endian,
    };

    let count: usize = dims.iter().product();
    let need = count * datatype.size();
    let payload = bytes.get(vox_offset..vox_offset + need).ok_or_else(|| {
        Error::format(
            bytes.len() as u64,
            format!(
                "truncated payload: need {need} bytes from offset {vox_offset}, file has {}",
                bytes.len()
            ),
        )
    })?;

    let data = match (datatype, header.scaling()) {
        (NiftiDataType::UInt8, None) => NiftiData::UInt8(payload.to_vec()),
        (NiftiDataType::Float32, None) => {
            let mut v = vec![0f32; count];
            B::read_f32_into(payload, &mut v);
            NiftiData::Float32(v)
        }
        (dt, scaling) => {
            let mut v = raw_as_f64::<B>(dt, payload, count);
            if let Some((m, b)) = scaling {
                v.iter_mut().for_each(|x| *x = *x * m as f64 + b as f64);
            }
            NiftiData::Float32(v.into_iter().map(|x| x as f32).collect())
        }
    };
    Ok(NiftiImage { header, data })
}

fn raw_as_f64<B: ByteOrder>(dt: NiftiDataType, p: &[u8], n: usize) -> Vec<f64> {
    match dt {
        NiftiDataType::UInt8 => p.iter().map(|&b| b as f64).collect(),
        NiftiDataType::Int8 => p.iter().map(|&b| b as i8 as f64).collect(),
        NiftiDataType::Int16 => (0..n).map(|i| B::read_i16(&p[2 * i..]) as f64).collect(),
        NiftiDataType::UInt16 => (0..n).map(|i| B::read_u16(&p[2 * i..]) as f64).collect(),
        NiftiDataType::Int32 => (0..n).map(|i| B::read_i32(&p[4 * i..]) as f64).collect(),
        NiftiDataType::Float32 => (0..n).map(|i| B::read_f32(&p[4 * i..]) as f64).collect(),
        NiftiDataType::Float64 => (0..n).map(|i| B::read_f64(&p[8 * i..])).collect(),
    }
}

/// Voxel-to-world affine from the quaternion representation.
fn qform_affine(quat: [f32; 3], offset: [f32; 3], pixdim: [f32; 3], qfac: f32) -> Affine {
    let [b, c, d] = quat.map(|v| v as f64);
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let q = if qfac < 0.0 { -1.0 } else { 1.0 };
    let s = sanitize_spacing(pixdim).map(|v| v as f64);
    let mut out = [[0.0f32; 4]; 4];
    for i in 0..3 {
        out[i][0] = (r[i][0] * s[0]) as f32;
        out[i][1] = (r[i][1] * s[1]) as f32;
        out[i][2] = (r[i][2] * s[2] * q) as f32;
        out[i][3] = offset[i];
    }
    out[3] = [0.0, 0.0, 0.0, 1.0];
    out
}

fn encode_header(
    dims: [usize; 4],
    datatype: NiftiDataType,
    spacing: [f32; 3],
    affine: &Affine,
) -> Result<Vec<u8>> {
    let mut h = vec![0u8; VOX_OFFSET];
    type E = LittleEndian;
    E::write_i32(&mut h[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    h[offsets::REGULAR] = b'r';
    let ndim: i16 = if dims[3] > 1 { 4 } else { 3 };
    E::write_i16(&mut h[offsets::DIM..], ndim);
    for k in 0..7 {
        let v = dims.get(k).copied().unwrap_or(1);
        let v = i16::try_from(v).map_err(|_| {
            Error::invalid(format!("dimension {v} exceeds the NIfTI-1 limit of 32767"))
        })?;
        E::write_i16(&mut h[offsets::DIM + 2 * (k + 1)..], v);
    }
    E::write_i16(&mut h[offsets::DATATYPE..], datatype.code());
    E::write_i16(&mut h[offsets::BITPIX..], (datatype.size() * 8) as i16);
    E::write_f32(&mut h[offsets::PIXDIM..], 1.0);
    for k in 0..3 {
        E::write_f32(&mut h[offsets::PIXDIM + 4 * (k + 1)..], spacing[k]);
    }
    for k in 4..8 {
        E::write_f32(&mut h[offsets::PIXDIM + 4 * k..], 1.0);
    }
    E::write_f32(&mut h[offsets::VOX_OFFSET..], VOX_OFFSET as f32);
    E::write_f32(&mut h[offsets::SCL_SLOPE..], 1.0);
    E::write_f32(&mut h[offsets::SCL_INTER..], 0.0);
    h[offsets::XYZT_UNITS] = 2; // millimetres
    let descrip = b"headsynth";
    h[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip);
    E::write_i16(&mut h[offsets::QFORM_CODE..], 0);
    E::write_i16(&mut h[offsets::SFORM_CODE..], 1);
    for (r, row) in affine.iter().take(3).enumerate() {
        for (c, v) in row.iter().enumerate() {
            E::write_f32(&mut h[offsets::SROW_X + 16 * r + 4 * c..], *v);
        }
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
    Ok(h)
}

fn write_file(path: &Path, header: Vec<u8>, payload: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".nii.gz"));
    let res = if gz {
        let mut enc = GzBuilder::new().mtime(0).write(&mut w, Compression::new(6));
        enc.write_all(&header)
            .and_then(|_| enc.write_all(payload))
            .and_then(|_| enc.finish().map(|_| ()))
    } else {
        w.write_all(&header).and_then(|_| w.write_all(payload))
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    let mut out = vec![0u8; v.len() * 4];
    LittleEndian::write_f32_into(v, &mut out);
    out
}

/// Writes a float32 volume.
pub fn write_scalar(vol: &ScalarVolume, path: impl AsRef<Path>) -> Result<()> {
    let d = vol.dims();
    let h = encode_header([d.nx, d.ny, d.nz, 1], NiftiDataType::Float32, vol.spacing(), vol.affine())?;
    write_file(path.as_ref(), h, &f32_bytes(vol.data()))
}

/// Writes a uint8 label volume.
pub fn write_labels(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let d = vol.dims();
    let h = encode_header([d.nx, d.ny, d.nz, 1], NiftiDataType::UInt8, vol.spacing(), vol.affine())?;
    write_file(path.as_ref(), h, vol.data())
}

/// Writes a mask as uint8 0/1.
pub fn write_mask(mask: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    write_labels(&mask.map(u8::from), path)
}

/// Writes class probabilities as a 4D float32 volume, class index slowest.
pub fn write_class_probs(
    probs: &ClassProbVolume,
    spacing: [f32; 3],
    affine: &Affine,
    path: impl AsRef<Path>,
) -> Result<()> {
    let d = probs.dims();
    let n = d.len();
    let mut planes = vec![0f32; 3 * n];
    for (i, p) in probs.probs().iter().enumerate() {
        for c in 0..3 {
            planes[c * n + i] = p[c];
        }
    }
    let h = encode_header([d.nx, d.ny, d.nz, 3], NiftiDataType::Float32, spacing, affine)?;
    write_file(path.as_ref(), h, &f32_bytes(&planes))
}

/// Writes `vol` in the datatype matching its payload.
pub fn write_volume(vol: &VolumeData, path: impl AsRef<Path>) -> Result<()> {
    match vol {
        VolumeData::Scalar(v) => write_scalar(v, path),
        VolumeData::Label(v) => write_labels(v, path),
    }
}
