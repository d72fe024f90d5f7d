//! Write/read/write round trips through plain and gzipped NIfTI-1 files.

use std::fs;

use headsynth_core::nifti::{
    read_nifti, read_volume, write_class_probs, write_labels, write_mask, write_scalar,
    VolumeData,
};
use headsynth_core::postprocess::ClassProbVolume;
use headsynth_core::volume::diagonal_affine;
use headsynth_core::{Dims, LabelVolume, MaskVolume, ScalarVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 2] = ["v.nii", "v.nii.gz"];

fn scalar(dims: Dims, seed: u64) -> ScalarVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f32> = (0..dims.len()).map(|_| rng.gen_range(-1e3..1e3)).collect();
    // values whose bit patterns are easy to mangle
    data[0] = f32::MIN_POSITIVE;
    data[1] = -0.0;
    data[2] = f32::MAX;
    data[3] = 1.0 / 3.0;
    let mut affine = diagonal_affine([0.5, 1.25, 2.0]);
    affine[0][3] = -31.5;
    affine[1][3] = 12.25;
    affine[2][1] = 0.125;
    ScalarVolume::from_vec(dims, data)
        .unwrap()
        .with_spacing([0.5, 1.25, 2.0])
        .unwrap()
        .with_affine(affine)
}

#[test]
fn scalar_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (k, name) in NAMES.iter().enumerate() {
        let vol = scalar(Dims::new(7, 5, 3).unwrap(), k as u64);
        let p = dir.path().join(name);
        write_scalar(&vol, &p).unwrap();
        let back = match read_volume(&p).unwrap() {
            VolumeData::Scalar(v) => v,
            other => panic!("expected scalar, got {other:?}"),
        };
        let bits = |v: &ScalarVolume| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&vol));
        assert_eq!(back.dims(), vol.dims());
        assert_eq!(back.spacing(), vol.spacing());
        assert_eq!(back.affine(), vol.affine());
        // re-encoding the decoded volume reproduces the file byte for byte
        let p2 = dir.path().join(format!("again_{name}"));
        write_scalar(&back, &p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }
}

#[test]
fn label_and_mask_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(6, 4, 5).unwrap();
    let labels = LabelVolume::from_vec(dims, (0..dims.len()).map(|i| (i * 7 % 3) as u8).collect())
        .unwrap();
    let mask = MaskVolume::from_vec(dims, (0..dims.len()).map(|i| i % 5 == 0).collect()).unwrap();
    for name in NAMES {
        let p = dir.path().join(name);
        write_labels(&labels, &p).unwrap();
        assert_eq!(read_nifti(&p).unwrap().into_labels().unwrap(), labels);
        write_mask(&mask, &p).unwrap();
        let back = read_nifti(&p).unwrap().into_labels().unwrap();
        assert_eq!(back.map(|v| v == 1), mask);
    }
}

#[test]
fn class_probabilities_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(4, 3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let probs: Vec<[f32; 3]> = (0..dims.len())
        .map(|_| {
            let a: f32 = rng.gen_range(0.0..1.0);
            let b: f32 = rng.gen_range(0.0..1.0 - a);
            [a, b, 1.0 - a - b]
        })
        .collect();
    let vol = ClassProbVolume::new(dims, probs).unwrap();
    for name in NAMES {
        let p = dir.path().join(name);
        write_class_probs(&vol, [1.0; 3], &diagonal_affine([1.0; 3]), &p).unwrap();
        let img = read_nifti(&p).unwrap();
        assert_eq!(img.header.dims, [4, 3, 2, 3]);
        assert_eq!(img.into_class_probs().unwrap(), vol);
    }
}

#[test]
fn gzip_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let vol = scalar(Dims::cube(9).unwrap(), 1);
    let (a, b) = (dir.path().join("a.nii.gz"), dir.path().join("b.nii.gz"));
    write_scalar(&vol, &a).unwrap();
    write_scalar(&vol, &b).unwrap();
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn gzipped_and_plain_decode_identically() {
    let dir = tempfile::tempdir().unwrap();
    let vol = scalar(Dims::new(3, 8, 2).unwrap(), 2);
    let (a, b) = (dir.path().join("a.nii"), dir.path().join("a.nii.gz"));
    write_scalar(&vol, &a).unwrap();
    write_scalar(&vol, &b).unwrap();
    assert_eq!(read_nifti(&a).unwrap(), read_nifti(&b).unwrap());
    assert_eq!(fs::read(&a).unwrap().len(), 352 + 4 * 48);
}
