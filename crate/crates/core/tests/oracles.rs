//! Library results checked against slow, obviously correct reference
//! implementations on random inputs.

use headsynth_core::labels::Connectivity;
use headsynth_core::metrics::{
    dice, hausdorff, jaccard, squared_distance_transform, HausdorffMode,
};
use headsynth_core::postprocess::{connected_components, fill_holes};
use headsynth_core::{Dims, MaskVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(dims: Dims, density: f64, rng: &mut ChaCha8Rng) -> MaskVolume {
    let data = (0..dims.len()).map(|_| rng.gen_bool(density)).collect();
    MaskVolume::from_vec(dims, data).unwrap()
}

fn neighbors(conn: Connectivity) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                let keep = match conn {
                    Connectivity::Six => manhattan == 1,
                    Connectivity::TwentySix => manhattan > 0,
                };
                if keep {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Flood fill from each unlabeled foreground voxel in raster order.
fn flood_fill_labels(mask: &MaskVolume, conn: Connectivity) -> Vec<u32> {
    let d = mask.dims();
    let offs = neighbors(conn);
    let mut labels = vec![0u32; d.len()];
    let mut next = 0;
    for start in 0..d.len() {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y, z) = d.coords(i);
            for o in &offs {
                let (nx, ny, nz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                if !d.contains(nx, ny, nz) {
                    continue;
                }
                let j = d.index(nx as usize, ny as usize, nz as usize);
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    labels
}

#[test]
fn components_match_flood_fill_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dims = Dims::cube(16).unwrap();
    for k in 0..50 {
        let density = 0.1 + 0.5 * (k as f64 / 50.0);
        let mask = random_mask(dims, density, &mut rng);
        for conn in [Connectivity::Six, Connectivity::TwentySix] {
            let oracle = flood_fill_labels(&mask, conn);
            let cc = connected_components(&mask, conn);
            assert_eq!(cc.labels.data(), oracle.as_slice(), "mask {k} {conn:?}");
            let n = *oracle.iter().max().unwrap_or(&0) as usize;
            assert_eq!(cc.len(), n);
            for (id, comp) in cc.components.iter().enumerate() {
                let count = oracle.iter().filter(|&&l| l as usize == id + 1).count();
                assert_eq!(comp.voxel_count, count);
            }
        }
    }
}

#[test]
fn fill_holes_matches_border_flood_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dims = Dims::new(12, 10, 9).unwrap();
    for _ in 0..30 {
        let mask = random_mask(dims, 0.55, &mut rng);
        // background components (6-conn) not touching the border are holes
        let bg = mask.map(|b| !b);
        let labels = flood_fill_labels(&bg, Connectivity::Six);
        let mut touches = vec![false; dims.len() + 1];
        for (i, &l) in labels.iter().enumerate() {
            let (x, y, z) = dims.coords(i);
            let border = x == 0 || y == 0 || z == 0 || x + 1 == 12 || y + 1 == 10 || z + 1 == 9;
            if l > 0 && border {
                touches[l as usize] = true;
            }
        }
        let expected: Vec<bool> = labels
            .iter()
            .zip(mask.data())
            .map(|(&l, &m)| m || !touches[l as usize])
            .collect();
        assert_eq!(fill_holes(&mask).data(), expected.as_slice());
    }
}

fn points(m: &MaskVolume) -> Vec<[f64; 3]> {
    let d = m.dims();
    (0..d.len())
        .filter(|&i| m.data()[i])
        .map(|i| {
            let (x, y, z) = d.coords(i);
            [x as f64, y as f64, z as f64]
        })
        .collect()
}

fn dist2(a: [f64; 3], b: [f64; 3], s: [f64; 3]) -> f64 {
    (0..3).map(|k| ((a[k] - b[k]) * s[k]).powi(2)).sum()
}

fn directed_brute(a: &[[f64; 3]], b: &[[f64; 3]], s: [f64; 3]) -> Vec<f64> {
    a.iter()
        .map(|&p| b.iter().map(|&q| dist2(p, q, s)).fold(f64::INFINITY, f64::min).sqrt())
        .collect()
}

fn percentile_brute(mut d: Vec<f64>, q: f64) -> f64 {
    d.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (d.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    d[lo] + (d[hi] - d[lo]) * (pos - lo as f64)
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = Dims::new(11, 9, 7).unwrap();
    for spacing in [[1.0, 1.0, 1.0], [0.7, 1.3, 2.5]] {
        for _ in 0..10 {
            let m = random_mask(dims, 0.03, &mut rng);
            let pts = points(&m);
            let dt = squared_distance_transform(&m, spacing);
            for i in 0..dims.len() {
                let (x, y, z) = dims.coords(i);
                let p = [x as f64, y as f64, z as f64];
                let want = pts.iter().map(|&q| dist2(p, q, spacing)).fold(f64::INFINITY, f64::min);
                if want.is_infinite() {
                    assert!(dt[i].is_infinite());
                } else {
                    assert!((dt[i] - want).abs() <= 1e-9 * want.max(1.0), "{i}: {} vs {want}", dt[i]);
                }
            }
        }
    }
}

#[test]
fn hausdorff_matches_brute_force_on_32_cube() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = Dims::cube(32).unwrap();
    for k in 0..12 {
        let spacing = if k % 2 == 0 { [1.0; 3] } else { [0.8, 1.0, 1.6] };
        let a = random_mask(dims, 0.004, &mut rng);
        let b = random_mask(dims, 0.006, &mut rng);
        let (pa, pb) = (points(&a), points(&b));
        let (ab, ba) = (directed_brute(&pa, &pb, spacing), directed_brute(&pb, &pa, spacing));
        let max = ab.iter().chain(&ba).copied().fold(0.0, f64::max);
        let got = hausdorff(&a, &b, spacing, HausdorffMode::Max).unwrap().unwrap();
        assert!((got - max).abs() < 1e-9, "{got} vs {max}");
        let p95 = percentile_brute(ab, 95.0).max(percentile_brute(ba, 95.0));
        let got = hausdorff(&a, &b, spacing, HausdorffMode::Percentile(95.0)).unwrap().unwrap();
        assert!((got - p95).abs() < 1e-9, "{got} vs {p95}");
    }
}

#[test]
fn metric_identities_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let dims = Dims::new(10, 9, 8).unwrap();
    for _ in 0..100 {
        let a = random_mask(dims, rng.gen_range(0.01..0.9), &mut rng);
        let b = random_mask(dims, rng.gen_range(0.01..0.9), &mut rng);
        let d = dice(&a, &b).unwrap().unwrap();
        let j = jaccard(&a, &b).unwrap().unwrap();
        assert!((j - d / (2.0 - d)).abs() <= 1e-12);
        assert!((0.0..=1.0).contains(&d) && j <= d + 1e-15);
        assert_eq!(dice(&b, &a).unwrap(), Some(d));
        for mode in [HausdorffMode::Max, HausdorffMode::Percentile(95.0)] {
            let s = [1.0, 2.0, 0.5];
            assert_eq!(hausdorff(&a, &b, s, mode).unwrap(), hausdorff(&b, &a, s, mode).unwrap());
        }
        assert_eq!(hausdorff(&a, &a, [1.0; 3], HausdorffMode::Max).unwrap(), Some(0.0));
    }
}
