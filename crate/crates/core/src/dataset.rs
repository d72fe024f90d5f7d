//! Offline dataset generation: NIfTI pairs plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::nifti::{write_labels, write_scalar};
use crate::pipeline::{check_sample, generate_sample};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub seed: u64,
    pub image: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub count: u64,
    pub config: GeneratorConfig,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

pub fn image_file_name(index: u64) -> String {
    format!("{index:05}_image.nii.gz")
}

pub fn label_file_name(index: u64) -> String {
    format!("{index:05}_label.nii.gz")
}

/// Writes samples `0..count` of the stream `cfg.seed` into `out_dir`.
///
/// Each sample depends only on `(cfg.seed, index)`, so the bytes written do
/// not depend on `workers`.
pub fn generate_dataset(
    cfg: &GeneratorConfig,
    count: u64,
    out_dir: impl AsRef<Path>,
    workers: usize,
) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let next = AtomicU64::new(0);
    let failure: Mutex<Option<(u64, Error)>> = Mutex::new(None);
    let seeds = Mutex::new(vec![0u64; count as usize]);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= count || failure.lock().unwrap().is_some() {
            return;
        }
        if let Err(e) = write_one(cfg, i, out_dir).map(|s| seeds.lock().unwrap()[i as usize] = s) {
            let mut f = failure.lock().unwrap();
            // report the lowest failing index so errors are reproducible
            if f.as_ref().is_none_or(|(j, _)| i < *j) {
                *f = Some((i, e));
            }
        }
    };
    let workers = workers.clamp(1, count.max(1) as usize);
    thread::scope(|s| {
        for _ in 1..workers {
            s.spawn(work);
        }
        work();
    });
    if let Some((_, e)) = failure.into_inner().unwrap() {
        return Err(e);
    }

    let samples = seeds
        .into_inner()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, seed)| ManifestEntry {
            index: i as u64,
            seed,
            image: image_file_name(i as u64),
            label: label_file_name(i as u64),
        })
        .collect();
    let manifest = Manifest {
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        count,
        config: cfg.clone(),
        samples,
    };
    let path = out_dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn write_one(cfg: &GeneratorConfig, index: u64, out_dir: &Path) -> Result<u64> {
    let sample = generate_sample(cfg, cfg.seed, index)?;
    check_sample(&sample)?;
    let img: PathBuf = out_dir.join(image_file_name(index));
    write_scalar(&sample.image, img)?;
    write_labels(&sample.labels, out_dir.join(label_file_name(index)))?;
    Ok(sample.seed)
}
