//! `headsynth`: dataset generation, sample streaming, mask post-processing
//! and evaluation.
//!
//! Exit status: 0 on success, 1 on I/O and other runtime failures, 2 on
//! invalid input (usage, config or file format), 3 when `postprocess` finds
//! no brain voxel (no output file is written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use headsynth_core::dataset::generate_dataset;
use headsynth_core::metrics::{evaluate_pair, HausdorffMode};
use headsynth_core::nifti::{read_nifti, write_mask};
use headsynth_core::postprocess::{argmax_labels, select_brain_mask};
use headsynth_core::stream::{ServerOptions, StreamServer};
use headsynth_core::{Error, GeneratorConfig, Label, LabelVolume};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID_INPUT: u8 = 2;
const EXIT_NO_BRAIN: u8 = 3;

#[derive(Parser)]
#[command(name = "headsynth", version, about = "Synthetic labeled head volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write COUNT image/label pairs and a manifest into OUT.
    Generate {
        /// TOML config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3000)]
        count: u64,
        /// Master seed; overrides the config value.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; output bytes do not depend on this.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Serve freshly generated samples over TCP until killed.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Samples generated ahead of requests, per connection.
        #[arg(long, default_value_t = 4)]
        prefetch: usize,
    },
    /// Turn a 3-class probability volume (4D) or label volume (3D) into a
    /// single filled brain mask.
    Postprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against references with matching file names.
    /// Voxels equal to 1 are foreground in both.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = HausdorffArg::Max)]
        hausdorff: HausdorffArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HausdorffArg {
    Max,
    P95,
}

impl From<HausdorffArg> for HausdorffMode {
    fn from(h: HausdorffArg) -> Self {
        match h {
            HausdorffArg::Max => HausdorffMode::Max,
            HausdorffArg::P95 => HausdorffMode::Percentile(95.0),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            config,
            count,
            seed,
            out,
            workers,
        } => generate(config.as_deref(), count, seed, &out, workers),
        Command::Serve {
            config,
            seed,
            listen,
            prefetch,
        } => serve(config.as_deref(), seed, &listen, prefetch),
        Command::Postprocess { input, out } => postprocess(&input, &out),
        Command::Evaluate {
            pred,
            gt,
            hausdorff,
        } => evaluate(&pred, &gt, hausdorff.into()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<Error>(),
                    Some(Error::Config(_) | Error::Format { .. } | Error::InvalidArgument(_))
                )
            });
            ExitCode::from(if invalid { EXIT_INVALID_INPUT } else { EXIT_RUNTIME })
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<GeneratorConfig> {
    let mut cfg = match path {
        Some(p) => GeneratorConfig::from_file(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn generate(
    config: Option<&Path>,
    count: u64,
    seed: Option<u64>,
    out: &Path,
    workers: Option<usize>,
) -> anyhow::Result<ExitCode> {
    let cfg = load_config(config, seed)?;
    let workers = workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let manifest = generate_dataset(&cfg, count, out, workers)
        .with_context(|| format!("generating into {}", out.display()))?;
    let summary = serde_json::json!({
        "out": out,
        "count": manifest.count,
        "master_seed": manifest.master_seed,
        "config_hash": manifest.config_hash,
    });
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn serve(
    config: Option<&Path>,
    seed: Option<u64>,
    listen: &str,
    prefetch: usize,
) -> anyhow::Result<ExitCode> {
    let cfg = load_config(config, seed)?;
    let master = cfg.seed;
    let server = StreamServer::bind(listen, cfg, master, ServerOptions { prefetch })?;
    // tests and scripts read the bound address (port 0 picks a free one)
    println!("listening on {}", server.local_addr()?);
    server.run()?;
    Ok(ExitCode::SUCCESS)
}

fn postprocess(input: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let img = read_nifti(input).with_context(|| format!("reading {}", input.display()))?;
    let (spacing, affine) = (img.header.pixdim, img.header.affine);
    let labels: LabelVolume = if img.header.dims[3] > 1 {
        argmax_labels(&img.into_class_probs()?)?
            .with_spacing(spacing.map(|s| if s.is_finite() && s > 0.0 { s } else { 1.0 }))?
            .with_affine(affine)
    } else {
        img.into_labels()?
    };
    match select_brain_mask(&labels)? {
        Some(mask) => {
            write_mask(&mask, out).with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        None => {
            eprintln!("no brain voxel in {}; nothing written", input.display());
            Ok(ExitCode::from(EXIT_NO_BRAIN))
        }
    }
}

/// File stem without `.nii` / `.nii.gz`, or `None` for other files.
fn volume_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .map(str::to_owned)
}

fn list_volumes(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if let Some(id) = volume_id(&path) {
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Serialize)]
struct PairRecord<'a> {
    id: &'a str,
    dice: Option<f64>,
    jaccard: Option<f64>,
    hausdorff_mm: Option<f64>,
}

#[derive(Serialize)]
struct WarningRecord<'a> {
    id: &'a str,
    warning: String,
}

#[derive(Serialize)]
struct Summary {
    pairs: usize,
    warnings: usize,
    mean_dice: Option<f64>,
    mean_jaccard: Option<f64>,
    mean_hausdorff_mm: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn foreground(path: &Path) -> headsynth_core::Result<headsynth_core::MaskVolume> {
    Ok(read_nifti(path)?.into_labels()?.class_mask(Label::Brain))
}

fn evaluate(pred: &Path, gt: &Path, mode: HausdorffMode) -> anyhow::Result<ExitCode> {
    let preds = list_volumes(pred)?;
    let gts = list_volumes(gt)?;
    let (mut dice, mut jac, mut hd) = (Vec::new(), Vec::new(), Vec::new());
    let mut warnings = 0;
    let mut pairs = 0;
    let warn = |id: &str, warning: String| {
        println!("{}", serde_json::to_string(&WarningRecord { id, warning }).unwrap());
    };
    for (id, p) in &preds {
        let Some((_, g)) = gts.iter().find(|(gid, _)| gid == id) else {
            warnings += 1;
            warn(id, "no ground truth with this id".into());
            continue;
        };
        let scored = foreground(p).and_then(|pm| {
            let gm = foreground(g)?;
            let spacing = gm.spacing().map(f64::from);
            evaluate_pair(&pm, &gm, spacing, mode)
        });
        match scored {
            Ok(r) => {
                pairs += 1;
                dice.extend(r.dice);
                jac.extend(r.jaccard);
                hd.extend(r.hausdorff);
                let rec = PairRecord {
                    id,
                    dice: r.dice,
                    jaccard: r.jaccard,
                    hausdorff_mm: r.hausdorff,
                };
                println!("{}", serde_json::to_string(&rec).unwrap());
            }
            Err(e) => {
                warnings += 1;
                warn(id, e.to_string());
            }
        }
    }
    for (id, _) in &gts {
        if !preds.iter().any(|(pid, _)| pid == id) {
            warnings += 1;
            warn(id, "no prediction with this id".into());
        }
    }
    let summary = Summary {
        pairs,
        warnings,
        mean_dice: mean(&dice),
        mean_jaccard: mean(&jac),
        mean_hausdorff_mm: mean(&hd),
    };
    println!(
        "{}",
        serde_json::json!({ "summary": summary })
    );
    Ok(ExitCode::SUCCESS)
}
