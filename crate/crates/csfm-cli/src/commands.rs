//! Implementations of the CLI subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use csfm::imaging::{evaluate_dir, gf_weight_norms, super_resolve, ImagePlane, Upscaler};
use csfm::model::{CsfmConfig, CsfmNetwork, Initializer};
use csfm::train::{load_checkpoint, SrDataset, TrainConfig, Trainer};
use csfm::{Error, Result};

use crate::config::RunConfig;

/// Trains per the config file, writing `model.ckpt` and `train.log` under
/// the config's output directory. A zero-iteration config still writes the
/// freshly initialized checkpoint.
pub fn train(config_path: &Path, seed_override: Option<u64>) -> Result<()> {
    let mut rc = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        rc.seed = seed;
    }
    std::fs::create_dir_all(&rc.out_dir)
        .map_err(|e| Error::io(rc.out_dir.display().to_string(), e))?;
    // Snapshot the effective config (including any seed override) next to
    // the artifacts so the run can be reproduced from the output dir alone.
    let snapshot = rc.out_dir.join("run.cfg");
    std::fs::write(&snapshot, rc.serialize())
        .map_err(|e| Error::io(snapshot.display().to_string(), e))?;

    let dataset = SrDataset::load_dir(&rc.dataset_dir, rc.scale)?;
    let net = CsfmNetwork::<f32>::new(rc.model(), &mut Initializer::seeded(rc.seed))?;
    let requested = rc.train();
    // The schedule needs at least one iteration; a zero-iteration run never
    // reaches it (the loop below is bounded by the requested count).
    let effective = TrainConfig {
        total_iters: requested.total_iters.max(1),
        ..requested
    };
    let mut trainer = Trainer::new(net, dataset.rgb_mean(), effective)?;

    let ckpt_path = rc.out_dir.join("model.ckpt");
    let log_path = rc.out_dir.join("train.log");
    let mut log = BufWriter::new(
        File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?,
    );
    let mut log_error: Option<std::io::Error> = None;
    let result = trainer.run(&dataset, requested.total_iters, Some(&ckpt_path), &mut |s| {
        if log_error.is_none() {
            if let Err(e) = writeln!(log, "{}\t{}\t{}", s.iter, s.lr, s.loss) {
                log_error = Some(e);
            }
        }
    });
    if let Err(e) = log.flush() {
        log_error.get_or_insert(e);
    }
    if let Some(e) = log_error {
        return Err(Error::io(log_path.display().to_string(), e));
    }
    result?;
    println!(
        "trained {} iterations; checkpoint at {}",
        trainer.step_count(),
        ckpt_path.display()
    );
    Ok(())
}

/// Upscales one PNG with a trained checkpoint.
pub fn sr(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    let lr = ImagePlane::load_png(input)?;
    let hr = super_resolve(&lr, &loaded.net, loaded.rgb_mean)?;
    hr.save_png(output)?;
    println!(
        "{} -> {} ({}x{} -> {}x{})",
        input.display(),
        output.display(),
        lr.width(),
        lr.height(),
        hr.width(),
        hr.height()
    );
    Ok(())
}

/// Scores bicubic or network upscaling over a directory of high-resolution
/// PNGs, printing `image<TAB>psnr<TAB>ssim` rows and a trailing average.
pub fn eval(
    dir: &Path,
    bicubic: bool,
    checkpoint: Option<&Path>,
    scale: Option<usize>,
    crop: Option<usize>,
) -> Result<()> {
    let loaded;
    let (upscaler, scale) = match (bicubic, checkpoint) {
        (true, Some(_)) => {
            return Err(Error::Config(
                "choose either --bicubic or --checkpoint, not both".into(),
            ))
        }
        (false, None) => {
            return Err(Error::Config(
                "one of --bicubic or --checkpoint is required".into(),
            ))
        }
        (true, None) => {
            let s = scale.ok_or_else(|| {
                Error::Config("--scale is required with --bicubic".into())
            })?;
            (Upscaler::Bicubic, s)
        }
        (false, Some(path)) => {
            loaded = load_checkpoint(path)?;
            let s = loaded.net.config().scale;
            if let Some(requested) = scale {
                if requested != s {
                    return Err(Error::Config(format!(
                        "checkpoint upscales x{s} but --scale {requested} was requested"
                    )));
                }
            }
            (Upscaler::Network(&loaded.net, loaded.rgb_mean), s)
        }
    };
    let crop = crop.unwrap_or(scale);
    let report = evaluate_dir(dir, scale, crop, &upscaler)?;
    for s in &report.scores {
        println!("{}\t{:.4}\t{:.6}", s.name, s.psnr, s.ssim);
    }
    println!("average\t{:.4}\t{:.6}", report.avg_psnr, report.avg_ssim);
    Ok(())
}

/// Trains every (modules, blocks) combination under the config's budget and
/// prints `M<TAB>B<TAB>psnr` for each, scored on the config's dataset.
pub fn sweep(config_path: &Path, modules: &[usize], blocks: &[usize]) -> Result<()> {
    if modules.is_empty() || blocks.is_empty() {
        return Err(Error::Config(
            "--modules and --blocks must each list at least one value".into(),
        ));
    }
    let rc = RunConfig::load(config_path)?;
    let dataset = SrDataset::load_dir(&rc.dataset_dir, rc.scale)?;
    for &m in modules {
        for &b in blocks {
            let cfg = CsfmConfig {
                modules: m,
                blocks: b,
                ..rc.model()
            };
            cfg.validate()?;
            let net = CsfmNetwork::<f32>::new(cfg, &mut Initializer::seeded(rc.seed))?;
            let requested = rc.train();
            let effective = TrainConfig {
                total_iters: requested.total_iters.max(1),
                save_every: 0,
                ..requested
            };
            let mut trainer = Trainer::new(net, dataset.rgb_mean(), effective)?;
            trainer.run(&dataset, requested.total_iters, None, &mut |_| {})?;
            let upscaler = Upscaler::Network(trainer.net(), trainer.rgb_mean());
            let report = evaluate_dir(&rc.dataset_dir, rc.scale, rc.scale, &upscaler)?;
            println!("{m}\t{b}\t{:.4}", report.avg_psnr);
        }
    }
    Ok(())
}

/// Prints the normalized gate weight norms of a checkpoint, one module per
/// row: short-term (current-module) mean vs long-term (history) mean.
pub fn analyze_gf(checkpoint: &Path) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    let report = gf_weight_norms(&loaded.net)?;
    println!("module\tshort_term\tlong_term");
    for (i, m) in report.modules.iter().enumerate() {
        match m.long_term {
            Some(long) => println!("{}\t{:.6}\t{:.6}", i + 1, m.short_term, long),
            None => println!("{}\t{:.6}\t-", i + 1, m.short_term),
        }
    }
    Ok(())
}

/// Maps library errors onto the documented process exit codes.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Image { .. } | Error::Checkpoint(_) => 3,
        Error::Numeric { .. } | Error::Autodiff(_) | Error::Shape { .. } => 4,
    }
}

