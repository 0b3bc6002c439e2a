//! Trains a small model with the long-term preset on a generated dataset
//! and saves a checkpoint.
//!
//!     cargo run --release --example train_synthetic -- 300 /tmp/vtln-run

use std::path::PathBuf;
use std::time::Instant;

use vtln::model::VtlnConfig;
use vtln::motion::Split;
use vtln::synth::{make_dataset, DatasetTemplate};
use vtln::training::{format_log, save_checkpoint, train, TrainConfig, TrainingData};

fn main() -> vtln::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vtln-run"));
    std::fs::create_dir_all(&out).map_err(|e| vtln::Error::Usage(e.to_string()))?;

    let manifest = make_dataset(&out.join("data"), 4, 8, &DatasetTemplate::default(), 7)?;
    let data = TrainingData::from_sequences(&manifest.load_split(Split::Train)?)?;
    let mut config = TrainConfig::long_term(VtlnConfig::new(64, data.dim(), data.actions.len()));
    config.iterations = iterations;

    let start = Instant::now();
    let (ckpt, log) = train(config, data, |row| {
        if (row.iteration + 1) % 50 == 0 {
            println!(
                "iter {:>5}  lambda {:.2}  open {:.4}  closed {}",
                row.iteration + 1,
                row.lambda,
                row.open_loss,
                row.closed_loss.map_or("-".into(), |c| format!("{c:.4}"))
            );
        }
    })?;
    let head: f64 = log.iter().take(10).map(|r| r.open_loss).sum::<f64>() / log.len().min(10) as f64;
    let tail: f64 = log.iter().rev().take(10).map(|r| r.open_loss).sum::<f64>() / log.len().min(10) as f64;
    println!(
        "open loss {head:.4} -> {tail:.4} ({:.1}% lower) in {:.1?}",
        100.0 * (1.0 - tail / head),
        start.elapsed()
    );
    save_checkpoint(&ckpt, &out.join("checkpoint.json"))?;
    std::fs::write(out.join("train_log.csv"), format_log(&log)).map_err(|e| vtln::Error::Usage(e.to_string()))?;
    println!("checkpoint and log in {}", out.display());
    Ok(())
}
