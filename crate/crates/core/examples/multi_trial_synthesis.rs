//! Samples several futures from one seed and scores them against the truth
//! as mean and standard deviation over trials.
//!
//!     cargo run --release --example multi_trial_synthesis

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vtln::metrics::{euler_mse_at_slices, mean_std, npss, EvalSet, NpssOptions};
use vtln::model::{draw_eps, VtlnConfig};
use vtln::motion::Split;
use vtln::synth::{make_dataset, DatasetTemplate};
use vtln::training::{train, TrainConfig, TrainingData};

fn main() -> vtln::Result<()> {
    let dir = std::env::temp_dir().join("vtln-trials");
    let template = DatasetTemplate {
        channels: 12,
        ..DatasetTemplate::default()
    };
    let manifest = make_dataset(&dir, 2, 4, &template, 3)?;
    let data = TrainingData::from_sequences(&manifest.load_split(Split::Train)?)?;
    let norm = data.norm.clone();
    let mut config = TrainConfig::long_term(VtlnConfig::new(16, data.dim(), data.actions.len()));
    config.iterations = 100;
    config.batch_size = 8;
    let (ckpt, _) = train(config, data, |_| {})?;
    let model = ckpt.model();

    let test = &manifest.load_split(Split::Test)?[0];
    let action = ckpt.actions.iter().position(|a| *a == test.action).unwrap();
    let frames = norm.standardize(test.frames())?;
    let (seed_len, horizon) = (model.config.seed_frames, model.config.horizon);
    let seed = frames.slice(s![..seed_len, ..]);
    let truth = frames.slice(s![seed_len..seed_len + horizon, ..]).to_owned();

    let trials = 10;
    let eps = draw_eps(trials, model.config.hidden_top, &mut ChaCha8Rng::seed_from_u64(1));
    let preds = model.synthesize(seed, action, horizon, eps.view())?;
    let mut at_1s = Vec::new();
    let mut npss_all = Vec::new();
    for p in preds {
        let set = EvalSet::new(&test.action, vec![(truth.clone(), p)], 25.0)?;
        at_1s.push(euler_mse_at_slices(&set, &[1000.0], false)?[0].mean_distance);
        npss_all.push(npss(&set, 0, horizon, NpssOptions::default())?.npss);
    }
    let (m, sd) = mean_std(&at_1s);
    println!("{trials} trials, Euler distance at 1000 ms: {m:.4} ± {sd:.4}");
    let (m, sd) = mean_std(&npss_all);
    println!("{trials} trials, NPSS over 4 s: {m:.4} ± {sd:.4}");
    Ok(())
}
