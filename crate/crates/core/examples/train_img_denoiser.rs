//! Trains the toy image denoiser on a single-mode synthetic dataset and
//! prints the smoothed loss curve.

use videostudio::cond::train::single_mode_dataset;
use videostudio::cond::{img_train_step, DenoiserConfig, ImgDenoiser, TrainConfig, TrainMode};
use videostudio::numeric::AdamWState;
use videostudio::rng::Rng;
use videostudio::sampler::NoiseSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(7);
    let config = DenoiserConfig::default();
    let mut model = ImgDenoiser::new(config, &mut rng)?;
    model.set_train_mode(TrainMode::Full);
    let data = single_mode_dataset(4, 8, 8, config.ctx_channels, 64, &mut rng)?;
    let schedule = NoiseSchedule::default();
    let train = TrainConfig::default();
    let mut state = AdamWState::new();
    let mut losses = Vec::new();
    for step in 0..200 {
        let batch: Vec<_> = (0..4).map(|i| data[(step * 4 + i) % data.len()].clone()).collect();
        losses.push(img_train_step(&mut model, &batch, &schedule, &train, &mut state, &mut rng)?);
    }
    for (i, chunk) in losses.chunks(20).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:>3}-{:>3}: loss {mean:.4}", i * 20 + 1, i * 20 + chunk.len());
    }
    Ok(())
}
