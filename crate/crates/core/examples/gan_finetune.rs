//! Short distortion training followed by adversarial fine-tuning, with the
//! discriminator statistics of every step.
//!
//! cargo run --release -p stmfnet --example gan_finetune -- [gan_steps]

use stmfnet::losses::DiscriminatorConfig;
use stmfnet::model::{make_variant_with, Preset, Stmfnet};
use stmfnet::synth::translating_septuplets;
use stmfnet::trainkit::{train_distortion_stage, GanTrainer, TrainConfig};

fn main() -> stmfnet::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let data = translating_septuplets(8, 32, 2.0, 11);
    let model = Stmfnet::<f32>::new(&make_variant_with("full", Preset::Tiny)?, 0)?;
    let cfg = TrainConfig {
        crop: 0,
        batch_size: 4,
        ..TrainConfig::tiny()
    };
    let (outcome, _) = train_distortion_stage(&model, &data, &data[..2], &cfg, None, None)?;
    println!("distortion stage: {} steps, best val PSNR {:?}", outcome.state.step, outcome.state.best_val);

    let mut gan = GanTrainer::new(&model, &DiscriminatorConfig::tiny(), cfg)?;
    gan.resume(&outcome.last)?;
    for i in 0..steps {
        let half = &data[(i % 2) * 4..(i % 2) * 4 + 4];
        let s = gan.step(half)?;
        println!(
            "step {i:3} l_lap {:.4} l_adv {:.4} l_d {:.4} D(real) {:.3} D(fake) {:.3}",
            s.l_lap, s.l_adv, s.l_d, s.d_real, s.d_fake
        );
    }
    Ok(())
}
