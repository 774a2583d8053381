//! Overfits the tiny preset on eight synthetic septuplets and compares the
//! result with plain frame averaging.
//!
//! cargo run --release -p stmfnet --example overfit -- [steps] [lr] [speed]

use std::time::Instant;

use stmfnet::evalkit::psnr;
use stmfnet::model::{make_variant_with, Preset, Stmfnet};
use stmfnet::synth::translating_septuplets;
use stmfnet::trainkit::{TrainConfig, Trainer};
use stmfnet::Frame;

fn average(a: &Frame, b: &Frame) -> Frame {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x + y)).collect();
    Frame::new(a.height(), a.width(), data).unwrap()
}

fn main() -> stmfnet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5e-3);
    let speed: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let data = translating_septuplets(8, 64, speed, 7);
    let model = Stmfnet::<f32>::new(&make_variant_with("full", Preset::Tiny)?, 0)?;
    let cfg = TrainConfig {
        lr,
        batch_size: 4,
        epochs: steps.div_ceil(2),
        freeze_epochs: 0,
        crop: 0,
        lap_levels: 5,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, cfg)?;
    let t0 = Instant::now();
    let mut first = None;
    let mut last = 0.0;
    for step in 0..steps {
        let epoch = step / 2;
        trainer.set_epoch(epoch);
        let half = if step % 2 == 0 { &data[..4] } else { &data[4..] };
        last = trainer.step(half)?;
        first.get_or_insert(last);
        if step % 20 == 0 {
            println!("step {step:4} l_lap {last:.5} ({:.0}s)", t0.elapsed().as_secs_f64());
        }
    }
    let first = first.unwrap_or(0.0);
    let (mut base, mut ours) = (0.0, 0.0);
    for ex in &data {
        base += psnr(&average(&ex.inputs[1], &ex.inputs[2]), &ex.target)?;
        ours += psnr(&model.interpolate_batch(std::slice::from_ref(&ex.inputs))?[0], &ex.target)?;
    }
    let n = data.len() as f64;
    println!(
        "loss {first:.5} -> {last:.5} ({:.1}% drop); PSNR average {:.2} dB, model {:.2} dB; {:.0}s",
        100.0 * (1.0 - last / first),
        base / n,
        ours / n,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
