//! Multiplies the frame rate of a synthetic clip by 2, 4 and 8 with an
//! untrained tiny model and writes the 4x result as PNGs.
//!
//! cargo run --release -p stmfnet --example interpolate -- [out_dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmfnet::data::frame_file_name;
use stmfnet::model::{make_variant_with, recursive_interpolate, Preset, Stmfnet};
use stmfnet::synth::{translating_sequence, Texture};

fn main() -> stmfnet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "interpolated".into());
    let tex = Texture::random(&mut ChaCha8Rng::seed_from_u64(3));
    let clip = translating_sequence(&tex, 48, 64, 5, (1.5, -0.5));
    let model = Stmfnet::<f32>::new(&make_variant_with("full", Preset::Tiny)?, 0)?;
    for factor in [2, 4, 8] {
        let frames = recursive_interpolate(&model, &clip, factor)?;
        println!("x{factor}: {} frames -> {}", clip.len(), frames.len());
        if factor == 4 {
            std::fs::create_dir_all(&out).map_err(|e| stmfnet::Error::io(&out, e))?;
            for (i, f) in frames.iter().enumerate() {
                f.save_png(&std::path::Path::new(&out).join(frame_file_name(i)))?;
            }
        }
    }
    println!("4x frames written to {out}/");
    Ok(())
}
