//! Renders the mean multi-flow of every scale as colour-wheel images.
//!
//! cargo run --release -p stmfnet --example flow_maps -- [out_dir]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmfnet::evalkit::{mean_flow_maps, visualize_mean_flows};
use stmfnet::model::{make_variant_with, InterpolationRequest, Preset, Stmfnet};
use stmfnet::synth::{translating_sequence, Texture};

fn main() -> stmfnet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "flow_maps".into());
    let tex = Texture::random(&mut ChaCha8Rng::seed_from_u64(5));
    let frames = translating_sequence(&tex, 48, 64, 4, (2.0, 1.0));
    let model = Stmfnet::<f32>::new(&make_variant_with("full", Preset::Tiny)?, 0)?;
    let req = InterpolationRequest::new(&frames)?;
    for (level, n, f) in mean_flow_maps(&model, &req)? {
        let (mx, my) = f.mean();
        println!("scale {:2} towards I{n}: mean flow ({mx:.3}, {my:.3})", level.index());
    }
    for p in visualize_mean_flows(&model, &req, std::path::Path::new(&out))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
