//! Trains the built-in pyramid flow estimator on synthetic translations
//! and checks it on a static pair and a (3, 0) px shift.
//!
//! cargo run --release -p stmfnet --example flow_pretrain -- [steps] [lr]

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmfnet::blfnet::{pretrain_on_translations, FlowEstimator, FlowPretrainConfig, PyramidFlow, PyramidFlowConfig};
use stmfnet::synth::Texture;
use stmfnet::FlowField;
use stmfnet_tensor::{Graph, ParamBuilder, ParamStore, Var};

fn main() -> stmfnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(FlowPretrainConfig::default().steps);
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(FlowPretrainConfig::default().lr);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = PyramidFlowConfig {
        levels: 3,
        search_radius: 4,
        widths: vec![8, 12, 16],
        decoder: vec![16, 8],
    };
    let est = PyramidFlow::<f32>::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg)?;
    let t0 = Instant::now();
    let pre = FlowPretrainConfig {
        steps,
        lr,
        ..FlowPretrainConfig::default()
    };
    let losses = pretrain_on_translations(&est, store.params(), &pre)?;
    for (i, chunk) in losses.chunks(25).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:4}.. mean epe {mean:.4}", i * 25);
    }
    println!("trained in {:.0}s", t0.elapsed().as_secs_f64());

    let mut held_out = ChaCha8Rng::seed_from_u64(99);
    let g = Graph::inference();
    for (name, d) in [("static", (0.0, 0.0)), ("shift (3,0)", (3.0, 0.0))] {
        let tex = Texture::random(&mut held_out);
        let a = Var::constant(tex.render(64, 64, 0.0, 0.0).to_array());
        let b = Var::constant(tex.render(64, 64, d.0, d.1).to_array());
        let f = FlowField::from_array(est.estimate(&g, &a, &b)?.value(), 0)?;
        let (mx, my) = f.mean();
        let mag = f.mean_magnitude();
        println!("{name}: mean flow ({mx:.3}, {my:.3}), mean |flow| {mag:.3}");
    }
    Ok(())
}
