//! Prints the configuration of every ablation variant and checks that each
//! one runs a forward and backward pass.
//!
//! cargo run --release -p stmfnet --example variants

use stmfnet::losses::lap_loss_var;
use stmfnet::model::{make_variant_with, ForwardOptions, Preset, Stmfnet, VARIANTS};
use stmfnet::synth::translating_septuplets;
use stmfnet::trainkit::Batch;

fn main() -> stmfnet::Result<()> {
    let batch = Batch::new(&translating_septuplets(2, 32, 2.0, 0))?;
    for name in VARIANTS {
        let cfg = make_variant_with(name, Preset::Tiny)?;
        let model = Stmfnet::<f32>::new(&cfg, 0)?;
        let g = model.training_graph();
        let out = model.forward(&g, batch.refs(), ForwardOptions::default())?;
        let loss = lap_loss_var(&out.output, &batch.target, 3)?;
        let grads = g.param_grads(&loss.backward());
        let scales: Vec<i32> = out.flows.iter().map(|f| f.level.index()).collect();
        println!(
            "{name:<10} params {:>7}  scales {scales:?}  loss {:.4}  trainable tensors {}",
            model.count_parameters().total,
            loss.value().item(),
            grads.len()
        );
    }
    Ok(())
}
