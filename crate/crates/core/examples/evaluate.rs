//! Writes a small synthetic benchmark, splits it into quintuplets and
//! scores a fresh tiny model, printing the JSON summary.
//!
//! cargo run --release -p stmfnet --example evaluate

use stmfnet::data::extract_eval_quintuplets;
use stmfnet::evalkit::{evaluate_dataset, EvalOptions, CSV_FILE};
use stmfnet::model::{make_variant_with, Preset, Stmfnet};
use stmfnet::synth::write_translating_dataset;

fn main() -> stmfnet::Result<()> {
    let root = std::env::temp_dir().join("stmfnet-evaluate-example");
    let data = root.join("data");
    write_translating_dataset(&data, 3, 9, (48, 48), 2.0, 1)?;
    let index = extract_eval_quintuplets(&data)?;
    let model = Stmfnet::<f32>::new(&make_variant_with("full", Preset::Tiny)?, 0)?;
    let summary = evaluate_dataset(&model, &index, "synthetic", &root.join("report"), &EvalOptions { timing: true })?;
    println!("{:#}", summary.to_json());
    println!("per-frame rows in {}", root.join("report").join(CSV_FILE).display());
    Ok(())
}
