//! Prints learnable parameter counts per module for a preset and variant.
//!
//! `cargo run --example param_report -- [default|tiny] [variant]`

use stmfnet::model::{make_variant_with, Preset, Stmfnet};

fn main() -> stmfnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = Preset::parse(args.first().map(String::as_str).unwrap_or("default"))?;
    let variant = args.get(1).map(String::as_str).unwrap_or("full");
    let model = Stmfnet::<f32>::new(&make_variant_with(variant, preset)?, 0)?;
    let report = model.count_parameters();
    for (module, n) in &report.modules {
        println!("{module:<20} {n:>12}");
    }
    println!("{:<20} {:>12}", "total", report.total);
    Ok(())
}
