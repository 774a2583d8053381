//! Median inference time and parameter count per variant at one size.
//!
//! cargo run --release -p stmfnet --example profile -- [WxH] [reps]

use stmfnet::cli::parse_resolution;
use stmfnet::evalkit::profile;
use stmfnet::model::{make_variant_with, Preset, Stmfnet, VARIANTS};

fn main() -> stmfnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let res = parse_resolution(args.first().map(String::as_str).unwrap_or("128x96"))?;
    let reps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for name in VARIANTS {
        let model = Stmfnet::<f32>::new(&make_variant_with(name, Preset::Tiny)?, 0)?;
        println!("{name:<10} {}", profile(&model, res, reps, None)?.line());
    }
    Ok(())
}
