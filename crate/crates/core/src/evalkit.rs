//! Quality metrics, dataset evaluation, runtime profiling and mean-flow
//! visualisation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use stmfnet_tensor::{Graph, Var};

use crate::backbone::Level;
use crate::data::{load_example, SequenceIndex, TrainingExample};
use crate::error::{Error, Result};
use crate::frame::{FlowField, Frame};
use crate::model::{ForwardOptions, InterpolationRequest, ModelConfig, ParameterReport, Stmfnet, PAD_MULTIPLE};

/// Finite stand-in for an infinite PSNR when averaging validation scores.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 1e-4; // (0.01 · 1)²
const C2: f64 = 9e-4; // (0.03 · 1)²
pub const CSV_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const WARMUP_RUNS: usize = 3;

fn same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "frames differ in size: {}×{} vs {}×{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )))
    }
}

/// `10·log10(1/MSE)` over all channels with peak 1; identical frames give
/// `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Text form used in reports; infinity is written as `inf`.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn metric_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_infinite() && v > 0.0 {
        json!("inf")
    } else {
        Value::Null
    }
}

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable Gaussian filter of a row-major plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn plane(f: &Frame, c: usize) -> Vec<f64> {
    f.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect()
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, unit range; averaged over valid windows and channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::Validation(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let (x, y) = (plane(a, c), plane(b, c));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
        let n = mx.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// One scored quintuplet.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub dataset: String,
    pub sequence: String,
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub runtime: Option<f64>,
    /// Set when the record could not be scored.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub dataset: String,
    pub count: usize,
    pub failed: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub records: Vec<MetricRecord>,
}

impl EvalSummary {
    pub fn to_json(&self) -> Value {
        json!({
            "dataset": self.dataset,
            "count": self.count,
            "failed": self.failed,
            "mean_psnr": metric_json(self.mean_psnr),
            "mean_ssim": metric_json(self.mean_ssim),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Record per-frame wall time (makes reports run-dependent).
    pub timing: bool,
}

/// Scores `interp` on every window of `index`. Records that fail to load
/// or interpolate are flagged and skipped in the means.
pub fn evaluate_with(
    index: &SequenceIndex,
    dataset: &str,
    opts: &EvalOptions,
    mut interp: impl FnMut(&TrainingExample) -> Result<Frame>,
) -> EvalSummary {
    let mut records = Vec::with_capacity(index.len());
    for entry in &index.entries {
        let frame = entry.start + index.mode.target_offset();
        let mut rec = MetricRecord {
            dataset: dataset.to_string(),
            sequence: entry.sequence.clone(),
            frame,
            psnr: f64::NAN,
            ssim: f64::NAN,
            runtime: None,
            error: None,
        };
        let scored = load_example(index, entry).and_then(|ex| {
            let t0 = Instant::now();
            let out = interp(&ex)?;
            let dt = t0.elapsed().as_secs_f64();
            Ok((psnr(&out, &ex.target)?, ssim(&out, &ex.target)?, dt))
        });
        match scored {
            Ok((p, s, dt)) => {
                rec.psnr = p;
                rec.ssim = s;
                rec.runtime = opts.timing.then_some(dt);
            }
            Err(e) => {
                log::warn!("{} frame {frame}: {e}", entry.sequence);
                rec.error = Some(e.to_string());
            }
        }
        records.push(rec);
    }
    summarize(dataset, records)
}

fn summarize(dataset: &str, records: Vec<MetricRecord>) -> EvalSummary {
    let ok: Vec<&MetricRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mean = |f: fn(&MetricRecord) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    EvalSummary {
        dataset: dataset.to_string(),
        count: ok.len(),
        failed: records.len() - ok.len(),
        mean_psnr: mean(|r| r.psnr),
        mean_ssim: mean(|r| r.ssim),
        records,
    }
}

/// Writes `metrics.csv` and `summary.json` under `out_dir`.
pub fn write_report(summary: &EvalSummary, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join(CSV_FILE);
    let csv_err = |e: csv::Error| Error::Io {
        path: csv_path.clone(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(["dataset", "sequence", "frame", "psnr", "ssim", "runtime"])
        .map_err(csv_err)?;
    for r in &summary.records {
        let (p, s) = match r.error {
            Some(_) => ("failed".to_string(), "failed".to_string()),
            None => (format_metric(r.psnr), format_metric(r.ssim)),
        };
        let rt = r.runtime.map(|t| format!("{t:.6}")).unwrap_or_default();
        w.write_record([r.dataset.as_str(), &r.sequence, &r.frame.to_string(), &p, &s, &rt])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary.to_json()).expect("summary is valid JSON");
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))
}

/// Evaluates a model on a quintuplet index and writes the report.
pub fn evaluate_dataset(
    model: &Stmfnet<f32>,
    index: &SequenceIndex,
    dataset: &str,
    out_dir: &Path,
    opts: &EvalOptions,
) -> Result<EvalSummary> {
    let summary = evaluate_with(index, dataset, opts, |ex| {
        Ok(model.interpolate_batch(std::slice::from_ref(&ex.inputs))?.remove(0))
    });
    write_report(&summary, out_dir)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub width: usize,
    pub height: usize,
    pub repetitions: usize,
    /// Median seconds per interpolated frame.
    pub seconds: f64,
    pub parameters: ParameterReport,
    pub estimated_bytes: u64,
}

impl ProfileReport {
    pub fn line(&self) -> String {
        format!(
            "{}x{} reps={} median={:.4}s params={} ({:.2}M)",
            self.width,
            self.height,
            self.repetitions,
            self.seconds,
            self.parameters.total,
            self.parameters.total as f64 / 1e6
        )
    }
}

/// Rough peak-memory bound for one inference at `h×w`, from the widest
/// activations at each resolution (f32, with im2col scratch).
pub fn estimate_inference_bytes(cfg: &ModelConfig, h: usize, w: usize) -> u64 {
    let ph = h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    let pw = w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    let p = (ph * pw) as f64;
    let mut per_px = 0.0;
    if cfg.mifnet_on {
        let b = &cfg.backbone;
        per_px += 8.0 * b.stem as f64;
        for (i, &wd) in b.widths.iter().enumerate() {
            per_px += 8.0 * wd as f64 / 4f64.powi(i as i32 + 1);
        }
        for lv in &cfg.levels {
            let area = match lv {
                Level::Up => 4.0,
                Level::Full => 1.0,
                Level::Down => 0.25,
            };
            let n = cfg.n_flows as f64;
            per_px += area * (6.0 * (cfg.head_hidden as f64 + n) + 9.0 * cfg.head_hidden as f64 + 12.0 * n);
        }
    }
    if cfg.blfnet_on {
        let e = &cfg.estimator;
        let cost = ((2 * e.search_radius + 1) as f64).powi(2);
        for (i, &wd) in e.widths.iter().enumerate() {
            let dec: usize = e.decoder.iter().sum();
            per_px += (2.0 * wd as f64 + cost + 9.0 * (cost + wd as f64) + dec as f64) / 4f64.powi(i as i32 + 1);
        }
    }
    for (i, &wd) in cfg.fusion_widths.iter().enumerate() {
        per_px += 30.0 * wd as f64 / 4f64.powi(i as i32);
    }
    if cfg.tenet_on {
        for (i, &wd) in cfg.tenet.widths.iter().enumerate() {
            per_px += 5.0 * 30.0 * wd as f64 / 4f64.powi(i as i32 + 1);
        }
    }
    (2.0 * 4.0 * p * per_px) as u64
}

/// `MemAvailable` from `/proc/meminfo`, when readable.
pub fn available_memory() -> Option<u64> {
    let text = fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Median wall time per frame after the warm-up runs. Fails with a
/// capacity error when the estimated footprint exceeds `memory_limit`
/// (defaults to the available memory).
pub fn profile(
    model: &Stmfnet<f32>,
    (width, height): (usize, usize),
    repetitions: usize,
    memory_limit: Option<u64>,
) -> Result<ProfileReport> {
    if repetitions == 0 || width == 0 || height == 0 {
        return Err(Error::Validation("profiling needs a positive size and repetition count".into()));
    }
    let estimated_bytes = estimate_inference_bytes(model.config(), height, width);
    if let Some(limit) = memory_limit.or_else(available_memory) {
        if estimated_bytes > limit {
            return Err(Error::Capacity(format!(
                "{width}x{height} needs about {:.1} GiB, only {:.1} GiB available",
                estimated_bytes as f64 / (1u64 << 30) as f64,
                limit as f64 / (1u64 << 30) as f64
            )));
        }
    }
    let frames: [Frame; 4] = std::array::from_fn(|k| {
        Frame::from_fn(height, width, |y, x| {
            let v = ((x * 7 + y * 3 + k * 11) % 97) as f32 / 96.0;
            [v, 1.0 - v, 0.5]
        })
    });
    let quads = [frames];
    for _ in 0..WARMUP_RUNS {
        model.interpolate_batch(&quads)?;
    }
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t0 = Instant::now();
        model.interpolate_batch(&quads)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let m = times.len();
    let seconds = if m % 2 == 1 { times[m / 2] } else { 0.5 * (times[m / 2 - 1] + times[m / 2]) };
    Ok(ProfileReport {
        width,
        height,
        repetitions,
        seconds,
        parameters: model.count_parameters(),
        estimated_bytes,
    })
}

const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

/// The 55-entry flow colour wheel (RY, YG, GC, CB, BM, MR).
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(55);
    let ramps: [([f64; 3], [f64; 3]); 6] = [
        ([1., 0., 0.], [0., 1., 0.]),
        ([1., 1., 0.], [-1., 0., 0.]),
        ([0., 1., 0.], [0., 0., 1.]),
        ([0., 1., 1.], [0., -1., 0.]),
        ([0., 0., 1.], [1., 0., 0.]),
        ([1., 0., 1.], [0., 0., -1.]),
    ];
    for (n, (base, dir)) in WHEEL_SEGMENTS.iter().zip(ramps) {
        for i in 0..*n {
            let t = i as f64 / *n as f64;
            wheel.push(std::array::from_fn(|c| base[c] + dir[c] * t));
        }
    }
    wheel
}

fn flow_color(wheel: &[[f64; 3]], u: f64, v: f64) -> [f32; 3] {
    let rad = (u * u + v * v).sqrt();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (wheel.len() - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == wheel.len() { 0 } else { k0 + 1 };
    let f = fk - k0 as f64;
    std::array::from_fn(|c| {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
        col as f32
    })
}

/// Colour-codes a flow field, normalised by its largest magnitude (zero
/// flow renders white).
pub fn render_flow(flow: &FlowField) -> Frame {
    let max = flow
        .data()
        .chunks_exact(2)
        .map(|p| ((p[0] as f64).powi(2) + (p[1] as f64).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let wheel = color_wheel();
    Frame::from_fn(flow.height(), flow.width(), |y, x| {
        let (u, v) = flow.at(y, x);
        flow_color(&wheel, u as f64 * scale, v as f64 * scale)
    })
}

/// Nearest-neighbour resize of a flow map.
pub fn rescale_nearest(flow: &FlowField, height: usize, width: usize) -> FlowField {
    let mut out = FlowField::zeros(height, width);
    for y in 0..height {
        let sy = (y * flow.height() / height).min(flow.height() - 1);
        for x in 0..width {
            let sx = (x * flow.width() / width).min(flow.width() - 1);
            out.set(y, x, flow.at(sy, sx));
        }
    }
    out
}

fn crop_flow(flow: &FlowField, height: usize, width: usize) -> FlowField {
    let mut out = FlowField::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            out.set(y, x, flow.at(y, x));
        }
    }
    out
}

/// Mean flow maps `Ḡ^l_{t→n}` for every enabled scale, at the input
/// resolution.
pub fn mean_flow_maps(model: &Stmfnet<f32>, req: &InterpolationRequest) -> Result<Vec<(Level, usize, FlowField)>> {
    if !model.config().mifnet_on {
        return Err(Error::Validation("mean-flow maps need the multi-flow branch".into()));
    }
    let f = req.frames();
    let (h, w) = (f[0].height(), f[0].width());
    let vars: Vec<Var<f32>> = f.iter().map(|fr| Var::constant(fr.to_array())).collect();
    let g = Graph::inference();
    let out = model.forward(&g, [&vars[0], &vars[1], &vars[2], &vars[3]], ForwardOptions::default())?;
    let (ph, pw) = out.padded;
    let mut maps = Vec::new();
    for lf in &out.flows {
        for (n, mf) in [(1, &lf.g1), (2, &lf.g2)] {
            let full = FlowField::from_array(mf.mean_flow().value(), 0)?;
            // Keep the region that covers the unpadded frame.
            let ch = (h * full.height()).div_ceil(ph);
            let cw = (w * full.width()).div_ceil(pw);
            let cropped = crop_flow(&full, ch, cw);
            maps.push((lf.level, n, rescale_nearest(&cropped, h, w)));
        }
    }
    Ok(maps)
}

pub fn mean_flow_file_name(level: Level, n: usize) -> String {
    format!("meanflow_l{}_t{n}.png", level.index())
}

/// Renders every mean flow map to `out_dir`, returning the written paths.
pub fn visualize_mean_flows(model: &Stmfnet<f32>, req: &InterpolationRequest, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let maps = mean_flow_maps(model, req)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    maps.iter()
        .map(|(level, n, flow)| {
            let p = out_dir.join(mean_flow_file_name(*level, *n));
            render_flow(flow).save_png(&p)?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    /// Direct windowed statistics at every valid position.
    fn ssim_brute(a: &Frame, b: &Frame) -> f64 {
        let k = gaussian_window();
        let (h, w) = (a.height(), a.width());
        let mut total = 0.0;
        for c in 0..3 {
            let mut sum = 0.0;
            let mut n = 0;
            for y0 in 0..=h - SSIM_WINDOW {
                for x0 in 0..=w - SSIM_WINDOW {
                    let wt = |i: usize, j: usize| k[i] * k[j];
                    let (mut ux, mut uy) = (0.0, 0.0);
                    for i in 0..SSIM_WINDOW {
                        for j in 0..SSIM_WINDOW {
                            ux += wt(i, j) * a.get(y0 + i, x0 + j, c) as f64;
                            uy += wt(i, j) * b.get(y0 + i, x0 + j, c) as f64;
                        }
                    }
                    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..SSIM_WINDOW {
                        for j in 0..SSIM_WINDOW {
                            let dx = a.get(y0 + i, x0 + j, c) as f64 - ux;
                            let dy = b.get(y0 + i, x0 + j, c) as f64 - uy;
                            vx += wt(i, j) * dx * dx;
                            vy += wt(i, j) * dy * dy;
                            cov += wt(i, j) * dx * dy;
                        }
                    }
                    sum += ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
                    n += 1;
                }
            }
            total += sum / n as f64;
        }
        total / 3.0
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Frame::filled(4, 4, 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(format_metric(psnr(&a, &a).unwrap()), "inf");
        // Uniform error 0.1 → MSE 0.01 → 20 dB.
        let b = Frame::filled(4, 4, 0.3);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = (random_frame(&mut rng, 8, 8), random_frame(&mut rng, 8, 8));
        assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        assert!(psnr(&x, &Frame::filled(8, 9, 0.0)).is_err());
    }

    #[test]
    fn ssim_closed_forms() {
        let a = Frame::filled(16, 16, 0.0);
        let b = Frame::filled(16, 16, 1.0);
        assert!((ssim(&a, &b).unwrap() - C1 / (1.0 + C1)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = (random_frame(&mut rng, 16, 16), random_frame(&mut rng, 16, 16));
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        assert!(ssim(&Frame::filled(10, 16, 0.0), &Frame::filled(10, 16, 0.0)).is_err());
    }

    #[test]
    fn ssim_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = random_frame(&mut rng, 16, 16);
            let y = x.map(|v| (v + 0.2 * (v - 0.5)).clamp(0.0, 1.0));
            let z = random_frame(&mut rng, 16, 16);
            for (p, q) in [(&x, &y), (&x, &z)] {
                let s = ssim(p, q).unwrap();
                assert!((s - ssim_brute(p, q)).abs() < 1e-6);
                assert!((-1.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn zero_flow_renders_white_and_wheel_has_55_colours() {
        assert_eq!(color_wheel().len(), 55);
        let img = render_flow(&FlowField::zeros(3, 4));
        assert!(img.data().iter().all(|&v| v == 1.0));
        let r = render_flow(&FlowField::uniform(2, 2, 1.0, 0.0));
        let first = &r.data()[..3];
        assert!(r.data().chunks_exact(3).all(|p| p == first));
    }

    #[test]
    fn nearest_rescale_repeats_samples() {
        let mut f = FlowField::zeros(2, 2);
        f.set(0, 1, (1.0, 2.0));
        let up = rescale_nearest(&f, 4, 4);
        assert_eq!(up.at(0, 2), (1.0, 2.0));
        assert_eq!(up.at(1, 3), (1.0, 2.0));
        assert_eq!(up.at(2, 2), (0.0, 0.0));
        let down = rescale_nearest(&up, 2, 2);
        assert_eq!(down, f);
    }
}
