//! Bi-directional linear flow branch: flow estimation, linear halving,
//! splat importance and forward warping of both inputs.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmfnet_tensor::nn::{Conv, Init};
use stmfnet_tensor::optim::AdaMax;
use stmfnet_tensor::{Array, Border, ConvSpec, Graph, Param, ParamBuilder, Scalar, Var};

use crate::error::{dim_err, Error, Result};
use crate::frame::{FlowField, Frame};
use crate::synth::Texture;
use crate::warp_ops;

/// Parameter path of the built-in estimator; the training schedule gates
/// gradients on everything below it.
pub const ESTIMATOR_PREFIX: &str = "blfnet.estimator";

/// Initial value of the learnable importance scale.
pub const GAMMA_INIT: f64 = 10.0;

/// Optical flow source. Flows follow `src(x) ≈ dst(x + F(x))`.
pub trait FlowEstimator<T: Scalar>: Send + Sync + fmt::Debug {
    /// `F_src→dst` as `(B, 2, H, W)`.
    fn estimate(&self, g: &Graph<T>, src: &Var<T>, dst: &Var<T>) -> Result<Var<T>>;

    /// `(F_1→2, F_2→1)`.
    fn estimate_bidirectional(&self, g: &Graph<T>, i1: &Var<T>, i2: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        Ok((self.estimate(g, i1, i2)?, self.estimate(g, i2, i1)?))
    }

    /// Spatial factor inputs must divide by.
    fn stride(&self) -> usize {
        1
    }

    fn set_frozen(&self, frozen: bool);

    fn is_frozen(&self) -> bool;
}

/// Correlation cost volume: channel `(dy + r)(2r + 1) + dx + r` holds
/// `mean_c f1(p) · f2(p + (dx, dy))`, zero outside the frame.
pub fn correlation<T: Scalar>(f1: &Var<T>, f2: &Var<T>, radius: usize) -> Result<Var<T>> {
    if f1.shape() != f2.shape() || f1.shape().len() != 4 {
        return dim_err(format!("correlation inputs differ: {:?} vs {:?}", f1.shape(), f2.shape()));
    }
    let [b, c, h, w] = [f1.shape()[0], f1.shape()[1], f1.shape()[2], f1.shape()[3]];
    let d = 2 * radius + 1;
    let hw = h * w;
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let (a1, a2) = (f1.value().clone(), f2.value().clone());
    let r = radius as isize;
    // Visits every valid (output index, f1 offset, f2 offset) triple's
    // pixel rows; `f` receives plane offsets and the row span.
    let for_each = move |mut f: &mut dyn FnMut(usize, usize, usize, usize)| {
        for bi in 0..b {
            for k in 0..d * d {
                let dy = (k / d) as isize - r;
                let dx = (k % d) as isize - r;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let y2 = y as isize + dy;
                    if y2 < 0 || y2 >= h as isize {
                        continue;
                    }
                    let out = (bi * d * d + k) * hw + y * w + x_lo;
                    let p1 = bi * c * hw + y * w + x_lo;
                    let p2 = bi * c * hw + y2 as usize * w + (x_lo as isize + dx) as usize;
                    (f)(out, p1, p2, x_hi - x_lo);
                }
            }
        }
        let _ = &mut f;
    };
    let mut out = vec![T::zero(); b * d * d * hw];
    {
        let (d1, d2) = (a1.data(), a2.data());
        for_each(&mut |o, p1, p2, n| {
            for ci in 0..c {
                let (r1, r2) = (&d1[p1 + ci * hw..p1 + ci * hw + n], &d2[p2 + ci * hw..p2 + ci * hw + n]);
                for j in 0..n {
                    out[o + j] = out[o + j] + r1[j] * r2[j];
                }
            }
            for v in &mut out[o..o + n] {
                *v = *v * inv_c;
            }
        });
    }
    let shape = [b, c, h, w];
    let (r1, r2) = (f1.requires_grad(), f2.requires_grad());
    Ok(Var::from_op(
        Array::new(&[b, d * d, h, w], out),
        vec![f1.clone(), f2.clone()],
        move |g| {
            let gd = g.data();
            let mut g1 = vec![T::zero(); b * c * hw];
            let mut g2 = vec![T::zero(); b * c * hw];
            let (d1, d2) = (a1.data(), a2.data());
            for_each(&mut |o, p1, p2, n| {
                let go = &gd[o..o + n];
                for ci in 0..c {
                    let (q1, q2) = (p1 + ci * hw, p2 + ci * hw);
                    for j in 0..n {
                        let s = go[j] * inv_c;
                        g1[q1 + j] = g1[q1 + j] + s * d2[q2 + j];
                        g2[q2 + j] = g2[q2 + j] + s * d1[q1 + j];
                    }
                }
            });
            vec![
                r1.then(|| Array::new(&shape, g1)),
                r2.then(|| Array::new(&shape, g2)),
            ]
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFlowConfig {
    pub levels: usize,
    pub search_radius: usize,
    /// Feature width per pyramid level, finest first.
    pub widths: Vec<usize>,
    /// Hidden widths of the per-level flow decoder.
    pub decoder: Vec<usize>,
}

impl PyramidFlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.widths.len() != self.levels || self.decoder.is_empty() {
            return Err(Error::Config(format!(
                "flow pyramid needs ≥ 2 levels with one width each, got {} levels and {:?}",
                self.levels, self.widths
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct FlowLevel<T: Scalar> {
    features: [Conv<T>; 2],
    decoder: Vec<Conv<T>>,
}

/// Coarse-to-fine estimator: shared feature pyramid, local cost volume at
/// each level, residual flow refinement from the coarsest level down. The
/// finest estimate (at half resolution) is up-sampled to the input size.
#[derive(Debug)]
pub struct PyramidFlow<T: Scalar> {
    cfg: PyramidFlowConfig,
    levels: Vec<FlowLevel<T>>,
    frozen: AtomicBool,
}

fn leaky<T: Scalar>(x: Var<T>) -> Var<T> {
    x.leaky_relu(0.1)
}

/// Bilinear ×2 up-sampling of a flow, rescaling the displacements.
pub fn upsample_flow<T: Scalar>(flow: &Var<T>) -> Var<T> {
    flow.upsample_bilinear2x().scale_f64(2.0)
}

impl<T: Scalar> PyramidFlow<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &PyramidFlowConfig) -> Result<Self> {
        cfg.validate()?;
        let d = 2 * cfg.search_radius + 1;
        let mut cin = 3;
        let pad = ConvSpec::default().padding(1);
        let levels = cfg
            .widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut lp = pb.sub(format!("level{i}"));
                let features = [
                    Conv::new(&mut lp, "feat0", cin, c, &[3, 3], pad.stride(2), Init::FanIn),
                    Conv::new(&mut lp, "feat1", c, c, &[3, 3], pad, Init::FanIn),
                ];
                cin = c;
                let mut dec = Vec::with_capacity(cfg.decoder.len() + 1);
                let mut din = d * d + c + 2;
                for (j, &hw) in cfg.decoder.iter().enumerate() {
                    dec.push(Conv::new(&mut lp, &format!("dec{j}"), din, hw, &[3, 3], pad, Init::FanIn));
                    din = hw;
                }
                dec.push(Conv::new(&mut lp, "flow", din, 2, &[3, 3], pad, Init::Zero));
                FlowLevel {
                    features,
                    decoder: dec,
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            levels,
            frozen: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &PyramidFlowConfig {
        &self.cfg
    }

    fn pyramid(&self, g: &Graph<T>, x: &Var<T>) -> Vec<Var<T>> {
        let mut out = Vec::with_capacity(self.levels.len());
        // Per-image contrast normalisation: textures with little contrast
        // otherwise give a nearly flat cost volume.
        let centred = x.sub(&x.mean_axes(&[1, 2, 3], true));
        let std = centred.square().mean_axes(&[1, 2, 3], true).add_scalar(T::from_f64_lossy(1e-4)).sqrt();
        let mut f = centred.div(&std);
        for l in &self.levels {
            f = leaky(l.features[0].forward(g, &f));
            f = leaky(l.features[1].forward(g, &f));
            out.push(f.clone());
        }
        out
    }
}

impl<T: Scalar> FlowEstimator<T> for PyramidFlow<T> {
    fn estimate(&self, g: &Graph<T>, src: &Var<T>, dst: &Var<T>) -> Result<Var<T>> {
        if src.shape() != dst.shape() {
            return dim_err("flow estimation needs equally sized frames");
        }
        let s = self.stride();
        let (h, w) = (src.shape()[2], src.shape()[3]);
        if h % s != 0 || w % s != 0 {
            return dim_err(format!("flow input {h}×{w} is not a multiple of {s}; pad first"));
        }
        let b = src.shape()[0];
        // One pass over both frames with shared weights.
        let feats = self.pyramid(g, &Var::concat(&[src.clone(), dst.clone()], 0));
        let mut flow: Option<Var<T>> = None;
        for (i, lvl) in self.levels.iter().enumerate().rev() {
            let f = &feats[i];
            let parts = f.split(0, &[b, b]);
            let (f1, f2) = (&parts[0], &parts[1]);
            let (fh, fw) = (f1.shape()[2], f1.shape()[3]);
            let up = match &flow {
                Some(prev) => upsample_flow(prev),
                None => Var::constant(Array::zeros(&[b, 2, fh, fw])),
            };
            let warped = warp_ops::backwarp(f2, &up)?;
            let cost = leaky(correlation(f1, &warped, self.cfg.search_radius)?);
            let mut x = Var::concat(&[cost, f1.clone(), up.clone()], 1);
            let last = lvl.decoder.len() - 1;
            for (j, c) in lvl.decoder.iter().enumerate() {
                x = c.forward(g, &x);
                if j < last {
                    x = leaky(x);
                }
            }
            flow = Some(up.add(&x));
        }
        Ok(upsample_flow(&flow.expect("at least two levels")))
    }

    fn estimate_bidirectional(&self, g: &Graph<T>, i1: &Var<T>, i2: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let b = i1.shape()[0];
        let both = self.estimate(
            g,
            &Var::concat(&[i1.clone(), i2.clone()], 0),
            &Var::concat(&[i2.clone(), i1.clone()], 0),
        )?;
        let parts = both.split(0, &[b, b]);
        Ok((parts[0].clone(), parts[1].clone()))
    }

    fn stride(&self) -> usize {
        1 << self.cfg.levels
    }

    fn set_frozen(&self, frozen: bool) {
        self.frozen.store(frozen, Ordering::Relaxed);
    }

    fn is_frozen(&self) -> bool {
        self.frozen.load(Ordering::Relaxed)
    }
}

/// Serves externally computed flows. The pair for the next request is
/// primed with [`PrecomputedFlows::prime`]; flows smaller than the
/// (padded) request are extended at the bottom/right by replication.
#[derive(Debug, Default)]
pub struct PrecomputedFlows {
    pending: Mutex<Option<(FlowField, FlowField)>>,
}

impl PrecomputedFlows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn prime(&self, f12: FlowField, f21: FlowField) {
        *self.pending.lock().expect("flow lock poisoned") = Some((f12, f21));
    }

    /// Loads `F_1→2` and `F_2→1` from flow files and primes them.
    pub fn prime_from_files(&self, f12: &Path, f21: &Path) -> Result<()> {
        self.prime(read_flow_file(f12)?, read_flow_file(f21)?);
        Ok(())
    }

    fn fit<T: Scalar>(f: &FlowField, shape: &[usize]) -> Result<Var<T>> {
        let (h, w) = (shape[2], shape[3]);
        if shape[0] != 1 {
            return Err(Error::Validation("precomputed flows serve one pair at a time".into()));
        }
        if f.height() > h || f.width() > w {
            return dim_err(format!(
                "precomputed flow {}×{} exceeds frame {h}×{w}",
                f.height(),
                f.width()
            ));
        }
        let v = Var::constant(f.to_array());
        Ok(v.pad2d([0, h - f.height(), 0, w - f.width()], Border::Replicate))
    }
}

impl<T: Scalar> FlowEstimator<T> for PrecomputedFlows {
    fn estimate(&self, g: &Graph<T>, src: &Var<T>, dst: &Var<T>) -> Result<Var<T>> {
        Ok(self.estimate_bidirectional(g, src, dst)?.0)
    }

    fn estimate_bidirectional(&self, _g: &Graph<T>, i1: &Var<T>, _i2: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let guard = self.pending.lock().expect("flow lock poisoned");
        let Some((f12, f21)) = guard.as_ref() else {
            return Err(Error::Validation("no precomputed flow pair was primed".into()));
        };
        Ok((Self::fit(f12, i1.shape())?, Self::fit(f21, i1.shape())?))
    }

    fn set_frozen(&self, _frozen: bool) {}

    fn is_frozen(&self) -> bool {
        true
    }
}

const FLOW_MAGIC: &[u8; 4] = b"FLOW";

/// Writes `magic "FLOW", u32 LE H, u32 LE W, H·W·2 f32 LE (dx, dy)`.
pub fn write_flow_file(path: &Path, flow: &FlowField) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + flow.data().len() * 4);
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    for v in flow.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_flow_file(path: &Path) -> Result<FlowField> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Validation(format!("{}: {m}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
        return Err(bad("not a FLOW file"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() != 12 + n {
        return Err(bad(&format!("expected {} payload bytes, found {}", n, bytes.len() - 12)));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FlowField::new(h, w, data)
}

/// `F_1→t = F_1→2 / 2`, `F_2→t = F_2→1 / 2` (tensor form).
pub fn halve<T: Scalar>(flow: &Var<T>) -> Var<T> {
    flow.scale_f64(0.5)
}

/// Splat importance `Z = −γ · mean_c |src − backwarp(dst, F)|`, clamped
/// to `[−80, 80]`.
pub fn importance<T: Scalar>(src: &Var<T>, dst: &Var<T>, flow: &Var<T>, gamma: &Var<T>) -> Result<Var<T>> {
    let residual = src.sub(&warp_ops::backwarp(dst, flow)?).abs().mean_axes(&[1], true);
    let lim = warp_ops::IMPORTANCE_LIMIT;
    Ok(residual.mul(&gamma.neg()).clamp(-lim, lim))
}

/// Output of the branch for one batch.
#[derive(Clone, Debug)]
pub struct BlfOutput<T: Scalar> {
    pub f12: Var<T>,
    pub f21: Var<T>,
    pub soft1: Var<T>,
    pub soft2: Var<T>,
    /// `(B, 1, H, W)` hole masks, 1 where nothing was splatted.
    pub holes1: Array<T>,
    pub holes2: Array<T>,
}

/// Flow estimation, linear halving and softmax splatting of both inputs.
#[derive(Debug)]
pub struct BlfNet<T: Scalar> {
    estimator: Arc<dyn FlowEstimator<T>>,
    gamma: Param<T>,
}

impl<T: Scalar> BlfNet<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, estimator: Arc<dyn FlowEstimator<T>>) -> Self {
        Self {
            estimator,
            gamma: pb.constant("gamma", &[1], GAMMA_INIT),
        }
    }

    pub fn estimator(&self) -> &Arc<dyn FlowEstimator<T>> {
        &self.estimator
    }

    pub fn set_estimator(&mut self, estimator: Arc<dyn FlowEstimator<T>>) {
        self.estimator = estimator;
    }

    pub fn gamma(&self) -> &Param<T> {
        &self.gamma
    }

    pub fn forward(&self, g: &Graph<T>, i1: &Var<T>, i2: &Var<T>) -> Result<BlfOutput<T>> {
        let (f12, f21) = self.estimator.estimate_bidirectional(g, i1, i2)?;
        let gamma = g.param(&self.gamma);
        let z1 = importance(i1, i2, &f12, &gamma)?;
        let z2 = importance(i2, i1, &f21, &gamma)?;
        let (soft1, holes1) = warp_ops::softsplat(i1, &halve(&f12), &z1)?;
        let (soft2, holes2) = warp_ops::softsplat(i2, &halve(&f21), &z2)?;
        Ok(BlfOutput {
            f12,
            f21,
            soft1,
            soft2,
            holes1,
            holes2,
        })
    }
}

/// Frame-level bidirectional estimation.
pub fn estimate_bidirectional_flow(
    i1: &Frame,
    i2: &Frame,
    est: &dyn FlowEstimator<f32>,
) -> Result<(FlowField, FlowField)> {
    if !i1.same_size(i2) {
        return dim_err("frames differ in size");
    }
    let g = Graph::inference();
    let (a, b) = est.estimate_bidirectional(&g, &Var::constant(i1.to_array()), &Var::constant(i2.to_array()))?;
    Ok((FlowField::from_array(a.value(), 0)?, FlowField::from_array(b.value(), 0)?))
}

pub fn halve_flows(f12: &FlowField, f21: &FlowField) -> Result<(FlowField, FlowField)> {
    if f12.height() != f21.height() || f12.width() != f21.width() {
        return dim_err("flows differ in size");
    }
    let half = |f: &FlowField| {
        FlowField::new(f.height(), f.width(), f.data().iter().map(|v| v * 0.5).collect())
    };
    Ok((half(f12)?, half(f21)?))
}

/// Frame-level importance map, row-major `H×W`.
pub fn compute_importance(src: &Frame, dst: &Frame, flow: &FlowField, gamma: f32) -> Result<Vec<f32>> {
    if !src.same_size(dst) || flow.height() != src.height() || flow.width() != src.width() {
        return dim_err("importance inputs differ in size");
    }
    let z = importance(
        &Var::constant(src.to_array::<f32>()),
        &Var::constant(dst.to_array()),
        &Var::constant(flow.to_array()),
        &Var::constant(Array::from_f64(&[1], &[gamma as f64])),
    )?;
    Ok(z.value().data().to_vec())
}

/// Softmax-splats both inputs towards `t`; returns frames and hole masks.
pub fn forward_warp_pair(
    i1: &Frame,
    i2: &Frame,
    f1t: &FlowField,
    f2t: &FlowField,
    z1: &[f32],
    z2: &[f32],
) -> Result<(Frame, Frame, Vec<bool>, Vec<bool>)> {
    let (a, ha) = warp_ops::softsplat_forward_warp(i1, f1t, z1)?;
    let (b, hb) = warp_ops::softsplat_forward_warp(i2, f2t, z2)?;
    Ok((a, b, ha, hb))
}

/// Settings for supervised pre-training on synthetic translations.
#[derive(Clone, Debug)]
pub struct FlowPretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub size: usize,
    pub max_shift: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FlowPretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 4,
            size: 64,
            max_shift: 4.0,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// One synthetic pair `(I1, I2, d)` with `I2(x) = I1(x − d)`, hence
/// `F_1→2 ≡ d`.
pub fn synthetic_pair(rng: &mut impl Rng, size: usize, max_shift: f64) -> (Frame, Frame, (f64, f64)) {
    let tex = Texture::random(rng);
    let d = (
        rng.random_range(-max_shift..=max_shift),
        rng.random_range(-max_shift..=max_shift),
    );
    (tex.render(size, size, 0.0, 0.0), tex.render(size, size, d.0, d.1), d)
}

/// Trains `est` to regress constant translations (L1 end-point error).
/// Returns the per-step loss.
pub fn pretrain_on_translations(
    est: &PyramidFlow<f32>,
    params: &[Param<f32>],
    cfg: &FlowPretrainConfig,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdaMax::new(cfg.lr, 0.9, 0.999);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let (mut a, mut b, mut target) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..cfg.batch {
            let (i1, i2, d) = synthetic_pair(&mut rng, cfg.size, cfg.max_shift);
            a.push(i1);
            b.push(i2);
            target.push(FlowField::uniform(cfg.size, cfg.size, d.0 as f32, d.1 as f32));
        }
        let gt: Vec<Array<f32>> = target.iter().map(|f| f.to_array()).collect();
        let gt = Var::concat(&gt.into_iter().map(Var::constant).collect::<Vec<_>>(), 0);
        let g = Graph::training(&[]);
        let pred = est.estimate(&g, &Var::constant(Frame::stack(&a)), &Var::constant(Frame::stack(&b)))?;
        let loss = pred.sub(&gt).abs().mean_all();
        let lv = loss.value().item() as f64;
        if !lv.is_finite() {
            return Err(Error::Training(format!("flow pre-training diverged (loss {lv})")));
        }
        losses.push(lv);
        let grads: Vec<_> = g
            .param_grads(&loss.backward())
            .into_iter()
            .filter(|(p, _)| params.iter().any(|q| q.id() == p.id()))
            .collect();
        opt.step(&grads);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stmfnet_tensor::gradcheck::check_gradients;
    use stmfnet_tensor::ParamStore;

    fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
        let n = shape.iter().product();
        Array::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn correlation_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f1 = rand_array(&mut rng, &[1, 3, 5, 6]);
        let f2 = rand_array(&mut rng, &[1, 3, 5, 6]);
        let c = correlation(&Var::constant(f1.clone()), &Var::constant(f2.clone()), 2).unwrap();
        assert_eq!(c.shape(), &[1, 25, 5, 6]);
        let at = |a: &Array<f64>, ch: usize, y: isize, x: isize| {
            if y < 0 || x < 0 || y >= 5 || x >= 6 {
                0.0
            } else {
                a.data()[(ch * 5 + y as usize) * 6 + x as usize]
            }
        };
        for k in 0..25 {
            let (dy, dx) = ((k / 5) as isize - 2, (k % 5) as isize - 2);
            for y in 0..5 {
                for x in 0..6 {
                    let e: f64 = (0..3).map(|ch| at(&f1, ch, y, x) * at(&f2, ch, y + dy, x + dx)).sum::<f64>() / 3.0;
                    let got = c.value().data()[(k * 5 + y as usize) * 6 + x as usize];
                    assert!((got - e).abs() < 1e-12);
                }
            }
        }
        let r = check_gradients(|v| correlation(&v[0], &v[1], 2).unwrap(), &[f1, f2], 1e-6, 200, 0);
        assert!(r.max_rel_error() < 1e-6, "{r:?}");
    }

    #[test]
    fn halving_is_exact() {
        let f12 = FlowField::uniform(2, 3, 2.0, -4.0);
        let (f1t, f2t) = halve_flows(&f12, &FlowField::zeros(2, 3)).unwrap();
        assert_eq!(f1t.at(1, 2), (1.0, -2.0));
        assert_eq!(f2t, FlowField::zeros(2, 3));
        let odd = FlowField::new(1, 2, vec![0.1, -3.3, 1e-30, 7.77]).unwrap();
        let (h, _) = halve_flows(&odd, &odd).unwrap();
        for (a, b) in h.data().iter().zip(odd.data()) {
            assert_eq!((2.0 * a - b).to_bits() & 0x7fff_ffff, 0);
        }
    }

    #[test]
    fn importance_examples() {
        let a = Frame::filled(4, 4, 0.3);
        let zero = FlowField::zeros(4, 4);
        assert!(compute_importance(&a, &a, &zero, 10.0).unwrap().iter().all(|&z| z == 0.0));
        let b = Frame::filled(4, 4, 0.5);
        let z = compute_importance(&a, &b, &zero, 10.0).unwrap();
        assert!(z.iter().all(|&v| (v + 2.0).abs() < 1e-5));
        assert!(compute_importance(&a, &b, &zero, 0.0).unwrap().iter().all(|&v| v == 0.0));
        let z2 = compute_importance(&a.map(|v| v + 0.2), &b.map(|v| v + 0.2), &zero, 10.0).unwrap();
        for (p, q) in z.iter().zip(&z2) {
            assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn forward_pair_static_and_off_frame() {
        let a = Frame::from_fn(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0; 3]);
        let b = a.map(|v| 1.0 - v);
        let z = vec![0.0; 16];
        let zero = FlowField::zeros(4, 4);
        let (sa, sb, ha, hb) = forward_warp_pair(&a, &b, &zero, &zero, &z, &z).unwrap();
        assert_eq!((sa, sb), (a.clone(), b.clone()));
        assert!(ha.iter().chain(&hb).all(|h| !h));
        let off = FlowField::uniform(4, 4, -50.0, 0.0);
        let (sa, _, ha, hb) = forward_warp_pair(&a, &b, &off, &off, &z, &z).unwrap();
        assert!(sa.data().iter().all(|&v| v == 0.0));
        assert!(ha.iter().chain(&hb).all(|&h| h));
    }

    #[test]
    fn flow_file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flow");
        let f = FlowField::new(2, 3, (0..12).map(|v| v as f32 * 0.5 - 2.0).collect()).unwrap();
        write_flow_file(&p, &f).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"FLOW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(read_flow_file(&p).unwrap(), f);
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_flow_file(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn precomputed_adapter_pads_to_request() {
        let est = PrecomputedFlows::new();
        est.prime(FlowField::uniform(2, 2, 1.0, 0.0), FlowField::uniform(2, 2, -1.0, 0.0));
        let g = Graph::<f32>::inference();
        let x = Var::constant(Array::zeros(&[1, 3, 4, 4]));
        let (a, b) = est.estimate_bidirectional(&g, &x, &x).unwrap();
        assert_eq!(a.shape(), &[1, 2, 4, 4]);
        assert!(b.value().data()[..16].iter().all(|&v| v == -1.0));
    }

    fn tiny_estimator(store: &mut ParamStore<f32>) -> PyramidFlow<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pb = ParamBuilder::new(store, &mut rng);
        let cfg = PyramidFlowConfig {
            levels: 3,
            search_radius: 4,
            widths: vec![8, 12, 16],
            decoder: vec![16, 8],
        };
        PyramidFlow::new(&mut pb.sub(ESTIMATOR_PREFIX), &cfg).unwrap()
    }

    #[test]
    fn estimator_shapes() {
        let mut store = ParamStore::new();
        let est = tiny_estimator(&mut store);
        let f = Frame::filled(32, 48, 0.5);
        let (a, b) = estimate_bidirectional_flow(&f, &f, &est).unwrap();
        assert_eq!((a.height(), a.width(), b.height(), b.width()), (32, 48, 32, 48));
        assert!(estimate_bidirectional_flow(&Frame::filled(20, 20, 0.0), &Frame::filled(20, 20, 0.0), &est).is_err());
    }
}
