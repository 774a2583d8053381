//! Texture enhancement: a 3-d encoder-decoder over the five-frame stack
//! `(I0, I1, Ĩt, I2, I3)` that predicts a residual for `Ĩt`.

use stmfnet_tensor::nn::{Conv, Init};
use stmfnet_tensor::{Array, ConvSpec, Graph, ParamBuilder, Scalar, Var};

use crate::backbone::SqueezeExcite;
use crate::error::{dim_err, Error, Result};
use crate::frame::Frame;

/// Temporal extent of the stack.
pub const STACK_LEN: usize = 5;
/// Spatial factor the encoder needs.
pub const TENET_STRIDE: usize = 16;

/// Five frames packed as `(B, 3, 5, H, W)`.
#[derive(Clone, Debug)]
pub struct TemporalStack<T: Scalar> {
    data: Var<T>,
}

impl<T: Scalar> TemporalStack<T> {
    /// Packs `(B, 3, H, W)` tensors in the given order. The order is not
    /// checked; callers pass `(I0, I1, Ĩt, I2, I3)`.
    pub fn from_vars(frames: &[Var<T>]) -> Result<Self> {
        if frames.len() != STACK_LEN {
            return Err(Error::Validation(format!(
                "temporal stack needs exactly {STACK_LEN} frames, got {}",
                frames.len()
            )));
        }
        let s0 = frames[0].shape().to_vec();
        if s0.len() != 4 || frames.iter().any(|f| f.shape() != s0.as_slice()) {
            return dim_err("temporal stack frames differ in shape");
        }
        let (b, c, h, w) = (s0[0], s0[1], s0[2], s0[3]);
        let parts: Vec<Var<T>> = frames.iter().map(|f| f.reshape(&[b, c, 1, h, w])).collect();
        Ok(Self {
            data: Var::concat(&parts, 2),
        })
    }

    pub fn var(&self) -> &Var<T> {
        &self.data
    }

    /// Unpacks into the constituent frames of batch item `b`.
    pub fn frames(&self, b: usize) -> Result<Vec<Frame>> {
        let s = self.data.shape();
        let (c, h, w) = (s[1], s[3], s[4]);
        (0..STACK_LEN)
            .map(|t| {
                let f = self.data.narrow(0, b, 1).narrow(2, t, 1).reshape(&[1, c, h, w]);
                Frame::from_array(f.value(), 0)
            })
            .collect()
    }
}

/// Frame-level stack assembly (batch of one).
pub fn assemble_stack(i0: &Frame, i1: &Frame, it: &Frame, i2: &Frame, i3: &Frame) -> Result<TemporalStack<f32>> {
    let frames = [i0, i1, it, i2, i3];
    if frames.iter().any(|f| !f.same_size(i0)) {
        return dim_err("temporal stack frames differ in size");
    }
    let vars: Vec<Var<f32>> = frames.iter().map(|f| Var::constant(f.to_array())).collect();
    TemporalStack::from_vars(&vars)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TenetConfig {
    /// Widths at `H/2`, `H/4`, `H/8` and `H/16`.
    pub widths: [usize; 4],
}

#[derive(Clone, Debug)]
struct Stage<T: Scalar> {
    a: Conv<T>,
    b: Conv<T>,
    gate: SqueezeExcite<T>,
}

impl<T: Scalar> Stage<T> {
    fn new(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, spatial_stride: usize) -> Self {
        let mut s = pb.sub(name);
        let spec = ConvSpec::default().padding3([1, 1, 1]);
        let k = [3, 3, 3];
        Self {
            a: Conv::new(&mut s, "conv0", cin, cout, &k, spec.stride(spatial_stride), Init::FanIn),
            b: Conv::new(&mut s, "conv1", cout, cout, &k, spec, Init::FanIn),
            gate: SqueezeExcite::new(&mut s.sub("gate"), cout),
        }
    }

    fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        let y = self.a.forward(g, x).relu();
        let y = self.b.forward(g, &y).relu();
        self.gate.forward(g, &y)
    }
}

/// Encoder of four stride-2 stages, decoder of bilinear up-sampling plus
/// 3-d convolutions with additive skips, and a 2-d output layer over the
/// flattened temporal axis. The output layer starts at zero.
#[derive(Clone, Debug)]
pub struct Tenet<T: Scalar> {
    cfg: TenetConfig,
    enc: Vec<Stage<T>>,
    dec: Vec<Stage<T>>,
    out: Conv<T>,
}

impl<T: Scalar> Tenet<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &TenetConfig) -> Result<Self> {
        if cfg.widths.contains(&0) {
            return Err(Error::Config(format!("invalid texture network widths {:?}", cfg.widths)));
        }
        let w = cfg.widths;
        let mut enc = Vec::with_capacity(4);
        let mut cin = 3;
        for (i, &c) in w.iter().enumerate() {
            enc.push(Stage::new(pb, &format!("enc{i}"), cin, c, 2));
            cin = c;
        }
        // dec0: H/16 → H/8, dec1 → H/4, dec2 → H/2, dec3 → H.
        let outs = [w[2], w[1], w[0], w[0]];
        let dec = outs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = Stage::new(pb, &format!("dec{i}"), cin, c, 1);
                cin = c;
                s
            })
            .collect();
        let out = Conv::new(
            pb,
            "out",
            w[0] * STACK_LEN,
            3,
            &[3, 3],
            ConvSpec::default().padding(1),
            Init::Zero,
        );
        Ok(Self {
            cfg: cfg.clone(),
            enc,
            dec,
            out,
        })
    }

    pub fn config(&self) -> &TenetConfig {
        &self.cfg
    }

    /// Residual `R` of shape `(B, 3, H, W)`.
    pub fn forward(&self, g: &Graph<T>, stack: &TemporalStack<T>) -> Result<Var<T>> {
        let x = stack.var();
        let s = x.shape();
        if s.len() != 5 || s[1] != 3 || s[2] != STACK_LEN {
            return dim_err(format!("texture network expects (B, 3, 5, H, W), got {s:?}"));
        }
        let (b, h, w) = (s[0], s[3], s[4]);
        if h % TENET_STRIDE != 0 || w % TENET_STRIDE != 0 {
            return dim_err(format!("texture network input {h}×{w} is not a multiple of {TENET_STRIDE}; pad first"));
        }
        let mut skips = Vec::with_capacity(4);
        let mut y = x.clone();
        for e in &self.enc {
            y = e.forward(g, &y);
            skips.push(y.clone());
        }
        for (i, d) in self.dec.iter().enumerate() {
            y = d.forward(g, &y.upsample_bilinear2x());
            if i < 3 {
                y = y.add(&skips[2 - i]);
            }
        }
        let c = y.shape()[1];
        // (B, C, T, H, W) → (B, C·T, H, W)
        let flat = y.reshape(&[b, c * STACK_LEN, h, w]);
        Ok(self.out.forward(g, &flat))
    }
}

/// Frame-level residual for a stack of one.
pub fn refine_residual(net: &Tenet<f32>, stack: &TemporalStack<f32>) -> Result<Frame> {
    let g = Graph::inference();
    Frame::from_array(net.forward(&g, stack)?.value(), 0)
}

/// `(B, 3, H, W)` zero residual, used when the stage is disabled.
pub fn zero_residual<T: Scalar>(like: &Var<T>) -> Var<T> {
    Var::constant(Array::zeros(like.shape()))
}
