//! Multi-scale ResNeXt feature extractor and multi-flow heads.

use stmfnet_tensor::nn::{Conv, Init};
use stmfnet_tensor::{ConvSpec, Graph, ParamBuilder, Scalar, Var};

use crate::error::{dim_err, Error, Result};
use crate::warp_ops;

/// Resolution change performed by a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrideMode {
    Same,
    Down2,
    Up2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MSResNextConfig {
    pub channels_in: usize,
    pub channels_out: usize,
    pub groups: usize,
    pub stride_mode: StrideMode,
}

/// Middle-layer kernel sizes of the two parallel branches.
pub const BRANCH_KERNELS: [usize; 2] = [3, 7];

/// Squeeze-excitation reduction ratio.
pub const SE_RATIO: usize = 16;

fn relu<T: Scalar>(x: Var<T>) -> Var<T> {
    x.relu()
}

/// Channel attention: global pooling, bottleneck, sigmoid gate.
#[derive(Clone, Debug)]
pub struct SqueezeExcite<T: Scalar> {
    squeeze: Conv<T>,
    excite: Conv<T>,
}

impl<T: Scalar> SqueezeExcite<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, channels: usize) -> Self {
        let hidden = (channels / SE_RATIO).max(1);
        let k = [1, 1];
        Self {
            squeeze: Conv::new(pb, "squeeze", channels, hidden, &k, ConvSpec::default(), Init::FanIn),
            excite: Conv::new(pb, "excite", hidden, channels, &k, ConvSpec::default(), Init::FanIn),
        }
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        let nd = x.shape().len();
        let axes: Vec<usize> = (2..nd).collect();
        let mut s = x.mean_axes(&axes, true);
        if nd == 5 {
            // (B, C, 1, 1, 1) → (B, C, 1, 1) for the 2-d gate convolutions.
            let (b, c) = (s.shape()[0], s.shape()[1]);
            s = s.reshape(&[b, c, 1, 1]);
        }
        let gate = self
            .excite
            .forward(g, &relu(self.squeeze.forward(g, &s)))
            .sigmoid();
        let mut gshape = vec![1; nd];
        gshape[0] = x.shape()[0];
        gshape[1] = x.shape()[1];
        x.mul(&gate.reshape(&gshape))
    }
}

#[derive(Clone, Debug)]
struct ResNextBranch<T: Scalar> {
    reduce: Conv<T>,
    middle: Conv<T>,
    expand: Conv<T>,
}

/// Two ResNeXt bottlenecks with 3×3 and 7×7 grouped middle layers, SE on
/// their concatenation and a (projected) residual.
#[derive(Clone, Debug)]
pub struct MSResNext<T: Scalar> {
    cfg: MSResNextConfig,
    branches: Vec<ResNextBranch<T>>,
    se: SqueezeExcite<T>,
    proj: Option<Conv<T>>,
}

impl<T: Scalar> MSResNext<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, name: &str, cfg: MSResNextConfig) -> Result<Self> {
        let MSResNextConfig {
            channels_in: cin,
            channels_out: cout,
            groups,
            stride_mode,
        } = cfg;
        let half = cout / 2;
        if groups == 0 || cout % 2 != 0 || half % groups != 0 || cin == 0 {
            return Err(Error::Config(format!(
                "MSResNext {name}: output {cout} must split into two branches divisible by {groups} groups"
            )));
        }
        let mut pb = pb.sub(name);
        let one = [1, 1];
        let branches = BRANCH_KERNELS
            .iter()
            .map(|&k| {
                let mut b = pb.sub(format!("k{k}"));
                let reduce = Conv::new(&mut b, "reduce", cin, half, &one, ConvSpec::default(), Init::FanIn);
                let spec = ConvSpec::default().groups(groups);
                let middle = match stride_mode {
                    StrideMode::Same => {
                        Conv::new(&mut b, "middle", half, half, &[k, k], spec.padding(k / 2), Init::FanIn)
                    }
                    StrideMode::Down2 => Conv::new(
                        &mut b,
                        "middle",
                        half,
                        half,
                        &[k, k],
                        spec.padding(k / 2).stride(2),
                        Init::FanIn,
                    ),
                    StrideMode::Up2 => Conv::transposed(
                        &mut b,
                        "middle",
                        half,
                        half,
                        &[k + 1, k + 1],
                        spec.padding((k - 1) / 2).stride(2),
                        Init::FanIn,
                    ),
                };
                let expand = Conv::new(&mut b, "expand", half, half, &one, ConvSpec::default(), Init::FanIn);
                ResNextBranch {
                    reduce,
                    middle,
                    expand,
                }
            })
            .collect();
        let se = SqueezeExcite::new(&mut pb.sub("se"), cout);
        let proj = (cin != cout || stride_mode != StrideMode::Same)
            .then(|| Conv::new(&mut pb, "proj", cin, cout, &one, ConvSpec::default(), Init::FanIn));
        Ok(Self {
            cfg,
            branches,
            se,
            proj,
        })
    }

    pub fn config(&self) -> MSResNextConfig {
        self.cfg
    }

    pub fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().len() != 4 || x.shape()[1] != self.cfg.channels_in {
            return Err(Error::Config(format!(
                "MSResNext expects {} input channels, got {:?}",
                self.cfg.channels_in,
                x.shape()
            )));
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        if self.cfg.stride_mode == StrideMode::Down2 && (h % 2 != 0 || w % 2 != 0) {
            return dim_err(format!("down-sampling block needs even size, got {h}×{w}"));
        }
        let outs: Vec<Var<T>> = self
            .branches
            .iter()
            .map(|b| {
                let y = relu(b.reduce.forward(g, x));
                let y = relu(b.middle.forward(g, &y));
                b.expand.forward(g, &y)
            })
            .collect();
        let y = self.se.forward(g, &Var::concat(&outs, 1));
        let skip = match self.cfg.stride_mode {
            StrideMode::Same => x.clone(),
            StrideMode::Down2 => x.avg_pool2x(),
            StrideMode::Up2 => x.upsample_bilinear2x(),
        };
        let skip = match &self.proj {
            Some(p) => p.forward(g, &skip),
            None => skip,
        };
        Ok(y.add(&skip).relu())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    UMSResNext,
    UNet,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::UMSResNext => "umsresnext",
            BackboneKind::UNet => "unet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "umsresnext" => Ok(Self::UMSResNext),
            "unet" => Ok(Self::UNet),
            _ => Err(Error::Config(format!("unknown backbone {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Stem width at full resolution.
    pub stem: usize,
    /// Encoder widths at 1/2, 1/4, 1/8 and 1/16 resolution.
    pub widths: [usize; 4],
    pub groups: usize,
}

impl BackboneConfig {
    /// Channels of the decoder feature at `H/2`.
    pub fn half_channels(&self) -> usize {
        2 * self.widths[0]
    }

    /// Channels of the decoder feature at `H`.
    pub fn full_channels(&self) -> usize {
        2 * self.stem
    }
}

/// Decoder features consumed by the multi-flow heads.
#[derive(Clone, Debug)]
pub struct BackboneFeatures<T: Scalar> {
    /// `H/2` feature, input of the `l = 1` head.
    pub half: Var<T>,
    /// `H` feature, input of the `l = 0` and `l = −1` heads.
    pub full: Var<T>,
}

/// Spatial factor every backbone input must divide by.
pub const BACKBONE_STRIDE: usize = 16;

#[derive(Clone, Debug)]
enum Block<T: Scalar> {
    MsResNext(MSResNext<T>),
    Plain { a: Conv<T>, b: Conv<T>, mode: StrideMode },
}

impl<T: Scalar> Block<T> {
    fn new(
        pb: &mut ParamBuilder<'_, T>,
        kind: BackboneKind,
        name: &str,
        cfg: MSResNextConfig,
    ) -> Result<Self> {
        Ok(match kind {
            BackboneKind::UMSResNext => Block::MsResNext(MSResNext::new(pb, name, cfg)?),
            BackboneKind::UNet => {
                let mut s = pb.sub(name);
                let spec = ConvSpec::default().padding(1);
                let (cin, cout) = (cfg.channels_in, cfg.channels_out);
                Block::Plain {
                    a: Conv::new(&mut s, "conv1", cin, cout, &[3, 3], spec, Init::FanIn),
                    b: Conv::new(&mut s, "conv2", cout, cout, &[3, 3], spec, Init::FanIn),
                    mode: cfg.stride_mode,
                }
            }
        })
    }

    fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            Block::MsResNext(b) => b.forward(g, x),
            Block::Plain { a, b, mode } => {
                let x = match mode {
                    StrideMode::Down2 => x.avg_pool2x(),
                    StrideMode::Up2 => x.upsample_bilinear2x(),
                    StrideMode::Same => x.clone(),
                };
                Ok(relu(b.forward(g, &relu(a.forward(g, &x)))))
            }
        }
    }
}

/// U-shaped extractor: stem, four stride-2 encoder blocks and four
/// up-sampling decoder blocks with concatenated skips.
#[derive(Clone, Debug)]
pub struct Backbone<T: Scalar> {
    cfg: BackboneConfig,
    stem: Conv<T>,
    enc: Vec<Block<T>>,
    dec: Vec<Block<T>>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(pb: &mut ParamBuilder<'_, T>, cfg: &BackboneConfig) -> Result<Self> {
        let BackboneConfig {
            kind,
            stem,
            widths,
            groups,
        } = cfg.clone();
        let stem_conv = Conv::new(pb, "stem", 6, stem, &[3, 3], ConvSpec::default().padding(1), Init::FanIn);
        let block = |cin, cout, mode| MSResNextConfig {
            channels_in: cin,
            channels_out: cout,
            groups,
            stride_mode: mode,
        };
        let mut enc = Vec::with_capacity(4);
        let mut cin = stem;
        for (i, &c) in widths.iter().enumerate() {
            enc.push(Block::new(pb, kind, &format!("enc{i}"), block(cin, c, StrideMode::Down2))?);
            cin = c;
        }
        // Decoder i lands on the resolution of encoder 2-i (or the stem).
        let outs = [widths[2], widths[1], widths[0], stem];
        let mut dec = Vec::with_capacity(4);
        for (i, &c) in outs.iter().enumerate() {
            dec.push(Block::new(pb, kind, &format!("dec{i}"), block(cin, c, StrideMode::Up2))?);
            cin = 2 * c;
        }
        Ok(Self {
            cfg: cfg.clone(),
            stem: stem_conv,
            enc,
            dec,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Features of the frame pair `(B, 3, H, W)`.
    pub fn extract(&self, g: &Graph<T>, i1: &Var<T>, i2: &Var<T>) -> Result<BackboneFeatures<T>> {
        if i1.shape() != i2.shape() {
            return dim_err(format!("frames differ: {:?} vs {:?}", i1.shape(), i2.shape()));
        }
        let (h, w) = (i1.shape()[2], i1.shape()[3]);
        if h % BACKBONE_STRIDE != 0 || w % BACKBONE_STRIDE != 0 {
            return dim_err(format!(
                "backbone input {h}×{w} is not a multiple of {BACKBONE_STRIDE}; pad first"
            ));
        }
        let s = relu(self.stem.forward(g, &Var::concat(&[i1.clone(), i2.clone()], 1)));
        let mut skips = vec![s.clone()];
        let mut x = s;
        for b in &self.enc {
            x = b.forward(g, &x)?;
            skips.push(x.clone());
        }
        // skips: [stem, e0, e1, e2, e3]
        let mut half = None;
        for (i, b) in self.dec.iter().enumerate() {
            x = b.forward(g, &x)?;
            x = Var::concat(&[x, skips[3 - i].clone()], 1);
            if i == 2 {
                half = Some(x.clone());
            }
        }
        Ok(BackboneFeatures {
            half: half.expect("decoder has four blocks"),
            full: x,
        })
    }
}

/// Pyramid level of a multi-flow head: `l = i` means down-sampling by `2^i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Up,
    Full,
    Down,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Up, Level::Full, Level::Down];

    pub fn index(self) -> i32 {
        match self {
            Level::Up => -1,
            Level::Full => 0,
            Level::Down => 1,
        }
    }

    pub fn from_index(l: i32) -> Result<Self> {
        match l {
            -1 => Ok(Level::Up),
            0 => Ok(Level::Full),
            1 => Ok(Level::Down),
            _ => Err(Error::Config(format!("scale level {l} is not one of -1, 0, 1"))),
        }
    }

    /// Parameter-path segment.
    pub fn tag(self) -> &'static str {
        match self {
            Level::Up => "up",
            Level::Full => "full",
            Level::Down => "down",
        }
    }

    /// Output size for a base resolution `H`.
    pub fn resolution(self, h: usize) -> usize {
        match self {
            Level::Up => 2 * h,
            Level::Full => h,
            Level::Down => h / 2,
        }
    }
}

/// Multi-flow as `(B, N, H, W)` tensors.
#[derive(Clone, Debug)]
pub struct MultiFlowVar<T: Scalar> {
    pub alpha: Var<T>,
    pub beta: Var<T>,
    pub weights: Var<T>,
}

impl<T: Scalar> MultiFlowVar<T> {
    pub fn warp(&self, img: &Var<T>, grid: warp_ops::BaseGrid) -> Result<Var<T>> {
        warp_ops::multiwarp(img, &self.alpha, &self.beta, &self.weights, grid)
    }

    pub fn mean_flow(&self) -> Var<T> {
        warp_ops::mean_flow(&self.alpha, &self.beta, &self.weights)
    }
}

#[derive(Clone, Debug)]
struct SubBranch<T: Scalar> {
    hidden: Vec<Conv<T>>,
    out: Conv<T>,
}

impl<T: Scalar> SubBranch<T> {
    fn forward(&self, g: &Graph<T>, x: &Var<T>) -> Var<T> {
        let mut y = x.clone();
        for c in &self.hidden {
            y = relu(c.forward(g, &y));
        }
        self.out.forward(g, &y)
    }
}

const SUB_BRANCHES: [&str; 6] = ["alpha1", "beta1", "weight1", "alpha2", "beta2", "weight2"];

/// Six convolutional sub-branches emitting `(α, β, w)` towards both
/// inputs. Output layers start at zero so the initial warp is the identity.
#[derive(Clone, Debug)]
pub struct MultiFlowHead<T: Scalar> {
    level: Level,
    n: usize,
    branches: Vec<SubBranch<T>>,
}

impl<T: Scalar> MultiFlowHead<T> {
    pub fn new(
        pb: &mut ParamBuilder<'_, T>,
        level: Level,
        channels_in: usize,
        hidden: usize,
        n: usize,
    ) -> Result<Self> {
        if n < 1 {
            return Err(Error::Config("number of flows must be at least 1".into()));
        }
        let mut pb = pb.sub(level.tag());
        let pad = ConvSpec::default().padding(1);
        let branches = SUB_BRANCHES
            .iter()
            .map(|name| {
                let mut b = pb.sub(name);
                let mut hidden_layers = vec![
                    Conv::new(&mut b, "conv0", channels_in, hidden, &[3, 3], pad, Init::FanIn),
                    Conv::new(&mut b, "conv1", hidden, hidden, &[3, 3], pad, Init::FanIn),
                ];
                if level == Level::Up {
                    hidden_layers.push(Conv::transposed(
                        &mut b,
                        "up",
                        hidden,
                        hidden,
                        &[4, 4],
                        ConvSpec::default().stride(2).padding(1),
                        Init::FanIn,
                    ));
                }
                SubBranch {
                    hidden: hidden_layers,
                    out: Conv::new(&mut b, "out", hidden, n, &[3, 3], pad, Init::Zero),
                }
            })
            .collect();
        Ok(Self { level, n, branches })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn n_flows(&self) -> usize {
        self.n
    }

    /// `(G_t→1, G_t→2)` at this head's resolution.
    pub fn forward(&self, g: &Graph<T>, feat: &Var<T>) -> (MultiFlowVar<T>, MultiFlowVar<T>) {
        let o: Vec<Var<T>> = self.branches.iter().map(|b| b.forward(g, feat)).collect();
        let mk = |i: usize| MultiFlowVar {
            alpha: o[i].clone(),
            beta: o[i + 1].clone(),
            weights: o[i + 2].softmax(1),
        };
        (mk(0), mk(3))
    }

    /// Picks the backbone feature this head consumes.
    pub fn input<'a>(&self, f: &'a BackboneFeatures<T>) -> &'a Var<T> {
        match self.level {
            Level::Down => &f.half,
            Level::Full | Level::Up => &f.full,
        }
    }
}
