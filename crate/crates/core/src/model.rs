//! End-to-end assembly: multi-flow warping, linear-flow splatting, grid
//! fusion and texture refinement, plus variants, padding and recursion.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmfnet_tensor::{Array, Border, Graph, ParamBuilder, ParamStore, Scalar, Var};

use crate::backbone::{Backbone, BackboneConfig, BackboneKind, Level, MultiFlowHead, MultiFlowVar};
use crate::blfnet::{BlfNet, FlowEstimator, PrecomputedFlows, PyramidFlow, PyramidFlowConfig, ESTIMATOR_PREFIX};
use crate::config::{join, parse_array, parse_bool, parse_list, parse_value};
use crate::error::{dim_err, Error, Result};
use crate::frame::Frame;
use crate::fusion::{GridNet, GridNetConfig};
use crate::tenet::{Tenet, TenetConfig, TemporalStack};
use crate::warp_ops::{self, BaseGrid};

/// Inputs are reflect-padded to a multiple of this before the network.
pub const PAD_MULTIPLE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Default,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "default" => Ok(Preset::Default),
            _ => Err(Error::Config(format!("unknown preset {s:?} (tiny, default)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Default => "default",
        }
    }
}

pub const VARIANTS: [&str; 6] = ["full", "no_mifnet", "no_blfnet", "no_tenet", "no_us", "unet"];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_flows: usize,
    /// Multi-flow scales, a subset of {−1, 0, 1} that contains 0.
    pub levels: Vec<Level>,
    pub mifnet_on: bool,
    pub blfnet_on: bool,
    pub tenet_on: bool,
    pub backbone: BackboneConfig,
    pub head_hidden: usize,
    /// Adds a dilated base grid to the multi-flow offsets.
    pub base_grid: bool,
    pub estimator: PyramidFlowConfig,
    pub fusion_widths: [usize; 3],
    pub tenet: TenetConfig,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Tiny => Self {
                n_flows: 4,
                levels: Level::ALL.to_vec(),
                mifnet_on: true,
                blfnet_on: true,
                tenet_on: true,
                backbone: BackboneConfig {
                    kind: BackboneKind::UMSResNext,
                    stem: 8,
                    widths: [8, 8, 16, 16],
                    groups: 2,
                },
                head_hidden: 8,
                base_grid: false,
                estimator: PyramidFlowConfig {
                    levels: 3,
                    search_radius: 4,
                    widths: vec![8, 12, 16],
                    decoder: vec![16, 8],
                },
                fusion_widths: [8, 12, 16],
                tenet: TenetConfig { widths: [4, 8, 8, 16] },
            },
            Preset::Default => Self {
                n_flows: 25,
                levels: Level::ALL.to_vec(),
                mifnet_on: true,
                blfnet_on: true,
                tenet_on: true,
                backbone: BackboneConfig {
                    kind: BackboneKind::UMSResNext,
                    stem: 64,
                    widths: [128, 256, 384, 576],
                    groups: 8,
                },
                head_hidden: 88,
                base_grid: false,
                estimator: PyramidFlowConfig {
                    levels: 3,
                    search_radius: 4,
                    widths: vec![64, 128, 192],
                    decoder: vec![320, 256, 192, 128, 64],
                },
                fusion_widths: [32, 64, 96],
                tenet: TenetConfig { widths: [24, 48, 96, 192] },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mifnet_on && !self.blfnet_on {
            return Err(Error::Config("at least one of the multi-flow and linear-flow branches must be on".into()));
        }
        if !self.levels.contains(&Level::Full) {
            return Err(Error::Config("the scale set must contain level 0".into()));
        }
        if self.n_flows == 0 {
            return Err(Error::Config("number of flows must be at least 1".into()));
        }
        if self.base_grid && self.base_grid_side().is_none() {
            return Err(Error::Config(format!("base grid needs a square number of flows, got {}", self.n_flows)));
        }
        self.estimator.validate()
    }

    fn base_grid_side(&self) -> Option<usize> {
        let s = (self.n_flows as f64).sqrt().round() as usize;
        (s * s == self.n_flows).then_some(s)
    }

    pub fn grid(&self) -> BaseGrid {
        if self.base_grid {
            BaseGrid::Dilated(1)
        } else {
            BaseGrid::Off
        }
    }

    fn has_level(&self, l: Level) -> bool {
        self.mifnet_on && self.levels.contains(&l)
    }

    /// Input channels of the three fusion rows.
    pub fn fusion_inputs(&self) -> [usize; 3] {
        let mif = |l| if self.has_level(l) { 6 } else { 0 };
        let blf = if self.blfnet_on { 8 } else { 0 };
        [mif(Level::Up), mif(Level::Full) + blf, mif(Level::Down)]
    }

    /// Flat `key=value` view used by config files and checkpoints.
    pub fn entries(&self) -> Vec<(String, String)> {
        let levels: Vec<i32> = self.levels.iter().map(|l| l.index()).collect();
        [
            ("model.n_flows", self.n_flows.to_string()),
            ("model.levels", join(&levels)),
            ("model.mifnet", self.mifnet_on.to_string()),
            ("model.blfnet", self.blfnet_on.to_string()),
            ("model.tenet", self.tenet_on.to_string()),
            ("model.backbone.kind", self.backbone.kind.name().to_string()),
            ("model.backbone.stem", self.backbone.stem.to_string()),
            ("model.backbone.widths", join(&self.backbone.widths)),
            ("model.backbone.groups", self.backbone.groups.to_string()),
            ("model.head_hidden", self.head_hidden.to_string()),
            ("model.base_grid", self.base_grid.to_string()),
            ("model.estimator.levels", self.estimator.levels.to_string()),
            ("model.estimator.radius", self.estimator.search_radius.to_string()),
            ("model.estimator.widths", join(&self.estimator.widths)),
            ("model.estimator.decoder", join(&self.estimator.decoder)),
            ("model.fusion.widths", join(&self.fusion_widths)),
            ("model.tenet.widths", join(&self.tenet.widths)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `model.*` key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.n_flows" => self.n_flows = parse_value(key, value)?,
            "model.levels" => {
                let ls: Vec<i32> = parse_list(key, value)?;
                let mut levels = ls.into_iter().map(Level::from_index).collect::<Result<Vec<_>>>()?;
                levels.sort();
                levels.dedup();
                self.levels = levels;
            }
            "model.mifnet" => self.mifnet_on = parse_bool(key, value)?,
            "model.blfnet" => self.blfnet_on = parse_bool(key, value)?,
            "model.tenet" => self.tenet_on = parse_bool(key, value)?,
            "model.backbone.kind" => self.backbone.kind = BackboneKind::parse(value.trim())?,
            "model.backbone.stem" => self.backbone.stem = parse_value(key, value)?,
            "model.backbone.widths" => self.backbone.widths = parse_array(key, value)?,
            "model.backbone.groups" => self.backbone.groups = parse_value(key, value)?,
            "model.head_hidden" => self.head_hidden = parse_value(key, value)?,
            "model.base_grid" => self.base_grid = parse_bool(key, value)?,
            "model.estimator.levels" => self.estimator.levels = parse_value(key, value)?,
            "model.estimator.radius" => self.estimator.search_radius = parse_value(key, value)?,
            "model.estimator.widths" => self.estimator.widths = parse_list(key, value)?,
            "model.estimator.decoder" => self.estimator.decoder = parse_list(key, value)?,
            "model.fusion.widths" => self.fusion_widths = parse_array(key, value)?,
            "model.tenet.widths" => self.tenet.widths = parse_array(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }
}

/// Toggle set of a named ablation variant on top of `preset`.
pub fn make_variant_with(name: &str, preset: Preset) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::preset(preset);
    match name {
        "full" => {}
        "no_mifnet" => cfg.mifnet_on = false,
        "no_blfnet" => cfg.blfnet_on = false,
        "no_tenet" => cfg.tenet_on = false,
        "no_us" => cfg.levels = vec![Level::Full, Level::Down],
        "unet" => cfg.backbone.kind = BackboneKind::UNet,
        _ => {
            return Err(Error::Config(format!(
                "unknown variant {name:?}; expected one of {}",
                VARIANTS.join(", ")
            )))
        }
    }
    Ok(cfg)
}

pub fn make_variant(name: &str) -> Result<ModelConfig> {
    make_variant_with(name, Preset::Default)
}

/// Per-module and total learnable scalar counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterReport {
    pub total: usize,
    pub modules: Vec<(String, usize)>,
}

/// Parameter-path prefixes reported by [`Stmfnet::count_parameters`].
pub const MODULES: [&str; 6] = [
    "mifnet.backbone",
    "mifnet.heads",
    ESTIMATOR_PREFIX,
    "blfnet.gamma",
    "fusion",
    "tenet",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replaces the learned fusion with its fixed base blend (a probe for
    /// identity tests).
    pub bypass_fusion: bool,
    /// Skips the inference-time clamp to [0, 1].
    pub unclamped: bool,
}

/// Multi-flows predicted at one scale (on the padded grid).
#[derive(Clone, Debug)]
pub struct LevelFlows<T: Scalar> {
    pub level: Level,
    pub g1: MultiFlowVar<T>,
    pub g2: MultiFlowVar<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Scalar> {
    /// Final frame, cropped; clamped to [0, 1] outside training.
    pub output: Var<T>,
    /// Stage-one result `Ĩt`, cropped and unclamped.
    pub stage1: Var<T>,
    /// Multi-flow warps `(Î_t1, Î_t2)` at each enabled scale (padded).
    pub warps: Vec<(Level, Var<T>, Var<T>)>,
    pub flows: Vec<LevelFlows<T>>,
    /// Size the inputs were padded to.
    pub padded: (usize, usize),
}

/// The full interpolation network. Weights are shared immutable state,
/// so one instance can serve concurrent inference.
#[derive(Debug)]
pub struct Stmfnet<T: Scalar> {
    cfg: ModelConfig,
    store: ParamStore<T>,
    backbone: Option<Backbone<T>>,
    heads: Vec<MultiFlowHead<T>>,
    blfnet: Option<BlfNet<T>>,
    builtin_flow: Option<Arc<PyramidFlow<T>>>,
    fusion: GridNet<T>,
    tenet: Option<Tenet<T>>,
}

impl<T: Scalar> Stmfnet<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut store, &mut rng);
        let (backbone, heads) = if cfg.mifnet_on {
            let mut mp = pb.sub("mifnet");
            let backbone = Backbone::new(&mut mp.sub("backbone"), &cfg.backbone)?;
            let mut hp = mp.sub("heads");
            let heads = cfg
                .levels
                .iter()
                .map(|&l| {
                    let cin = match l {
                        Level::Down => cfg.backbone.half_channels(),
                        _ => cfg.backbone.full_channels(),
                    };
                    MultiFlowHead::new(&mut hp, l, cin, cfg.head_hidden, cfg.n_flows)
                })
                .collect::<Result<Vec<_>>>()?;
            (Some(backbone), heads)
        } else {
            (None, Vec::new())
        };
        let (blfnet, builtin_flow) = if cfg.blfnet_on {
            let mut bp = pb.sub("blfnet");
            let est = Arc::new(PyramidFlow::new(&mut bp.sub("estimator"), &cfg.estimator)?);
            let dyn_est: Arc<dyn FlowEstimator<T>> = est.clone();
            (Some(BlfNet::new(&mut bp, dyn_est)), Some(est))
        } else {
            (None, None)
        };
        let fusion = GridNet::new(
            &mut pb.sub("fusion"),
            &GridNetConfig {
                widths: cfg.fusion_widths,
                inputs: cfg.fusion_inputs(),
                out_channels: 3,
            },
        )?;
        let tenet = if cfg.tenet_on {
            Some(Tenet::new(&mut pb.sub("tenet"), &cfg.tenet)?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            backbone,
            heads,
            blfnet,
            builtin_flow,
            fusion,
            tenet,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    /// The built-in estimator, when the linear-flow branch is on.
    pub fn builtin_flow(&self) -> Option<&Arc<PyramidFlow<T>>> {
        self.builtin_flow.as_ref()
    }

    pub fn flow_estimator(&self) -> Option<&Arc<dyn FlowEstimator<T>>> {
        self.blfnet.as_ref().map(|b| b.estimator())
    }

    /// Routes the linear-flow branch through externally computed flows.
    pub fn use_precomputed_flows(&mut self, flows: Arc<PrecomputedFlows>) -> Result<()> {
        let b = self
            .blfnet
            .as_mut()
            .ok_or_else(|| Error::Validation("precomputed flows need the linear-flow branch".into()))?;
        b.set_estimator(flows);
        Ok(())
    }

    /// Parameter prefixes excluded from gradients in the current state.
    pub fn frozen_prefixes(&self) -> Vec<&'static str> {
        match self.flow_estimator() {
            Some(e) if e.is_frozen() => vec![ESTIMATOR_PREFIX],
            _ => Vec::new(),
        }
    }

    /// A training graph honouring the estimator's freeze switch.
    pub fn training_graph(&self) -> Graph<T> {
        Graph::training(&self.frozen_prefixes())
    }

    pub fn count_parameters(&self) -> ParameterReport {
        ParameterReport {
            total: self.store.numel(),
            modules: MODULES
                .iter()
                .map(|m| (m.to_string(), self.store.numel_with_prefix(m)))
                .collect(),
        }
    }

    /// Runs the network on `(B, 3, H, W)` inputs `[I0, I1, I2, I3]` of any
    /// size; padding and cropping are internal.
    pub fn forward(&self, g: &Graph<T>, frames: [&Var<T>; 4], opts: ForwardOptions) -> Result<ForwardOutput<T>> {
        let s = frames[0].shape().to_vec();
        if s.len() != 4 || s[1] != 3 {
            return dim_err(format!("expected (B, 3, H, W) frames, got {s:?}"));
        }
        if frames.iter().any(|f| f.shape() != s.as_slice()) {
            return dim_err("input frames differ in shape");
        }
        let (h, w) = (s[2], s[3]);
        if h < 8 || w < 8 {
            return dim_err(format!("frames of {h}×{w} are too small"));
        }
        let (ph, pw) = (h.next_multiple_of(PAD_MULTIPLE), w.next_multiple_of(PAD_MULTIPLE));
        let pad = |x: &Var<T>| {
            if (ph, pw) == (h, w) {
                x.clone()
            } else {
                x.pad2d([0, ph - h, 0, pw - w], Border::Reflect)
            }
        };
        let [i0, i1, i2, i3] = frames.map(pad);

        let mut warps = Vec::new();
        let mut flows = Vec::new();
        if let Some(bb) = &self.backbone {
            let feats = bb.extract(g, &i1, &i2)?;
            for head in &self.heads {
                let (g1, g2) = head.forward(g, head.input(&feats));
                let (s1, s2) = match head.level() {
                    Level::Up => (warp_ops::up2_8tap(&i1)?, warp_ops::up2_8tap(&i2)?),
                    Level::Full => (i1.clone(), i2.clone()),
                    Level::Down => (warp_ops::downsample2(&i1)?, warp_ops::downsample2(&i2)?),
                };
                let grid = self.cfg.grid();
                warps.push((head.level(), g1.warp(&s1, grid)?, g2.warp(&s2, grid)?));
                flows.push(LevelFlows {
                    level: head.level(),
                    g1,
                    g2,
                });
            }
        }
        let warp_at = |l: Level| warps.iter().find(|(wl, _, _)| *wl == l);
        let pair = |l: Level| warp_at(l).map(|(_, a, b)| Var::concat(&[a.clone(), b.clone()], 1));

        let blf = match &self.blfnet {
            Some(b) => Some(b.forward(g, &i1, &i2)?),
            None => None,
        };
        let mut mid = Vec::new();
        if let Some(p) = pair(Level::Full) {
            mid.push(p);
        }
        if let Some(o) = &blf {
            mid.push(o.soft1.clone());
            mid.push(o.soft2.clone());
            mid.push(Var::constant(o.holes1.clone()));
            mid.push(Var::constant(o.holes2.clone()));
        }
        let mid = Var::concat(&mid, 1);

        // Fixed blend the fusion output is added to: the mean multi-flow
        // warp, or the hole-aware mean of the splatted frames.
        let base = match (warp_at(Level::Full), &blf) {
            (Some((_, a, b)), _) => a.add(b).scale_f64(0.5),
            (None, Some(o)) => {
                let (v1, v2) = (o.holes1.map(|x| T::one() - x), o.holes2.map(|x| T::one() - x));
                let den = v1.zip_map(&v2, |a, b| (a + b).max(T::one()));
                let w1 = Var::constant(v1.zip_map(&den, |a, d| a / d));
                let w2 = Var::constant(v2.zip_map(&den, |a, d| a / d));
                o.soft1.mul(&w1).add(&o.soft2.mul(&w2))
            }
            (None, None) => unreachable!("validated: one branch is on"),
        };
        let stage1 = if opts.bypass_fusion {
            base
        } else {
            let (up, down) = (pair(Level::Up), pair(Level::Down));
            base.add(&self.fusion.forward(g, [up.as_ref(), Some(&mid), down.as_ref()])?)
        };
        let mut out = match &self.tenet {
            Some(t) => {
                let stack = TemporalStack::from_vars(&[i0, i1, stage1.clone(), i2, i3])?;
                stage1.add(&t.forward(g, &stack)?)
            }
            None => stage1.clone(),
        };
        let crop = |x: &Var<T>| if (ph, pw) == (h, w) { x.clone() } else { x.crop2d(0, 0, h, w) };
        out = crop(&out);
        if !g.is_training() && !opts.unclamped {
            out = out.clamp(0.0, 1.0);
        }
        Ok(ForwardOutput {
            output: out,
            stage1: crop(&stage1),
            warps,
            flows,
            padded: (ph, pw),
        })
    }

    /// Batched inference on frame quadruples.
    pub fn interpolate_batch(&self, quads: &[[Frame; 4]]) -> Result<Vec<Frame>> {
        if quads.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::inference();
        let col = |k: usize| {
            let fs: Vec<Frame> = quads.iter().map(|q| q[k].clone()).collect();
            Var::constant(Frame::stack(&fs))
        };
        let (a, b, c, d) = (col(0), col(1), col(2), col(3));
        let out = self.forward(&g, [&a, &b, &c, &d], ForwardOptions::default())?;
        (0..quads.len()).map(|i| Frame::from_array(out.output.value(), i)).collect()
    }
}

/// Four context frames around the unknown midpoint of `I1` and `I2`.
#[derive(Clone, Debug)]
pub struct InterpolationRequest {
    frames: [Frame; 4],
}

impl InterpolationRequest {
    pub fn new(frames: &[Frame]) -> Result<Self> {
        if frames.len() != 4 {
            return Err(Error::Validation(format!(
                "interpolation needs exactly 4 frames (I0, I1, I2, I3), got {}",
                frames.len()
            )));
        }
        if frames.iter().any(|f| !f.same_size(&frames[0])) {
            return dim_err("request frames differ in size");
        }
        Ok(Self {
            frames: [frames[0].clone(), frames[1].clone(), frames[2].clone(), frames[3].clone()],
        })
    }

    pub fn frames(&self) -> &[Frame; 4] {
        &self.frames
    }
}

/// The frame halfway between `I1` and `I2`.
pub fn interpolate_midpoint(model: &Stmfnet<f32>, req: &InterpolationRequest) -> Result<Frame> {
    Ok(model.interpolate_batch(std::slice::from_ref(&req.frames))?.remove(0))
}

/// Multiplies the frame rate by `factor` (2, 4 or 8) through repeated
/// midpoint synthesis. Missing context at the sequence ends is filled by
/// repeating the first/last frame. Output length is `(n − 1)·factor + 1`
/// with the originals at every `factor`-th position.
pub fn recursive_interpolate_with(
    frames: &[Frame],
    factor: usize,
    mut midpoint: impl FnMut(&[Frame; 4]) -> Result<Frame>,
) -> Result<Vec<Frame>> {
    if !matches!(factor, 2 | 4 | 8) {
        return Err(Error::Validation(format!("factor must be 2, 4 or 8, got {factor}")));
    }
    if frames.len() < 4 {
        return Err(Error::Validation(format!("need at least 4 frames, got {}", frames.len())));
    }
    if frames.iter().any(|f| !f.same_size(&frames[0])) {
        return dim_err("sequence frames differ in size");
    }
    let mut seq = frames.to_vec();
    let mut f = 1;
    while f < factor {
        let n = seq.len();
        let at = |i: isize| seq[i.clamp(0, n as isize - 1) as usize].clone();
        let mut next = Vec::with_capacity(2 * n - 1);
        for i in 0..n - 1 {
            let k = i as isize;
            let mid = midpoint(&[at(k - 1), at(k), at(k + 1), at(k + 2)])?;
            next.push(seq[i].clone());
            next.push(mid);
        }
        next.push(seq[n - 1].clone());
        seq = next;
        f *= 2;
    }
    Ok(seq)
}

pub fn recursive_interpolate(model: &Stmfnet<f32>, frames: &[Frame], factor: usize) -> Result<Vec<Frame>> {
    recursive_interpolate_with(frames, factor, |q| Ok(model.interpolate_batch(std::slice::from_ref(q))?.remove(0)))
}

/// Arrays of the current weights keyed by parameter path.
pub fn weight_snapshot<T: Scalar>(store: &ParamStore<T>) -> Vec<(String, Array<T>)> {
    store.params().iter().map(|p| (p.name().to_string(), p.value())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn variants_toggle_exactly() {
        let full = make_variant("full").unwrap();
        assert!(full.mifnet_on && full.blfnet_on && full.tenet_on);
        assert_eq!(full.backbone.kind, BackboneKind::UMSResNext);
        assert_eq!(full.n_flows, 25);
        let no_us = make_variant("no_us").unwrap();
        assert_eq!(no_us.levels, vec![Level::Full, Level::Down]);
        assert_eq!(ModelConfig { levels: full.levels.clone(), ..no_us.clone() }, full);
        assert!(!make_variant("no_tenet").unwrap().tenet_on);
        assert_eq!(make_variant("unet").unwrap().backbone.kind, BackboneKind::UNet);
        assert!(matches!(make_variant("bogus"), Err(Error::Config(_))));
    }

    #[test]
    fn entries_round_trip() {
        let cfg = make_variant_with("no_us", Preset::Tiny).unwrap();
        let mut other = ModelConfig::preset(Preset::Default);
        for (k, v) in cfg.entries() {
            other.set(&k, &v).unwrap();
        }
        assert_eq!(other, cfg);
        assert!(other.set("model.nope", "1").is_err());
    }

    #[test]
    fn tiny_preset_is_small_and_odd_sizes_round_trip() {
        let cfg = ModelConfig::preset(Preset::Tiny);
        let m = Stmfnet::<f32>::new(&cfg, 0).unwrap();
        let rep = m.count_parameters();
        assert!(rep.total < 200_000, "{rep:?}");
        assert_eq!(rep.modules.iter().map(|(_, n)| n).sum::<usize>(), rep.total);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fs: Vec<Frame> = (0..4).map(|_| noise_frame(&mut rng, 36, 50)).collect();
        let out = interpolate_midpoint(&m, &InterpolationRequest::new(&fs).unwrap()).unwrap();
        assert_eq!((out.height(), out.width()), (36, 50));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(InterpolationRequest::new(&fs[..3]).is_err());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        use crate::losses::lap_loss_var;
        use stmfnet_tensor::gradcheck::check_param_gradients;
        let model = Stmfnet::<f64>::new(&make_variant_with("full", Preset::Tiny).unwrap(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Zero-initialised output layers would hide most of the network and
        // put every flow on the integer grid, where bilinear sampling kinks.
        for p in model.params().params() {
            let n = p.name();
            if n.contains(".out.") || n.contains(".flow.") || n.starts_with("tenet.") && n.contains("out") {
                let v: Vec<f64> = (0..p.numel()).map(|_| rng.random_range(-0.05..0.05)).collect();
                p.set(Array::from_f64(&p.shape(), &v));
            }
        }
        let frames: Vec<Var<f64>> = (0..5).map(|_| Var::constant(noise_frame(&mut rng, 32, 32).to_array())).collect();
        let opts = ForwardOptions { unclamped: true, ..ForwardOptions::default() };
        let loss = |g: &Graph<f64>| {
            let out = model.forward(g, [&frames[0], &frames[1], &frames[3], &frames[4]], opts).unwrap();
            lap_loss_var(&out.output, &frames[2], 3).unwrap()
        };
        // Every top-level module must see a gradient, or the check below is vacuous.
        let g = Graph::training(&[]);
        let grads = g.param_grads(&loss(&g).backward());
        let mut live = std::collections::BTreeMap::<String, f64>::new();
        for (p, d) in &grads {
            let top = p.name().split('.').next().unwrap().to_string();
            *live.entry(top).or_default() += d.data().iter().map(|v| v * v).sum::<f64>();
        }
        assert!(live.len() >= 3 && live.values().all(|&n| n > 0.0), "{live:?}");
        let r = check_param_gradients(
            model.params().params(),
            loss,
            1e-6,
            60,
            3,
        );
        assert!(r.max_rel_error() < 1e-3, "{r:?}");
    }

    #[test]
    fn recursion_lengths_and_pass_through() {
        let fs: Vec<Frame> = (0..5).map(|i| Frame::filled(4, 4, i as f32 / 10.0)).collect();
        for (factor, len) in [(2, 9), (4, 17), (8, 33)] {
            let out = recursive_interpolate_with(&fs, factor, |q| {
                Ok(Frame::from_fn(4, 4, |y, x| {
                    let c = (q[1].get(y, x, 0) + q[2].get(y, x, 0)) / 2.0;
                    [c; 3]
                }))
            })
            .unwrap();
            assert_eq!(out.len(), len);
            for (i, f) in fs.iter().enumerate() {
                assert_eq!(&out[i * factor], f);
            }
        }
        assert!(recursive_interpolate_with(&fs, 3, |q| Ok(q[1].clone())).is_err());
    }
}
