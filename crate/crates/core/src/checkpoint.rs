//! `STMFNET-CKPT-v1` archives: config snapshot, named weights, optimizer
//! moments and training state, sealed with a checksum.
//!
//! All floats are stored as little-endian `f64`, which round-trips `f32`
//! and `f64` weights bit for bit.

use std::path::Path;

use stmfnet_tensor::optim::AdaMax;
use stmfnet_tensor::{Array, ParamStore, Scalar};

use crate::config::{parse_pairs, render_pairs};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Preset, Stmfnet};
use crate::trainkit::{Stage, TrainState};

pub const MAGIC: &[u8] = b"STMFNET-CKPT-v1\n";
const FAMILY: &[u8] = b"STMFNET-CKPT-v";

pub type OptimizerSlots = Vec<(String, u64, Vec<f64>, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// `key=value` model configuration the weights belong to.
    pub config: Vec<(String, String)>,
    pub weights: Vec<WeightEntry>,
    /// Named optimizer states, e.g. `generator` and `discriminator`.
    pub optimizers: Vec<(String, OptimizerSlots)>,
    pub state: TrainState,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn store_weights<T: Scalar>(store: &ParamStore<T>) -> Vec<WeightEntry> {
    store
        .params()
        .iter()
        .map(|p| {
            let v = p.value();
            WeightEntry {
                name: p.name().to_string(),
                shape: v.shape().to_vec(),
                data: v.data().iter().map(|x| x.as_f64()).collect(),
            }
        })
        .collect()
}

pub fn optimizer_slots<T: Scalar>(opt: &AdaMax<T>) -> OptimizerSlots {
    opt.export_state()
        .into_iter()
        .map(|(n, s, m, u)| {
            (n, s, m.iter().map(|x| x.as_f64()).collect(), u.iter().map(|x| x.as_f64()).collect())
        })
        .collect()
}

pub fn restore_optimizer<T: Scalar>(opt: &mut AdaMax<T>, slots: &OptimizerSlots) {
    let conv = |v: &[f64]| v.iter().map(|&x| T::from_f64_lossy(x)).collect::<Vec<T>>();
    opt.import_state(slots.iter().map(|(n, s, m, u)| (n.clone(), *s, conv(m), conv(u))).collect());
}

/// Copies weights whose names fall under `prefix` (all when empty) into
/// `store`, requiring every parameter there to be present with its shape.
pub fn load_weights<T: Scalar>(store: &ParamStore<T>, weights: &[WeightEntry]) -> Result<()> {
    for p in store.params() {
        let w = weights
            .iter()
            .find(|w| w.name == p.name())
            .ok_or_else(|| Error::Checkpoint(format!("weight {} missing from checkpoint", p.name())))?;
        if w.shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "weight {} has shape {:?} in checkpoint but {:?} in model",
                p.name(),
                w.shape,
                p.shape()
            )));
        }
        p.set(Array::new(&w.shape, w.data.iter().map(|&x| T::from_f64_lossy(x)).collect()));
    }
    Ok(())
}

impl Checkpoint {
    pub fn capture<T: Scalar>(model: &Stmfnet<T>, state: TrainState) -> Self {
        Self {
            config: model.config().entries(),
            weights: store_weights(model.params()),
            optimizers: Vec::new(),
            state,
        }
    }

    pub fn with_optimizer(mut self, name: &str, slots: OptimizerSlots) -> Self {
        self.optimizers.push((name.to_string(), slots));
        self
    }

    pub fn with_weights(mut self, extra: Vec<WeightEntry>) -> Self {
        self.weights.extend(extra);
        self
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimizerSlots> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(Preset::Tiny);
        for (k, v) in &self.config {
            cfg.set(k, v).map_err(|e| Error::Checkpoint(format!("bad config snapshot: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the weights into `model`, whose config must match the snapshot.
    pub fn restore<T: Scalar>(&self, model: &Stmfnet<T>) -> Result<()> {
        let mine = model.config().entries();
        for (k, v) in &mine {
            match self.config.iter().find(|(ck, _)| ck == k) {
                Some((_, cv)) if cv == v => {}
                Some((_, cv)) => {
                    return Err(Error::Checkpoint(format!(
                        "config mismatch on {k}: checkpoint has {cv}, model has {v}"
                    )))
                }
                None => return Err(Error::Checkpoint(format!("checkpoint config lacks {k}"))),
            }
        }
        load_weights(model.params(), &self.weights)
    }

    /// Builds the snapshot's model and loads its weights.
    pub fn build_model<T: Scalar>(&self) -> Result<Stmfnet<T>> {
        let m = Stmfnet::new(&self.model_config()?, 0)?;
        self.restore(&m)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.str(&render_pairs(&self.config));
        w.u64(self.weights.len() as u64);
        for e in &self.weights {
            w.str(&e.name);
            w.u64(e.shape.len() as u64);
            for &d in &e.shape {
                w.u64(d as u64);
            }
            w.f64s(&e.data);
        }
        w.u64(self.optimizers.len() as u64);
        for (name, slots) in &self.optimizers {
            w.str(name);
            w.u64(slots.len() as u64);
            for (n, step, m, u) in slots {
                w.str(n);
                w.u64(*step);
                w.f64s(m);
                w.f64s(u);
            }
        }
        let s = &self.state;
        w.u64(s.epoch);
        w.u64(s.step);
        w.f64(s.lr);
        w.u64(s.best_val.is_some() as u64);
        w.f64(s.best_val.unwrap_or(0.0));
        w.u64(s.since_improvement as u64);
        w.str(s.stage.name());
        let sum = fnv1a(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            if bytes.starts_with(FAMILY) {
                return Err(Error::Checkpoint("unsupported checkpoint version (expected STMFNET-CKPT-v1)".into()));
            }
            return Err(Error::Checkpoint("not a STMFNET-CKPT-v1 archive".into()));
        }
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint("checkpoint is truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut r = Reader { b: body, pos: MAGIC.len() };
        let parsed = (|| -> Result<Self> {
            let config = parse_pairs(&r.str()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let n = r.len()?;
            let mut weights = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let name = r.str()?;
                let nd = r.len()?;
                let shape = (0..nd).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
                let data = r.f64s()?;
                if data.len() != shape.iter().product::<usize>() {
                    return Err(Error::Checkpoint(format!("weight {name}: size does not match shape")));
                }
                weights.push(WeightEntry { name, shape, data });
            }
            let n = r.len()?;
            let mut optimizers = Vec::new();
            for _ in 0..n {
                let name = r.str()?;
                let k = r.len()?;
                let mut slots = Vec::new();
                for _ in 0..k {
                    slots.push((r.str()?, r.u64()?, r.f64s()?, r.f64s()?));
                }
                optimizers.push((name, slots));
            }
            let epoch = r.u64()?;
            let step = r.u64()?;
            let lr = r.f64()?;
            let has_best = r.u64()? != 0;
            let best = r.f64()?;
            let since = r.len()?;
            let stage = Stage::parse(&r.str()?)?;
            Ok(Self {
                config,
                weights,
                optimizers,
                state: TrainState {
                    epoch,
                    step,
                    lr,
                    best_val: has_best.then_some(best),
                    since_improvement: since,
                    stage,
                },
            })
        })();
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let ck = match parsed {
            Ok(c) if r.pos == body.len() => c,
            // A shortened file shifts the checksum into the body and makes
            // reads run off the end.
            Ok(_) | Err(_) if fnv1a(body) != stored => {
                return Err(Error::Checkpoint("checkpoint is truncated or corrupt (checksum mismatch)".into()))
            }
            Ok(_) => return Err(Error::Checkpoint("trailing bytes after checkpoint payload".into())),
            Err(e) => return Err(e),
        };
        if fnv1a(body) != stored {
            return Err(Error::Checkpoint("checkpoint is corrupt (checksum mismatch)".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("checkpoint is truncated at byte {}", self.pos)));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.b.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {v} at byte {}", self.pos - 8)))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
