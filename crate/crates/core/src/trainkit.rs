//! Two-stage training: Laplacian distortion training with a flow-estimator
//! freeze schedule and plateau learning-rate control, then adversarial
//! fine-tuning against a spatio-temporal discriminator.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use stmfnet_tensor::optim::AdaMax;
use stmfnet_tensor::param::has_prefix;
use stmfnet_tensor::{Array, Graph, Param, ParamBuilder, ParamStore, Var};

use crate::blfnet::{pretrain_on_translations, FlowPretrainConfig, ESTIMATOR_PREFIX};
use crate::checkpoint::{load_weights, optimizer_slots, restore_optimizer, store_weights, Checkpoint};
use crate::config::{parse_bool, parse_value};
use crate::data::{augment, TrainingExample};
use crate::error::{Error, Result};
use crate::evalkit::{psnr, PSNR_CAP};
use crate::frame::Frame;
use crate::losses::{
    adversarial_loss_var, discriminator_loss_var, lap_loss_var, perceptual_loss_var, Discriminator,
    DiscriminatorConfig, LAMBDA, LAP_LEVELS,
};
use crate::model::{ForwardOptions, Stmfnet};

/// Prefix of discriminator parameters inside checkpoints.
pub const DISCRIMINATOR_PREFIX: &str = "discriminator";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Distortion,
    Gan,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Distortion => "distortion",
            Stage::Gan => "gan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "distortion" => Ok(Stage::Distortion),
            "gan" => Ok(Stage::Gan),
            _ => Err(Error::Checkpoint(format!("unknown stage tag {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// The flow estimator receives no gradient before this epoch.
    pub freeze_epochs: usize,
    pub plateau_factor: f64,
    pub patience: usize,
    pub seed: u64,
    /// Random crop side; 0 disables augmentation.
    pub crop: usize,
    pub lap_levels: usize,
    /// Caps the number of steps per epoch (0 = full pass).
    pub steps_per_epoch: usize,
    /// Synthetic-translation steps for the built-in flow estimator before
    /// a fresh run (0 skips).
    pub flow_pretrain_steps: usize,
    pub gan_epochs: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub lambda: f64,
    /// Consecutive saturated discriminator steps that abort the GAN stage.
    pub collapse_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 4,
            epochs: 70,
            freeze_epochs: 60,
            plateau_factor: 0.5,
            patience: 5,
            seed: 0,
            crop: 256,
            lap_levels: LAP_LEVELS,
            steps_per_epoch: 0,
            flow_pretrain_steps: FlowPretrainConfig::default().steps,
            gan_epochs: 5,
            gen_lr: 1e-4,
            disc_lr: 1e-4,
            lambda: LAMBDA,
            collapse_window: 500,
        }
    }
}

impl TrainConfig {
    /// Small-scale defaults for CI runs.
    pub fn tiny() -> Self {
        Self {
            epochs: 2,
            freeze_epochs: 1,
            crop: 64,
            lap_levels: 3,
            steps_per_epoch: 4,
            flow_pretrain_steps: 0,
            gan_epochs: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.freeze_epochs > self.epochs {
            return bad(format!("freeze epochs {} exceed total epochs {}", self.freeze_epochs, self.epochs));
        }
        if self.patience == 0 {
            return bad("plateau patience must be at least 1".into());
        }
        for (n, v) in [("lr", self.lr), ("gen_lr", self.gen_lr), ("disc_lr", self.disc_lr), ("plateau_factor", self.plateau_factor)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{n} must be positive, got {v}"));
            }
        }
        if self.batch_size == 0 || self.lap_levels == 0 {
            return bad("batch size and pyramid levels must be positive".into());
        }
        if self.lambda < 0.0 {
            return bad("lambda must be non-negative".into());
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        [
            ("train.lr", self.lr.to_string()),
            ("train.beta1", self.beta1.to_string()),
            ("train.beta2", self.beta2.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.freeze_epochs", self.freeze_epochs.to_string()),
            ("train.plateau_factor", self.plateau_factor.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.crop", self.crop.to_string()),
            ("train.lap_levels", self.lap_levels.to_string()),
            ("train.steps_per_epoch", self.steps_per_epoch.to_string()),
            ("train.flow_pretrain_steps", self.flow_pretrain_steps.to_string()),
            ("gan.epochs", self.gan_epochs.to_string()),
            ("gan.gen_lr", self.gen_lr.to_string()),
            ("gan.disc_lr", self.disc_lr.to_string()),
            ("gan.lambda", self.lambda.to_string()),
            ("gan.collapse_window", self.collapse_window.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "train.lr" => self.lr = parse_value(key, v)?,
            "train.beta1" => self.beta1 = parse_value(key, v)?,
            "train.beta2" => self.beta2 = parse_value(key, v)?,
            "train.batch_size" => self.batch_size = parse_value(key, v)?,
            "train.epochs" => self.epochs = parse_value(key, v)?,
            "train.freeze_epochs" => self.freeze_epochs = parse_value(key, v)?,
            "train.plateau_factor" => self.plateau_factor = parse_value(key, v)?,
            "train.patience" => self.patience = parse_value(key, v)?,
            "train.seed" => self.seed = parse_value(key, v)?,
            "train.crop" => self.crop = parse_value(key, v)?,
            "train.lap_levels" => self.lap_levels = parse_value(key, v)?,
            "train.steps_per_epoch" => self.steps_per_epoch = parse_value(key, v)?,
            "train.flow_pretrain_steps" => self.flow_pretrain_steps = parse_value(key, v)?,
            "train.augment" => {
                if !parse_bool(key, v)? {
                    self.crop = 0;
                }
            }
            "gan.epochs" => self.gan_epochs = parse_value(key, v)?,
            "gan.gen_lr" => self.gen_lr = parse_value(key, v)?,
            "gan.disc_lr" => self.disc_lr = parse_value(key, v)?,
            "gan.lambda" => self.lambda = parse_value(key, v)?,
            "gan.collapse_window" => self.collapse_window = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Whether the estimator is gated during `epoch` (0-based).
    pub fn estimator_frozen_at(&self, epoch: usize) -> bool {
        epoch < self.freeze_epochs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub best_val: Option<f64>,
    pub since_improvement: usize,
    pub stage: Stage,
}

impl TrainState {
    pub fn new(lr: f64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            lr,
            best_val: None,
            since_improvement: 0,
            stage: Stage::Distortion,
        }
    }
}

/// Plateau rule: a strictly better score resets the counter; otherwise it
/// grows, and on reaching `patience` the rate is scaled and the counter
/// restarts.
pub fn plateau_lr_update(state: &TrainState, val: f64, patience: usize, factor: f64) -> TrainState {
    let mut s = state.clone();
    if s.best_val.is_none_or(|b| val > b) {
        s.best_val = Some(val);
        s.since_improvement = 0;
    } else {
        s.since_improvement += 1;
        if s.since_improvement >= patience {
            s.lr *= factor;
            s.since_improvement = 0;
        }
    }
    s
}

/// JSON-lines training log, kept in memory and optionally mirrored to a
/// file.
#[derive(Debug, Default)]
pub struct TrainLog {
    pub records: Vec<Value>,
    sink: Option<BufWriter<File>>,
}

impl TrainLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            records: Vec::new(),
            sink: Some(BufWriter::new(f)),
        })
    }

    pub fn push(&mut self, v: Value) -> Result<()> {
        if let Some(w) = &mut self.sink {
            writeln!(w, "{v}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io("training log", e))?;
        }
        self.records.push(v);
        Ok(())
    }

    pub fn lines(&self) -> Vec<String> {
        self.records.iter().map(|v| v.to_string()).collect()
    }
}

/// Stacked batch tensors `(I0, I1, I2, I3, gt)`.
pub struct Batch {
    pub inputs: [Var<f32>; 4],
    pub target: Var<f32>,
}

impl Batch {
    pub fn new(examples: &[TrainingExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        if examples.iter().any(|e| !e.target.same_size(&examples[0].target)) {
            return Err(Error::Validation("batch mixes frame sizes; set a crop size".into()));
        }
        let col = |k: usize| {
            let fs: Vec<Frame> = examples.iter().map(|e| e.inputs[k].clone()).collect();
            Var::constant(Frame::stack(&fs))
        };
        let targets: Vec<Frame> = examples.iter().map(|e| e.target.clone()).collect();
        Ok(Self {
            inputs: [col(0), col(1), col(2), col(3)],
            target: Var::constant(Frame::stack(&targets)),
        })
    }

    pub fn refs(&self) -> [&Var<f32>; 4] {
        [&self.inputs[0], &self.inputs[1], &self.inputs[2], &self.inputs[3]]
    }
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("non-finite {what} ({v})")))
    }
}

/// Laplacian loss of one batch and the gradients of all trainable
/// parameters.
pub fn lap_gradients(
    model: &Stmfnet<f32>,
    batch: &Batch,
    levels: usize,
) -> Result<(f64, Vec<(Param<f32>, Array<f32>)>)> {
    let g = model.training_graph();
    let out = model.forward(&g, batch.refs(), ForwardOptions::default())?;
    let loss = lap_loss_var(&out.output, &batch.target, levels)?;
    let lv = loss.value().item() as f64;
    Ok((lv, g.param_grads(&loss.backward())))
}

/// `‖∇‖₂` over parameters under `prefix`.
pub fn gradient_norm(grads: &[(Param<f32>, Array<f32>)], prefix: &str) -> f64 {
    grads
        .iter()
        .filter(|(p, _)| has_prefix(p.name(), prefix))
        .map(|(_, g)| g.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Gradient norm reaching the flow estimator on `batch` when training is
/// in `epoch`.
pub fn estimator_gradient_norm(model: &Stmfnet<f32>, cfg: &TrainConfig, epoch: usize, batch: &Batch) -> Result<f64> {
    let est = model
        .flow_estimator()
        .ok_or_else(|| Error::Validation("model has no flow estimator".into()))?;
    est.set_frozen(cfg.estimator_frozen_at(epoch));
    let (_, grads) = lap_gradients(model, batch, cfg.lap_levels)?;
    Ok(gradient_norm(&grads, ESTIMATOR_PREFIX))
}

/// Mean PSNR of the model on `examples` (infinite values capped).
pub fn validation_psnr(model: &Stmfnet<f32>, examples: &[TrainingExample]) -> Result<f64> {
    let mut sum = 0.0;
    for e in examples {
        let out = model.interpolate_batch(std::slice::from_ref(&e.inputs))?.remove(0);
        sum += psnr(&out, &e.target)?.min(PSNR_CAP);
    }
    Ok(sum / examples.len().max(1) as f64)
}

/// Outcome of a training stage.
#[derive(Debug)]
pub struct StageOutcome {
    pub state: TrainState,
    pub last: Checkpoint,
    pub best_path: Option<PathBuf>,
}

fn epoch_order(n: usize, seed: u64, stage: Stage, epoch: usize) -> Vec<usize> {
    let salt = match stage {
        Stage::Distortion => 0x5eed,
        Stage::Gan => 0x9a11,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt ^ ((epoch as u64) << 20));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn prepare(cfg: &TrainConfig, examples: &[TrainingExample], order: &[usize], epoch: usize) -> Result<Vec<TrainingExample>> {
    order
        .iter()
        .map(|&i| {
            let ex = &examples[i];
            if cfg.crop == 0 {
                Ok(ex.clone())
            } else {
                let seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((epoch as u64) << 32) ^ i as u64;
                augment(ex, cfg.crop, seed)
            }
        })
        .collect()
}

/// Distortion-stage optimizer loop over a model.
pub struct Trainer<'m> {
    model: &'m Stmfnet<f32>,
    cfg: TrainConfig,
    opt: AdaMax<f32>,
    pub state: TrainState,
    pub log: TrainLog,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Stmfnet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            opt: AdaMax::new(cfg.lr, cfg.beta1, cfg.beta2),
            state: TrainState::new(cfg.lr),
            cfg,
            log: TrainLog::default(),
        })
    }

    /// Continues from a checkpoint's optimizer and state.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore(self.model)?;
        if let Some(s) = ck.optimizer("generator") {
            restore_optimizer(&mut self.opt, s);
        }
        self.state = ck.state.clone();
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        if let Some(e) = self.model.flow_estimator() {
            e.set_frozen(self.cfg.estimator_frozen_at(epoch));
        }
        self.state.epoch = epoch as u64;
    }

    /// One optimizer step on `examples` (already augmented); returns the
    /// Laplacian loss before the update.
    pub fn step(&mut self, examples: &[TrainingExample]) -> Result<f64> {
        let batch = Batch::new(examples)?;
        let (loss, grads) = lap_gradients(self.model, &batch, self.cfg.lap_levels)?;
        check_finite(loss, "Laplacian loss")?;
        self.opt.lr = self.state.lr;
        self.opt.step(&grads);
        self.state.step += 1;
        self.log.push(json!({
            "stage": "distortion",
            "epoch": self.state.epoch,
            "step": self.state.step,
            "lr": self.state.lr,
            "l_lap": loss,
        }))?;
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.model, self.state.clone()).with_optimizer("generator", optimizer_slots(&self.opt))
    }

    /// Runs all epochs. Validation after each epoch drives the plateau
    /// rule; the best model is written to `out_dir/best.ckpt`.
    pub fn run(&mut self, train: &[TrainingExample], val: &[TrainingExample], out_dir: Option<&Path>) -> Result<StageOutcome> {
        if train.is_empty() {
            return Err(Error::Training("no training examples".into()));
        }
        let mut best_path = None;
        let start = self.state.epoch as usize;
        for epoch in start..self.cfg.epochs {
            self.set_epoch(epoch);
            let order = epoch_order(train.len(), self.cfg.seed, Stage::Distortion, epoch);
            let mut steps = 0;
            for chunk in order.chunks(self.cfg.batch_size) {
                if self.cfg.steps_per_epoch > 0 && steps >= self.cfg.steps_per_epoch {
                    break;
                }
                let batch = prepare(&self.cfg, train, chunk, epoch)?;
                if let Err(e) = self.step(&batch) {
                    return Err(self.abort(e, out_dir));
                }
                steps += 1;
            }
            if !val.is_empty() {
                let score = validation_psnr(self.model, val)?;
                let improved = self.state.best_val.is_none_or(|b| score > b);
                self.state = plateau_lr_update(&self.state, score, self.cfg.patience, self.cfg.plateau_factor);
                self.log.push(json!({
                    "stage": "distortion",
                    "epoch": epoch,
                    "step": self.state.step,
                    "lr": self.state.lr,
                    "val_psnr": score,
                }))?;
                if improved {
                    if let Some(d) = out_dir {
                        let p = d.join("best.ckpt");
                        self.checkpoint().save(&p)?;
                        best_path = Some(p);
                    }
                }
            }
            self.state.epoch = epoch as u64 + 1;
        }
        let last = self.checkpoint();
        if let Some(d) = out_dir {
            last.save(&d.join("last.ckpt"))?;
        }
        Ok(StageOutcome {
            state: self.state.clone(),
            last,
            best_path,
        })
    }

    fn abort(&self, e: Error, out_dir: Option<&Path>) -> Error {
        let Error::Training(msg) = e else { return e };
        let snap = out_dir.map(|d| d.join("diverged.ckpt"));
        let saved = snap.as_ref().map(|p| self.checkpoint().save(p));
        let note = match (snap, saved) {
            (Some(p), Some(Ok(()))) => format!("; snapshot written to {}", p.display()),
            _ => String::new(),
        };
        Error::Training(format!(
            "{msg} at epoch {} step {} (lr {}){note}",
            self.state.epoch, self.state.step, self.state.lr
        ))
    }
}

/// Stands in for pre-trained estimator weights: fits the built-in
/// estimator to synthetic translations. No-op for external flows.
pub fn pretrain_builtin_flow(model: &Stmfnet<f32>, cfg: &TrainConfig, log: &mut TrainLog) -> Result<()> {
    let Some(est) = model.builtin_flow().filter(|_| model.config().blfnet_on && cfg.flow_pretrain_steps > 0) else {
        return Ok(());
    };
    let params: Vec<_> = model
        .params()
        .params()
        .iter()
        .filter(|p| has_prefix(p.name(), ESTIMATOR_PREFIX))
        .cloned()
        .collect();
    let pre = FlowPretrainConfig {
        steps: cfg.flow_pretrain_steps,
        seed: cfg.seed,
        ..FlowPretrainConfig::default()
    };
    let epe = pretrain_on_translations(est, &params, &pre)?;
    let tail = &epe[epe.len().saturating_sub(50)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    log::info!("flow estimator pre-trained for {} steps, final end-point error {mean:.3}", pre.steps);
    log.push(json!({"phase": "flow_pretrain", "steps": pre.steps, "epe": mean}))
}

/// Trains the distortion stage from scratch.
pub fn train_distortion_stage(
    model: &Stmfnet<f32>,
    train: &[TrainingExample],
    val: &[TrainingExample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<(StageOutcome, TrainLog)> {
    let mut t = Trainer::new(model, cfg.clone())?;
    if let Some(p) = log_path {
        t.log = TrainLog::to_file(p)?;
    }
    pretrain_builtin_flow(model, cfg, &mut t.log)?;
    let out = t.run(train, val, out_dir)?;
    Ok((out, t.log))
}

/// Per-step adversarial statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanStats {
    pub l_lap: f64,
    pub l_adv: f64,
    pub l_d: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

/// Alternating discriminator / generator updates.
pub struct GanTrainer<'m> {
    model: &'m Stmfnet<f32>,
    disc: Discriminator<f32>,
    disc_store: ParamStore<f32>,
    cfg: TrainConfig,
    opt_g: AdaMax<f32>,
    opt_d: AdaMax<f32>,
    saturated_run: usize,
    pub state: TrainState,
    pub log: TrainLog,
}

impl<'m> GanTrainer<'m> {
    pub fn new(model: &'m Stmfnet<f32>, disc_cfg: &DiscriminatorConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut disc_store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c);
        let disc = {
            let mut pb = ParamBuilder::new(&mut disc_store, &mut rng);
            Discriminator::new(&mut pb.sub(DISCRIMINATOR_PREFIX), disc_cfg)?
        };
        let mut state = TrainState::new(cfg.gen_lr);
        state.stage = Stage::Gan;
        Ok(Self {
            model,
            disc,
            disc_store,
            opt_g: AdaMax::new(cfg.gen_lr, cfg.beta1, cfg.beta2),
            opt_d: AdaMax::new(cfg.disc_lr, cfg.beta1, cfg.beta2),
            cfg,
            saturated_run: 0,
            state,
            log: TrainLog::default(),
        })
    }

    pub fn discriminator(&self) -> &Discriminator<f32> {
        &self.disc
    }

    pub fn discriminator_params(&self) -> &ParamStore<f32> {
        &self.disc_store
    }

    /// Loads discriminator weights and optimizer states if present.
    pub fn resume(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore(self.model)?;
        if ck.weights.iter().any(|w| has_prefix(&w.name, DISCRIMINATOR_PREFIX)) {
            load_weights(&self.disc_store, &ck.weights)?;
        }
        if ck.state.stage == Stage::Gan {
            if let Some(s) = ck.optimizer("generator") {
                restore_optimizer(&mut self.opt_g, s);
            }
            if let Some(s) = ck.optimizer("discriminator") {
                restore_optimizer(&mut self.opt_d, s);
            }
            self.state = ck.state.clone();
        }
        Ok(())
    }

    /// One discriminator step on the current output, then one generator
    /// step on `l_lap + λ·l_adv` against the updated discriminator.
    pub fn step(&mut self, examples: &[TrainingExample]) -> Result<GanStats> {
        let batch = Batch::new(examples)?;
        let mut frozen = self.model.frozen_prefixes();
        frozen.push(DISCRIMINATOR_PREFIX);
        let g = Graph::training(&frozen);
        let out = self.model.forward(&g, batch.refs(), ForwardOptions::default())?;
        let (i1, i2) = (&batch.inputs[1], &batch.inputs[2]);

        let gd = Graph::training(&[]);
        let fake = Var::constant(out.output.value().clone());
        let d_fake = self.disc.forward(&gd, &fake, i1, i2)?;
        let d_real = self.disc.forward(&gd, &batch.target, i1, i2)?;
        let l_d = discriminator_loss_var(&d_fake, &d_real);
        let stats_d = (
            l_d.value().item() as f64,
            d_real.value().sum_f64() / d_real.value().numel() as f64,
            d_fake.value().sum_f64() / d_fake.value().numel() as f64,
        );
        check_finite(stats_d.0, "discriminator loss")?;
        self.opt_d.step(&gd.param_grads(&l_d.backward()));

        let l_lap = lap_loss_var(&out.output, &batch.target, self.cfg.lap_levels)?;
        let d_gen = self.disc.forward(&g, &out.output, i1, i2)?;
        let l_adv = adversarial_loss_var(&d_gen);
        let total = perceptual_loss_var(&l_lap, &l_adv, self.cfg.lambda);
        let stats = GanStats {
            l_lap: l_lap.value().item() as f64,
            l_adv: l_adv.value().item() as f64,
            l_d: stats_d.0,
            d_real: stats_d.1,
            d_fake: stats_d.2,
        };
        check_finite(total.value().item() as f64, "generator loss")?;
        self.opt_g.lr = self.state.lr;
        self.opt_g.step(&g.param_grads(&total.backward()));
        self.state.step += 1;
        self.log.push(json!({
            "stage": "gan",
            "epoch": self.state.epoch,
            "step": self.state.step,
            "lr": self.state.lr,
            "l_lap": stats.l_lap,
            "l_adv": stats.l_adv,
            "l_d": stats.l_d,
            "d_real": stats.d_real,
            "d_fake": stats.d_fake,
        }))?;
        let saturated = |d: f64| !(0.02..=0.98).contains(&d);
        if saturated(stats.d_real) && saturated(stats.d_fake) {
            self.saturated_run += 1;
            if self.saturated_run >= self.cfg.collapse_window {
                return Err(Error::Training(format!(
                    "discriminator collapsed: d_real {:.4}, d_fake {:.4} saturated for {} steps",
                    stats.d_real, stats.d_fake, self.saturated_run
                )));
            }
        } else {
            self.saturated_run = 0;
        }
        Ok(stats)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.model, self.state.clone())
            .with_weights(store_weights(&self.disc_store))
            .with_optimizer("generator", optimizer_slots(&self.opt_g))
            .with_optimizer("discriminator", optimizer_slots(&self.opt_d))
    }

    pub fn run(&mut self, train: &[TrainingExample], val: &[TrainingExample], out_dir: Option<&Path>) -> Result<StageOutcome> {
        if train.is_empty() {
            return Err(Error::Training("no training examples".into()));
        }
        if let Some(e) = self.model.flow_estimator() {
            e.set_frozen(false);
        }
        let mut best_path = None;
        let start = self.state.epoch as usize;
        for epoch in start..self.cfg.gan_epochs {
            self.state.epoch = epoch as u64;
            let order = epoch_order(train.len(), self.cfg.seed, Stage::Gan, epoch);
            for (n, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
                if self.cfg.steps_per_epoch > 0 && n >= self.cfg.steps_per_epoch {
                    break;
                }
                let batch = prepare(&self.cfg, train, chunk, epoch)?;
                self.step(&batch)?;
            }
            if !val.is_empty() {
                let score = validation_psnr(self.model, val)?;
                let improved = self.state.best_val.is_none_or(|b| score > b);
                self.state = plateau_lr_update(&self.state, score, self.cfg.patience, self.cfg.plateau_factor);
                self.log.push(json!({"stage": "gan", "epoch": epoch, "step": self.state.step, "lr": self.state.lr, "val_psnr": score}))?;
                if improved {
                    if let Some(d) = out_dir {
                        let p = d.join("best_gan.ckpt");
                        self.checkpoint().save(&p)?;
                        best_path = Some(p);
                    }
                }
            }
            self.state.epoch = epoch as u64 + 1;
        }
        let last = self.checkpoint();
        if let Some(d) = out_dir {
            last.save(&d.join("last_gan.ckpt"))?;
        }
        Ok(StageOutcome {
            state: self.state.clone(),
            last,
            best_path,
        })
    }
}

/// Fine-tunes a distortion-stage checkpoint adversarially.
pub fn finetune_gan_stage(
    model: &Stmfnet<f32>,
    start: &Checkpoint,
    disc_cfg: &DiscriminatorConfig,
    train: &[TrainingExample],
    val: &[TrainingExample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<(StageOutcome, TrainLog)> {
    let mut t = GanTrainer::new(model, disc_cfg, cfg.clone())?;
    t.resume(start)?;
    if let Some(p) = log_path {
        t.log = TrainLog::to_file(p)?;
    }
    let out = t.run(train, val, out_dir)?;
    Ok((out, t.log))
}
