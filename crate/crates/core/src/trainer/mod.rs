//! Dataset preparation, Adam, the two-stage schedule, and checkpoints.

mod adam;
mod checkpoint;
mod data;

use std::ops::ControlFlow;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_model, model_container, Checkpoint};
pub use data::{
    denormalize, extract_patches, normalize, patch_positions, split_dataset, split_index,
    Normalized, PatchSet, Provenance, PIXEL_SCALE,
};

use crate::autodiff::Tape;
use crate::error::{invalid, Error, Result};
use crate::network::{
    build_arch, forward_tape, init_glorot, register, ArchSpec, NetParams, Stats, Variant,
};
use crate::perceptual::{combined_loss_on_tape, FeatureExtractor, LossConfig};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub patch: usize,
    pub stride: usize,
    /// Epochs of stage 1 and stage 2.
    pub epochs: [usize; 2],
    pub lrs: [f64; 2],
    pub batch: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub variant: Variant,
    pub n_filters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch: 40,
            stride: 20,
            epochs: [20, 20],
            lrs: [1e-3, 1e-4],
            batch: 64,
            seed: 0,
            loss: LossConfig::default(),
            variant: Variant::DrlE,
            n_filters: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.stride == 0 || self.batch == 0 || self.n_filters == 0 {
            return Err(invalid("patch, stride, batch and n_filters must be >= 1"));
        }
        if self.total_epochs() == 0 {
            return Err(invalid("at least one epoch is required"));
        }
        if self.lrs.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(invalid(format!(
                "learning rates must be finite and > 0, got {:?}",
                self.lrs
            )));
        }
        self.loss.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs[0] + self.epochs[1]
    }

    /// `(stage, lr)` of the 0-based epoch.
    pub fn schedule(&self, epoch: usize) -> (u8, f64) {
        if epoch < self.epochs[0] {
            (1, self.lrs[0])
        } else {
            (2, self.lrs[1])
        }
    }
}

/// SHA-256 over the configuration and, when the feature term is active,
/// the extractor weights.
pub fn fingerprint(
    cfg: &TrainConfig,
    extractor: Option<&FeatureExtractor<f32>>,
) -> Result<[u8; 32]> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    if cfg.loss.needs_extractor() {
        if let Some(e) = extractor {
            h.update(e.to_container()?.to_bytes());
        }
    }
    Ok(h.finalize().into())
}

/// Weighted loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLoss {
    pub mse_term: f64,
    pub perceptual_term: f64,
    pub total: f64,
}

/// Network, optimizer state and objective.
pub struct Trainer<'a> {
    pub arch: ArchSpec,
    pub params: NetParams<f32>,
    pub adam: AdamState<f32>,
    pub adam_cfg: AdamConfig,
    loss: LossConfig,
    extractor: Option<&'a FeatureExtractor<f32>>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        arch: ArchSpec,
        params: NetParams<f32>,
        loss: LossConfig,
        extractor: Option<&'a FeatureExtractor<f32>>,
    ) -> Result<Self> {
        params.check(&arch)?;
        loss.validate()?;
        if loss.needs_extractor() && extractor.is_none() {
            return Err(invalid("the perceptual term needs extractor weights"));
        }
        let shapes: Vec<Shape> = params
            .named_trainables()
            .iter()
            .map(|(_, t)| t.shape())
            .collect();
        Ok(Trainer {
            arch,
            params,
            adam: AdamState::new(&shapes),
            adam_cfg: AdamConfig::default(),
            loss,
            extractor,
        })
    }

    /// One forward/backward pass with train-mode batch norm and one Adam
    /// update. A non-finite loss or gradient aborts before any weight moves.
    pub fn step(&mut self, low: &Tensor<f32>, normal: &Tensor<f32>, lr: f64) -> Result<StepLoss> {
        let mut tape = Tape::new();
        let vars = register(&mut tape, &self.params, true);
        let x = tape.constant(low.clone());
        let y = tape.constant(normal.clone());
        let out = forward_tape(
            &mut tape,
            &self.arch,
            &vars,
            Stats::Train(&mut self.params.running),
            x,
        )?;
        let terms = combined_loss_on_tape(&mut tape, &self.loss, self.extractor, out, y)?;
        let value =
            |v: Option<crate::autodiff::Var>| v.map_or(0.0, |v| tape.value(v).item() as f64);
        let loss = StepLoss {
            mse_term: value(terms.mse),
            perceptual_term: value(terms.perceptual),
            total: tape.value(terms.total).item() as f64,
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss ({})",
                tape.first_non_finite().unwrap_or("loss")
            )));
        }
        tape.backward(terms.total)?;
        let ordered = vars.ordered();
        let zero: Vec<Tensor<f32>> = ordered
            .iter()
            .map(|&v| Tensor::zeros(tape.shape(v)))
            .collect();
        let grads: Vec<&Tensor<f32>> = ordered
            .iter()
            .zip(&zero)
            .map(|(&v, z)| tape.grad(v).unwrap_or(z))
            .collect();
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        adam_step(
            &mut self.params.trainables_mut(),
            &grads,
            &mut self.adam,
            lr,
            self.adam_cfg,
        )?;
        Ok(loss)
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub mse_term: f64,
    pub perceptual_term: f64,
    pub total: f64,
}

pub fn write_loss_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_loss_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Records of the epochs run by this call.
    pub log: Vec<EpochRecord>,
}

/// Fresh training state: Glorot weights seeded from `cfg.seed`.
pub fn initial_checkpoint(
    cfg: &TrainConfig,
    extractor: Option<&FeatureExtractor<f32>>,
) -> Result<Checkpoint> {
    let arch = build_arch(cfg.variant, cfg.n_filters)?;
    let params = init_glorot::<f32>(&arch, cfg.seed)?;
    let shapes: Vec<Shape> = params
        .named_trainables()
        .iter()
        .map(|(_, t)| t.shape())
        .collect();
    Ok(Checkpoint {
        variant: cfg.variant,
        n_filters: cfg.n_filters,
        params,
        adam: AdamState::new(&shapes),
        epoch: 0,
        fingerprint: fingerprint(cfg, extractor)?,
    })
}

/// Runs the remaining epochs of the schedule. `on_epoch` sees every
/// finished epoch with its checkpoint and may stop the run early.
pub fn train<F>(
    cfg: &TrainConfig,
    data: &PatchSet,
    extractor: Option<&FeatureExtractor<f32>>,
    resume: Option<Checkpoint>,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &Checkpoint) -> Result<ControlFlow<()>>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("no training patches"));
    }
    if data.patch() != cfg.patch {
        return Err(invalid(format!(
            "patches are {} px but the config says {}",
            data.patch(),
            cfg.patch
        )));
    }
    let fp = fingerprint(cfg, extractor)?;
    let start = match resume {
        Some(ck) => {
            if ck.fingerprint != fp {
                return Err(Error::Config(
                    "resume checkpoint was written with a different configuration".into(),
                ));
            }
            ck
        }
        None => initial_checkpoint(cfg, extractor)?,
    };
    let first_epoch = start.epoch;
    let arch = start.arch()?;
    let mut trainer = Trainer::new(arch, start.params, cfg.loss, extractor)?;
    trainer.adam = start.adam;

    let mut log = Vec::new();
    let mut snapshot = None;
    for epoch in first_epoch..cfg.total_epochs() {
        let (stage, lr) = cfg.schedule(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut sums = StepLoss::default();
        for chunk in order.chunks(cfg.batch) {
            let (low, normal) = data.batch(chunk)?;
            let l = trainer.step(&low, &normal, lr).map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} in epoch {}", epoch + 1))
                }
                other => other,
            })?;
            let w = chunk.len() as f64;
            sums.mse_term += l.mse_term * w;
            sums.perceptual_term += l.perceptual_term * w;
            sums.total += l.total * w;
        }
        let n = data.len() as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            stage,
            lr,
            mse_term: sums.mse_term / n,
            perceptual_term: sums.perceptual_term / n,
            total: sums.total / n,
        };
        log::info!(
            "epoch {} stage {} lr {:e}: total {:.6e} (mse {:.6e}, perceptual {:.6e})",
            record.epoch,
            stage,
            lr,
            record.total,
            record.mse_term,
            record.perceptual_term
        );
        let ck = Checkpoint {
            variant: cfg.variant,
            n_filters: cfg.n_filters,
            params: trainer.params.clone(),
            adam: trainer.adam.clone(),
            epoch: epoch + 1,
            fingerprint: fp,
        };
        log.push(record);
        let flow = on_epoch(&record, &ck)?;
        snapshot = Some(ck);
        if flow.is_break() {
            break;
        }
    }
    let checkpoint = match snapshot {
        Some(ck) => ck,
        None => Checkpoint {
            variant: cfg.variant,
            n_filters: cfg.n_filters,
            params: trainer.params,
            adam: trainer.adam,
            epoch: first_epoch,
            fingerprint: fp,
        },
    };
    Ok(TrainOutcome { checkpoint, log })
}
