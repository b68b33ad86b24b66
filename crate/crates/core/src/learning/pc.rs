use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamW, AdamWConfig, MetricsLog, MetricsRow};
use crate::data::{label_targets, one_hot_matrix, Dataset};
use crate::energy::{EnergyConfig, Evaluation};
use crate::inference::{init_state, relax, ClampSpec, InitKind, NetworkState, RelaxConfig};
use crate::network::Network;
use crate::{Error, Result, Scalar};

/// What is clamped during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainMode {
    /// Image and one-hot label.
    Supervised,
    /// Image only.
    Unsupervised,
    /// Image plus the first `k` neurons of the label layer.
    PartialClamp { k: usize },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub relax: RelaxConfig,
    pub adamw: AdamWConfig,
    pub mode: TrainMode,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the family's default initialisation.
    #[serde(default)]
    pub init: Option<InitKind>,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        self.relax.validate()?;
        self.adamw.validate()?;
        self.energy.validate()
    }
}

/// Clamps for a batch of images (and labels, depending on `mode`).
pub fn batch_clamps<S: Scalar>(
    net: &Network<S>,
    images: Array2<S>,
    labels: Option<&[usize]>,
    n_classes: usize,
    mode: TrainMode,
) -> Result<ClampSpec<S>> {
    let image_id = net.layer_id(net.image_layer()).to_string();
    let label_id = net.layer_id(net.label_layer()).to_string();
    let label_width = net.width(net.label_layer());
    let clamps = ClampSpec::new().full(image_id, images);
    let one_hot = |labels: &[usize]| one_hot_matrix::<S>(labels, n_classes);
    Ok(match mode {
        TrainMode::Unsupervised => clamps,
        TrainMode::Supervised => {
            let labels = labels.ok_or_else(|| Error::Data("supervised mode needs labels".into()))?;
            let targets = label_targets(labels, n_classes, label_width)?;
            clamps.full(label_id, targets)
        }
        TrainMode::PartialClamp { k } => {
            let labels = labels.ok_or_else(|| Error::Data("partial clamping needs labels".into()))?;
            if k != n_classes || k > label_width {
                return Err(Error::InvalidArgument(format!(
                    "partial clamp of {k} label neurons does not fit {n_classes} classes in width {label_width}"
                )));
            }
            let mut values = Array2::zeros((labels.len(), label_width));
            values.slice_mut(ndarray::s![.., ..k]).assign(&one_hot(labels));
            clamps.columns(label_id, values, 0..k)
        }
    })
}

/// Hooks called during training.
#[derive(Default)]
pub struct TrainHooks<'a, S> {
    /// Validation metric computed after every epoch.
    pub validate: Option<&'a dyn Fn(&Network<S>) -> Result<f64>>,
    /// Called with each epoch's summary row.
    pub on_epoch: Option<&'a mut dyn FnMut(&MetricsRow)>,
}

/// Batch order of an epoch: a permutation seeded by the run seed and epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let s = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    order
}

/// Predictive-coding training loop with its optimizer state.
#[derive(Debug, Clone)]
pub struct PcTrainer<S> {
    pub net: Network<S>,
    pub opt: AdamW<S>,
    pub cfg: TrainConfig,
    pub epochs_done: usize,
}

impl<S: Scalar> PcTrainer<S> {
    pub fn new(net: Network<S>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if net.family().is_backprop() {
            return Err(Error::InvalidArgument(format!(
                "{} is a backprop baseline; use the baseline trainer",
                net.family().name()
            )));
        }
        let opt = AdamW::new(cfg.adamw, &net.params)?;
        Ok(Self {
            net,
            opt,
            cfg,
            epochs_done: 0,
        })
    }

    pub fn init_kind(&self) -> InitKind {
        self.cfg.init.unwrap_or_else(|| InitKind::for_family(self.net.family()))
    }

    /// Clamps, initialises and relaxes one batch; returns the relaxed state.
    pub fn infer_batch(
        &self,
        images: Array2<S>,
        labels: &[usize],
        n_classes: usize,
        relax_seed: u64,
    ) -> Result<NetworkState<S>> {
        let clamps = batch_clamps(&self.net, images, Some(labels), n_classes, self.cfg.mode)?;
        let mut state = init_state(&self.net, &clamps, self.init_kind(), relax_seed)?;
        let mut rcfg = self.cfg.relax.clone();
        rcfg.seed = relax_seed;
        relax(&self.net, &mut state, &rcfg, &self.cfg.energy)?;
        Ok(state)
    }

    /// Runs one epoch, appending per-batch rows to `log`.
    pub fn train_epoch(&mut self, data: &Dataset<S>, log: &mut MetricsLog) -> Result<()> {
        let epoch = self.epochs_done + 1;
        let order = epoch_order(data.len(), self.cfg.seed, epoch, self.cfg.shuffle);
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let images = data.images.select(Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let relax_seed = self
                .cfg
                .relax
                .seed
                .wrapping_add(self.opt.state.step.wrapping_mul(0x2545_F491_4F6C_DD1D));
            let state = self
                .infer_batch(images, &labels, data.n_classes, relax_seed)
                .map_err(|e| match e {
                    Error::Divergence {
                        step,
                        layer,
                        energy,
                    } => Error::TrainingDivergence {
                        epoch,
                        batch: b,
                        step,
                        layer,
                        energy,
                    },
                    other => other,
                })?;
            let eval = Evaluation::new(&self.net, &state, &self.cfg.energy)?;
            let energy = eval.breakdown(&self.net, &state);
            let grads = eval.weight_gradient(&self.net, &state);
            self.opt.step(&mut self.net.params, &grads)?;
            log.push_batch(epoch, b, &energy);
        }
        self.epochs_done = epoch;
        Ok(())
    }

    /// Trains for the configured number of epochs (minus those already done).
    pub fn train(&mut self, data: &Dataset<S>, hooks: &mut TrainHooks<'_, S>) -> Result<MetricsLog> {
        let mut log = MetricsLog::new(self.net.spec().edges.iter().map(|e| e.id.clone()).collect());
        while self.epochs_done < self.cfg.epochs {
            self.train_epoch(data, &mut log)?;
            let val = match hooks.validate {
                Some(f) => Some(f(&self.net)?),
                None => None,
            };
            let row = log.close_epoch(self.epochs_done, val);
            if let Some(cb) = hooks.on_epoch.as_mut() {
                cb(&row);
            }
        }
        Ok(log)
    }
}

/// Trains `net` on `data` and returns it with the metrics log.
pub fn train_pc<S: Scalar>(
    net: Network<S>,
    data: &Dataset<S>,
    cfg: &TrainConfig,
) -> Result<(Network<S>, MetricsLog)> {
    let mut trainer = PcTrainer::new(net, cfg.clone())?;
    let log = trainer.train(data, &mut TrainHooks::default())?;
    Ok((trainer.net, log))
}
