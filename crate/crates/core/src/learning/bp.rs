//! Backprop baselines on chain MLPs with hand-derived reverse-mode gradients.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::pc::{epoch_order, TrainHooks};
use super::{AdamW, MetricsLog, TrainConfig, TrainMode};
use crate::data::{label_targets, one_hot_matrix, Dataset};
use crate::energy::EnergyConfig;
use crate::inference::RelaxConfig;
use crate::network::{Direction, Network, ParamGrads};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineKind {
    /// `1/2 |x_L - D(x_1)|^2`.
    DiscBp,
    /// `1/2 |x_1 - G(x_L)|^2`.
    GenBp,
    /// `1/2 |x_1 - G(x_L)|^2 + 1/2 |sg(x_L) - D(x_1)|^2`, with `x_L` relaxed.
    HybridBp,
    /// Autoencoder whose code splices `k` clamped label neurons into `D(x_1)`.
    Ae { k: usize },
}

impl BaselineKind {
    fn needs_disc(self) -> bool {
        !matches!(self, BaselineKind::GenBp)
    }

    fn needs_gen(self) -> bool {
        !matches!(self, BaselineKind::DiscBp)
    }

    /// Names of the loss terms, in the order reported by [`baseline_gradient`].
    pub fn term_names(self) -> Vec<String> {
        match self {
            BaselineKind::DiscBp => vec!["disc".into()],
            BaselineKind::GenBp => vec!["gen".into()],
            _ => vec!["gen".into(), "disc".into()],
        }
    }
}

/// Edges of a chain, from the start layer following one direction.
pub fn chain_path<S: Scalar>(net: &Network<S>, dir: Direction, start: usize) -> Result<Vec<usize>> {
    let mut path = Vec::new();
    let mut at = start;
    loop {
        let out: Vec<usize> = net.edges_in(dir).filter(|&e| net.edge_src(e) == at).collect();
        match out.len() {
            0 => break,
            1 => {
                path.push(out[0]);
                at = net.edge_dst(out[0]);
            }
            _ => {
                return Err(Error::InvalidSpec(format!(
                    "baselines need a chain topology; layer `{}` has {} outgoing {dir:?} edges",
                    net.layer_id(at),
                    out.len()
                )))
            }
        }
        if path.len() > net.n_edges() {
            return Err(Error::InvalidSpec("cyclic baseline chain".into()));
        }
    }
    Ok(path)
}

/// Forward and backward passes along one chain.
pub struct Chain {
    pub edges: Vec<usize>,
}

/// Intermediate values kept for the backward pass.
pub struct Tape<S> {
    /// Raw input of each edge.
    inputs: Vec<Array2<S>>,
    /// `g(input)` for edges with an input activation.
    transformed: Vec<Option<Array2<S>>>,
    derivs: Vec<Array2<S>>,
    pub output: Array2<S>,
}

impl Chain {
    pub fn new<S: Scalar>(net: &Network<S>, dir: Direction, from: usize, to: usize) -> Result<Self> {
        let edges = chain_path(net, dir, from)?;
        let end = edges.last().map(|&e| net.edge_dst(e));
        if end != Some(to) {
            return Err(Error::InvalidSpec(format!(
                "no {dir:?} chain from `{}` to `{}`",
                net.layer_id(from),
                net.layer_id(to)
            )));
        }
        Ok(Self { edges })
    }

    pub fn forward<S: Scalar>(&self, net: &Network<S>, x: Array2<S>) -> Tape<S> {
        let mut inputs = Vec::with_capacity(self.edges.len());
        let mut transformed = Vec::with_capacity(self.edges.len());
        let mut derivs = Vec::with_capacity(self.edges.len());
        let mut a = x;
        for &e in &self.edges {
            let (mut z, t) = net.preactivation(e, a.view());
            derivs.push(net.edge(e).activation.activate_in_place(&mut z));
            inputs.push(std::mem::replace(&mut a, z));
            transformed.push(t);
        }
        Tape {
            inputs,
            transformed,
            derivs,
            output: a,
        }
    }

    /// Accumulates parameter gradients for `d_out = dL/d(output)` and returns
    /// `dL/d(input)`.
    pub fn backward<S: Scalar>(
        &self,
        net: &Network<S>,
        tape: &Tape<S>,
        d_out: Array2<S>,
        grads: &mut ParamGrads<S>,
    ) -> Array2<S> {
        let mut d = d_out;
        for (i, &e) in self.edges.iter().enumerate().rev() {
            d *= &tape.derivs[i];
            let input = tape.transformed[i].as_ref().unwrap_or(&tape.inputs[i]);
            let gw = d.t().dot(input);
            match net.params.tie(e) {
                None => grads.weights[e].as_mut().expect("owned weight").scaled_add(S::one(), &gw),
                Some(t) => grads.weights[t].as_mut().expect("owned weight").scaled_add(S::one(), &gw.t()),
            }
            if let Some(gb) = grads.biases[e].as_mut() {
                *gb += &d.sum_axis(Axis(0));
            }
            let mut back = d.dot(&net.params.weight(e));
            let act = net.edge(e).input_activation;
            if !act.is_identity() {
                Zip::from(&mut back)
                    .and(&tape.inputs[i])
                    .for_each(|g, &x| *g *= act.deriv(x));
            }
            d = back;
        }
        d
    }
}

/// The two chains of a baseline network.
pub struct BaselineNet {
    pub disc: Option<Chain>,
    pub gen: Option<Chain>,
}

impl BaselineNet {
    pub fn new<S: Scalar>(net: &Network<S>, kind: BaselineKind) -> Result<Self> {
        let (img, top) = (net.image_layer(), net.top_layer());
        Ok(Self {
            disc: kind
                .needs_disc()
                .then(|| Chain::new(net, Direction::Discriminative, img, top))
                .transpose()?,
            gen: kind
                .needs_gen()
                .then(|| Chain::new(net, Direction::Generative, top, img))
                .transpose()?,
        })
    }

    fn disc(&self) -> &Chain {
        self.disc.as_ref().expect("discriminative chain")
    }

    fn gen(&self) -> &Chain {
        self.gen.as_ref().expect("generative chain")
    }
}

/// Loss value of a batch, split into terms.
#[derive(Debug, Clone, PartialEq)]
pub struct BpLoss {
    pub terms: Vec<f64>,
    pub total: f64,
}

fn half_sq_mean<S: Scalar>(d: &Array2<S>, alpha: Option<&Array1<S>>) -> f64 {
    let b = d.nrows().max(1) as f64;
    let s: f64 = match alpha {
        None => d.iter().map(|v| v.as_f64() * v.as_f64()).sum(),
        Some(a) => d
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(a)
                    .map(|(v, w)| w.as_f64() * v.as_f64() * v.as_f64())
                    .sum::<f64>()
            })
            .sum(),
    };
    0.5 * s / b
}

fn alphas<S: Scalar>(net: &Network<S>, cfg: &EnergyConfig) -> (S, Array1<S>) {
    let ag = S::of(cfg.alpha_gen.unwrap_or(1.0));
    let ad = cfg.alpha_disc.unwrap_or(1.0);
    let top = net.top_layer();
    let mut disc = Array1::from_elem(net.width(top), S::of(ad));
    if let Some(f) = cfg.free_alpha_disc.get(net.layer_id(top)) {
        if f.start <= disc.len() {
            disc.slice_mut(ndarray::s![f.start..]).fill(S::of(f.alpha));
        }
    }
    (ag, disc)
}

/// Loss and parameter gradient (of the batch-mean loss) of a baseline.
///
/// `x_top` is the target or latent value of the top layer: the one-hot label
/// for supervised baselines, the relaxed latent for hybridBP, and for the
/// autoencoder the label in its first `k` columns.
pub fn baseline_gradient<S: Scalar>(
    net: &Network<S>,
    kind: BaselineKind,
    x1: &Array2<S>,
    x_top: &Array2<S>,
    cfg: &EnergyConfig,
) -> Result<(BpLoss, ParamGrads<S>)> {
    let bn = BaselineNet::new(net, kind)?;
    let b = S::of(x1.nrows().max(1) as f64);
    let inv_b = S::one() / b;
    let (ag, ad) = alphas(net, cfg);
    let mut grads = net.params.zero_grads();
    let mut terms = Vec::new();
    match kind {
        BaselineKind::DiscBp => {
            let tape = bn.disc().forward(net, x1.clone());
            let diff = &tape.output - x_top;
            terms.push(half_sq_mean(&diff, None));
            bn.disc().backward(net, &tape, diff.mapv(|v| v * inv_b), &mut grads);
        }
        BaselineKind::GenBp => {
            let tape = bn.gen().forward(net, x_top.clone());
            let diff = &tape.output - x1;
            terms.push(half_sq_mean(&diff, None));
            bn.gen().backward(net, &tape, diff.mapv(|v| v * inv_b), &mut grads);
        }
        BaselineKind::HybridBp => {
            let g = bn.gen().forward(net, x_top.clone());
            let dg = &g.output - x1;
            terms.push(ag.as_f64() * half_sq_mean(&dg, None));
            bn.gen().backward(net, &g, dg.mapv(|v| v * ag * inv_b), &mut grads);
            let d = bn.disc().forward(net, x1.clone());
            let dd = &d.output - x_top;
            terms.push(half_sq_mean(&dd, Some(&ad)));
            let mut up = dd * ad.view().insert_axis(Axis(0));
            up.mapv_inplace(|v| v * inv_b);
            bn.disc().backward(net, &d, up, &mut grads);
        }
        BaselineKind::Ae { k } => {
            let width = net.width(net.top_layer());
            if k > width || x_top.ncols() != width {
                return Err(Error::Shape(format!(
                    "autoencoder code of width {width} cannot hold {k} clamped neurons"
                )));
            }
            let d = bn.disc().forward(net, x1.clone());
            let mut code = d.output.clone();
            code.slice_mut(ndarray::s![.., ..k]).assign(&x_top.slice(ndarray::s![.., ..k]));
            let g = bn.gen().forward(net, code.clone());
            let dg = &g.output - x1;
            terms.push(ag.as_f64() * half_sq_mean(&dg, None));
            let d_code = bn.gen().backward(net, &g, dg.mapv(|v| v * ag * inv_b), &mut grads);
            // Free code neurons are D(x1) itself: the gen gradient flows into D,
            // and their consistency error is identically zero.
            let mut d_disc = Array2::zeros(d.output.raw_dim());
            d_disc.slice_mut(ndarray::s![.., k..]).assign(&d_code.slice(ndarray::s![.., k..]));
            let dd = &d.output - &code;
            terms.push(half_sq_mean(&dd, Some(&ad)));
            let mut up = dd * ad.view().insert_axis(Axis(0));
            up.mapv_inplace(|v| v * inv_b);
            d_disc += &up;
            bn.disc().backward(net, &d, d_disc, &mut grads);
        }
    }
    let total = terms.iter().sum();
    Ok((BpLoss { terms, total }, grads))
}

/// Baseline loss without gradients.
pub fn baseline_loss<S: Scalar>(
    net: &Network<S>,
    kind: BaselineKind,
    x1: &Array2<S>,
    x_top: &Array2<S>,
    cfg: &EnergyConfig,
) -> Result<BpLoss> {
    Ok(baseline_gradient(net, kind, x1, x_top, cfg)?.0)
}

/// Relaxes the top-layer activity of genBP/hybridBP against the generative
/// term `alpha_gen/2 |x_1 - G(x_L)|^2` (plus the layer's decay), keeping the
/// coordinates where `clamped` is true fixed.
pub fn relax_latent<S: Scalar>(
    net: &Network<S>,
    x1: &Array2<S>,
    init: Array2<S>,
    clamped: Option<&Array2<bool>>,
    relax_cfg: &RelaxConfig,
    cfg: &EnergyConfig,
) -> Result<Array2<S>> {
    relax_cfg.validate()?;
    let top = net.top_layer();
    let chain = Chain::new(net, Direction::Generative, top, net.image_layer())?;
    let ag = S::of(cfg.alpha_gen.unwrap_or(1.0));
    let decay = S::of(net.decay(top));
    let (lr, m) = (S::of(relax_cfg.lr_x), S::of(relax_cfg.momentum));
    let mut x = init;
    let mut r = Array2::<S>::zeros(x.raw_dim());
    let mut scratch = net.params.zero_grads();
    for step in 1..=relax_cfg.steps {
        let tape = chain.forward(net, x.clone());
        let diff = (&tape.output - x1).mapv(|v| v * ag);
        let mut g = chain.backward(net, &tape, diff, &mut scratch);
        if decay > S::zero() {
            g.scaled_add(decay, &x);
        }
        if let Some(mask) = clamped {
            Zip::from(&mut g).and(mask).for_each(|v, &c| {
                if c {
                    *v = S::zero()
                }
            });
        }
        Zip::from(&mut r).and(&g).for_each(|r, &g| *r = m * *r - g);
        x.scaled_add(lr, &r);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                layer: net.layer_id(top).to_string(),
                energy: f64::INFINITY,
            });
        }
    }
    Ok(x)
}

/// Top-layer output used for classification: a forward pass where one
/// exists, otherwise the relaxed latent (genBP).
pub fn baseline_top<S: Scalar>(
    net: &Network<S>,
    kind: BaselineKind,
    x1: &Array2<S>,
    relax_cfg: &RelaxConfig,
    cfg: &EnergyConfig,
) -> Result<Array2<S>> {
    match kind {
        BaselineKind::GenBp => {
            let init = Array2::zeros((x1.nrows(), net.width(net.top_layer())));
            relax_latent(net, x1, init, None, relax_cfg, cfg)
        }
        _ => {
            let chain = Chain::new(net, Direction::Discriminative, net.image_layer(), net.top_layer())?;
            Ok(chain.forward(net, x1.clone()).output)
        }
    }
}

/// Generative forward pass from a top-layer activity.
pub fn baseline_generate<S: Scalar>(net: &Network<S>, top: Array2<S>) -> Result<Array2<S>> {
    let chain = Chain::new(net, Direction::Generative, net.top_layer(), net.image_layer())?;
    Ok(chain.forward(net, top).output)
}

/// Backprop training loop.
#[derive(Debug, Clone)]
pub struct BpTrainer<S> {
    pub net: Network<S>,
    pub kind: BaselineKind,
    pub opt: AdamW<S>,
    pub cfg: TrainConfig,
    pub epochs_done: usize,
}

impl<S: Scalar> BpTrainer<S> {
    pub fn new(net: Network<S>, kind: BaselineKind, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        BaselineNet::new(&net, kind)?;
        let opt = AdamW::new(cfg.adamw, &net.params)?;
        Ok(Self {
            net,
            kind,
            opt,
            cfg,
            epochs_done: 0,
        })
    }

    /// Top-layer values the loss is evaluated at for one batch.
    fn batch_top(&self, x1: &Array2<S>, labels: &[usize], n_classes: usize) -> Result<Array2<S>> {
        let width = self.net.width(self.net.top_layer());
        let one_hot = || one_hot_matrix::<S>(labels, n_classes);
        let check = |k: usize| -> Result<()> {
            if k > width {
                return Err(Error::InvalidArgument(format!(
                    "{k} label neurons do not fit a top layer of width {width}"
                )));
            }
            Ok(())
        };
        match (self.kind, self.cfg.mode) {
            (BaselineKind::Ae { k }, _) => {
                check(k)?;
                let mut top = Array2::zeros((x1.nrows(), width));
                if k > 0 {
                    if k != n_classes {
                        return Err(Error::InvalidArgument(format!(
                            "autoencoder clamps {k} neurons but data has {n_classes} classes"
                        )));
                    }
                    top.slice_mut(ndarray::s![.., ..k]).assign(&one_hot());
                }
                Ok(top)
            }
            (_, TrainMode::Supervised) => label_targets(labels, n_classes, width),
            (BaselineKind::HybridBp, mode) => {
                let k = match mode {
                    TrainMode::PartialClamp { k } => k,
                    _ => 0,
                };
                check(k)?;
                let chain = Chain::new(
                    &self.net,
                    Direction::Discriminative,
                    self.net.image_layer(),
                    self.net.top_layer(),
                )?;
                let mut init = chain.forward(&self.net, x1.clone()).output;
                let mut mask = Array2::from_elem(init.raw_dim(), false);
                if k > 0 {
                    init.slice_mut(ndarray::s![.., ..k]).assign(&one_hot());
                    mask.slice_mut(ndarray::s![.., ..k]).fill(true);
                }
                relax_latent(&self.net, x1, init, Some(&mask), &self.cfg.relax, &self.cfg.energy)
            }
            (kind, mode) => Err(Error::InvalidArgument(format!(
                "{kind:?} does not support {mode:?} training"
            ))),
        }
    }

    pub fn train_epoch(&mut self, data: &Dataset<S>, log: &mut MetricsLog) -> Result<()> {
        let epoch = self.epochs_done + 1;
        let order = epoch_order(data.len(), self.cfg.seed, epoch, self.cfg.shuffle);
        for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let x1 = data.images.select(Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let top = self.batch_top(&x1, &labels, data.n_classes)?;
            let (loss, grads) = baseline_gradient(&self.net, self.kind, &x1, &top, &self.cfg.energy)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingDivergence {
                    epoch,
                    batch: b,
                    step: 0,
                    layer: self.net.layer_id(self.net.top_layer()).to_string(),
                    energy: loss.total,
                });
            }
            self.opt.step(&mut self.net.params, &grads)?;
            log.push_loss(epoch, b, loss.total, loss.terms);
        }
        self.epochs_done = epoch;
        Ok(())
    }

    pub fn train(&mut self, data: &Dataset<S>, hooks: &mut TrainHooks<'_, S>) -> Result<MetricsLog> {
        let mut log = MetricsLog::new(self.kind.term_names());
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

/// Trains a baseline and returns it with the metrics log.
pub fn train_bp<S: Scalar>(
    net: Network<S>,
    kind: BaselineKind,
    data: &Dataset<S>,
    cfg: &TrainConfig,
) -> Result<(Network<S>, MetricsLog)> {
    let mut t = BpTrainer::new(net, kind, cfg.clone())?;
    let log = t.train(data, &mut TrainHooks::default())?;
    Ok((t.net, log))
}
