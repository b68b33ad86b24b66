use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{label_targets, Dataset};
use crate::energy::{sample_energies, EnergyConfig, SampleEnergies};
use crate::inference::{init_state, relax, ClampSpec, InitKind, RelaxConfig};
use crate::learning::bp::chain_path;
use crate::learning::{batch_clamps, TrainMode};
use crate::network::{Direction, Network};
use crate::{Error, Result, Scalar};

/// `q`-th percentile by linear interpolation between order statistics at
/// rank `(n - 1) q / 100`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("percentile {q} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("percentile of NaN values".into()));
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let rank = (v.len() - 1) as f64 * q / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Per-sample energies at equilibrium with image and label clamped and the
/// training initialisation.
pub fn equilibrium_energies<S: Scalar>(
    net: &Network<S>,
    data: &Dataset<S>,
    relax_cfg: &RelaxConfig,
    energy: &EnergyConfig,
    chunk: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let images = data.images.select(ndarray::Axis(0), part);
        let labels: Vec<usize> = part.iter().map(|&i| data.labels[i]).collect();
        let clamps = batch_clamps(net, images, Some(&labels), data.n_classes, TrainMode::Supervised)?;
        let mut state = init_state(net, &clamps, InitKind::for_family(net.family()), relax_cfg.seed)?;
        relax(net, &mut state, relax_cfg, energy)?;
        out.extend(sample_energies(net, &state, energy)?.total().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// Acceptance threshold for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Threshold {
    Total { value: f64 },
    /// Separate bounds on the discriminative and generative energies, for
    /// combined models.
    PerDirection { disc: f64, gen: f64 },
}

impl Threshold {
    fn accepts(&self, total: f64, disc: f64, gen: f64) -> bool {
        match *self {
            Threshold::Total { value } => total <= value,
            Threshold::PerDirection { disc: d, gen: g } => disc <= d && gen <= g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub relax: RelaxConfig,
    /// Upper bound on relaxation steps.
    pub max_steps: usize,
    /// Steps between median checks.
    pub check_every: usize,
    #[serde(default)]
    pub energy: EnergyConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            relax: RelaxConfig::new(0, 0.01),
            max_steps: 50_000,
            check_every: 100,
            energy: EnergyConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdSamples<S> {
    pub images: Array2<S>,
    pub energies: Vec<f64>,
    pub steps: usize,
    /// False when `max_steps` ran out before the batch median crossed the
    /// threshold.
    pub converged: bool,
}

fn median(v: &Array1<f64>) -> f64 {
    percentile(v.as_slice().expect("contiguous"), 50.0).unwrap_or(f64::INFINITY)
}

/// Label-conditioned sampling: the image layer starts uniform in `[-1, 1]`,
/// hidden layers at zero and the label clamped; inference runs until the
/// batch median energy is within the threshold, then the best half of the
/// batch that is within the threshold is kept.
pub fn threshold_sample<S: Scalar>(
    net: &Network<S>,
    label: usize,
    n_classes: usize,
    threshold: Threshold,
    batch: usize,
    seed: u64,
    cfg: &SampleConfig,
) -> Result<ThresholdSamples<S>> {
    if cfg.check_every == 0 {
        return Err(Error::InvalidArgument("check_every must be >= 1".into()));
    }
    let labels = vec![label; batch];
    let targets: Array2<S> = label_targets(&labels, n_classes, net.width(net.label_layer()))?;
    let clamps = ClampSpec::new().full(net.layer_id(net.label_layer()), targets);
    let mut state = init_state(net, &clamps, InitKind::Zeros, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    state.activities[net.image_layer()].mapv_inplace(|_| S::of(rng.random_range(-1.0..=1.0)));

    let split = |e: &SampleEnergies<S>| {
        let f = |a: Array1<S>| a.mapv(|v| v.as_f64());
        (
            f(e.total()),
            f(e.direction(net, Direction::Discriminative)),
            f(e.direction(net, Direction::Generative)),
        )
    };
    let mut steps = 0;
    let mut rcfg = cfg.relax.clone();
    let (mut total, mut disc, mut gen) = split(&sample_energies(net, &state, &cfg.energy)?);
    let done = |t: &Array1<f64>, d: &Array1<f64>, g: &Array1<f64>| {
        threshold.accepts(median(t), median(d), median(g))
    };
    while !done(&total, &disc, &gen) && steps < cfg.max_steps {
        rcfg.steps = cfg.check_every.min(cfg.max_steps - steps);
        rcfg.seed = cfg.relax.seed.wrapping_add(steps as u64);
        relax(net, &mut state, &rcfg, &cfg.energy)?;
        steps += rcfg.steps;
        (total, disc, gen) = split(&sample_energies(net, &state, &cfg.energy)?);
    }
    let converged = done(&total, &disc, &gen);
    let mut order: Vec<usize> = (0..batch).collect();
    order.sort_by(|&a, &b| total[a].total_cmp(&total[b]));
    let keep: Vec<usize> = order
        .into_iter()
        .take(batch.div_ceil(2))
        .filter(|&i| threshold.accepts(total[i], disc[i], gen[i]))
        .collect();
    Ok(ThresholdSamples {
        images: state.activities[net.image_layer()].select(ndarray::Axis(0), &keep),
        energies: keep.iter().map(|&i| total[i]).collect(),
        steps,
        converged,
    })
}

#[derive(Debug, Clone)]
pub struct AncestralSamples<S> {
    /// Draws of the top layer from `N(0, I)`.
    pub latent: Array2<S>,
    pub images: Array2<S>,
}

/// Ancestral sampling down the generative chain: the top layer from
/// `N(0, I)`, each hidden layer from `N(f(W x + b), I)`. Images are the
/// conditional mean unless `noisy_images` is set.
pub fn ancestral_sample<S: Scalar>(net: &Network<S>, n: usize, seed: u64, noisy_images: bool) -> Result<AncestralSamples<S>> {
    let path = chain_path(net, Direction::Generative, net.top_layer())?;
    if path.last().map(|&e| net.edge_dst(e)) != Some(net.image_layer()) {
        return Err(Error::InvalidSpec(
            "ancestral sampling needs a generative chain from the top layer to the image layer".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |shape: (usize, usize)| {
        Array2::from_shape_simple_fn(shape, || S::of(rng.sample::<f64, _>(StandardNormal)))
    };
    let latent = normal((n, net.width(net.top_layer())));
    let mut x = latent.clone();
    for (i, &e) in path.iter().enumerate() {
        x = net.edge_predict(e, x.view())?;
        if i + 1 < path.len() || noisy_images {
            x += &normal(x.dim());
        }
    }
    Ok(AncestralSamples { latent, images: x })
}
