//! Measurement protocols: classification, conditional generation,
//! reconstruction, linear readout, occlusion, energy landscapes and sampling.

mod artifacts;
mod landscape;
mod readout;
mod sampling;

pub use artifacts::{image_grid_pgm, write_pgm_grid};
pub use landscape::{combine_networks, energy_landscape, Landscape, LandscapeConfig};
pub use readout::linear_readout;
pub use sampling::{
    ancestral_sample, equilibrium_energies, percentile, threshold_sample, AncestralSamples,
    SampleConfig, Threshold, ThresholdSamples,
};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{decode_labels, label_targets, mask_pixels, Dataset, PixelMask};
use crate::energy::EnergyConfig;
use crate::inference::{init_state, relax, ClampSpec, InitKind, RelaxConfig};
use crate::learning::bp::{baseline_generate, baseline_top, relax_latent, Chain};
use crate::learning::BaselineKind;
use crate::network::{Direction, ModelFamily, Network};
use crate::{Error, Result, Scalar};

fn default_relax() -> RelaxConfig {
    RelaxConfig::new(100, 0.01)
}

fn default_percentile() -> f64 {
    10.0
}

fn default_fractions() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

fn default_chunk() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_relax")]
    pub relax: RelaxConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
    /// Overrides the family's initialisation for classification.
    #[serde(default)]
    pub init: Option<InitKind>,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default = "default_fractions")]
    pub occlusion_fractions: Vec<f64>,
    /// Relaxation steps with occluded inputs; defaults to `relax.steps`.
    #[serde(default)]
    pub occlusion_steps: Option<usize>,
    /// Samples relaxed together.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            relax: default_relax(),
            energy: EnergyConfig::default(),
            init: None,
            percentile: default_percentile(),
            occlusion_fractions: default_fractions(),
            occlusion_steps: None,
            chunk: default_chunk(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.relax.validate()?;
        self.energy.validate()?;
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::InvalidArgument(format!(
                "percentile must lie in (0, 100), got {}",
                self.percentile
            )));
        }
        if let Some(f) = self.occlusion_fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::InvalidArgument(format!("occlusion fraction {f} outside [0, 1]")));
        }
        if self.chunk == 0 {
            return Err(Error::InvalidArgument("chunk must be >= 1".into()));
        }
        Ok(())
    }
}

/// A trained model: a PC network, or a network used as a backprop baseline.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a, S> {
    pub net: &'a Network<S>,
    pub baseline: Option<BaselineKind>,
}

impl<'a, S: Scalar> Model<'a, S> {
    pub fn pc(net: &'a Network<S>) -> Self {
        Self { net, baseline: None }
    }

    pub fn bp(net: &'a Network<S>, kind: BaselineKind) -> Self {
        Self {
            net,
            baseline: Some(kind),
        }
    }

    fn family(&self) -> ModelFamily {
        self.net.family()
    }
}

/// Initialisation for inference with the image clamped.
pub fn classify_init(family: ModelFamily) -> InitKind {
    match family {
        ModelFamily::GenPc => InitKind::TopDownSweep,
        ModelFamily::BimodalGenPc => InitKind::Zeros,
        ModelFamily::BimodalBpc => InitKind::Propagate,
        _ => InitKind::BottomUpSweep,
    }
}

/// Initialisation for inference with the label clamped.
pub fn generate_init(family: ModelFamily) -> InitKind {
    match family {
        ModelFamily::DiscPc => InitKind::BottomUpSweep,
        ModelFamily::BimodalGenPc => InitKind::Zeros,
        _ => InitKind::Propagate,
    }
}

fn chunks(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).step_by(size.max(1)).map(move |a| a..(a + size).min(n))
}

fn layer_id<S: Scalar>(net: &Network<S>, l: usize) -> String {
    net.layer_id(l).to_string()
}

/// Relaxes with `clamps` and returns the final activities of `read`.
fn infer_layer<S: Scalar>(
    net: &Network<S>,
    clamps: &ClampSpec<S>,
    init: InitKind,
    relax_cfg: &RelaxConfig,
    energy: &EnergyConfig,
    read: usize,
) -> Result<Array2<S>> {
    let mut state = init_state(net, clamps, init, relax_cfg.seed)?;
    relax(net, &mut state, relax_cfg, energy)?;
    Ok(std::mem::take(&mut state.activities[read]))
}

/// Label-layer activities after inference with the image clamped (forward
/// pass, or latent relaxation for genBP).
pub fn label_outputs<S: Scalar>(model: Model<'_, S>, images: ArrayView2<'_, S>, cfg: &EvalConfig) -> Result<Array2<S>> {
    occluded_outputs(model, images, None, cfg, cfg.relax.steps)
}

fn occluded_outputs<S: Scalar>(
    model: Model<'_, S>,
    images: ArrayView2<'_, S>,
    observed: Option<ArrayView2<'_, bool>>,
    cfg: &EvalConfig,
    steps: usize,
) -> Result<Array2<S>> {
    let net = model.net;
    let mut out = Array2::zeros((images.nrows(), net.width(net.label_layer())));
    for r in chunks(images.nrows(), cfg.chunk) {
        let x = images.slice(s![r.clone(), ..]).to_owned();
        let y = match model.baseline {
            Some(kind) => baseline_top(net, kind, &x, &cfg.relax, &cfg.energy)?,
            None => {
                let id = layer_id(net, net.image_layer());
                let clamps = match observed {
                    None => ClampSpec::new().full(id, x),
                    Some(m) => ClampSpec::new().partial(id, x, m.slice(s![r.clone(), ..]).to_owned()),
                };
                let init = cfg.init.unwrap_or_else(|| classify_init(model.family()));
                let mut rcfg = cfg.relax.clone();
                rcfg.steps = steps;
                infer_layer(net, &clamps, init, &rcfg, &cfg.energy, net.label_layer())?
            }
        };
        let w = out.ncols();
        out.slice_mut(s![r, ..]).assign(&y.slice(s![.., ..w]));
    }
    Ok(out)
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Predicted classes for a batch of images.
pub fn predict<S: Scalar>(model: Model<'_, S>, images: ArrayView2<'_, S>, n_classes: usize, cfg: &EvalConfig) -> Result<Vec<usize>> {
    check_label_block(model.net, n_classes)?;
    decode_labels(label_outputs(model, images, cfg)?.view(), n_classes)
}

fn check_label_block<S: Scalar>(net: &Network<S>, n_classes: usize) -> Result<()> {
    let w = net.width(net.label_layer());
    if w < n_classes && !(w == 1 && n_classes == 2) {
        return Err(Error::InvalidArgument(format!(
            "label layer of width {w} cannot hold {n_classes} classes"
        )));
    }
    Ok(())
}

/// Fraction of `data` classified correctly.
pub fn classify<S: Scalar>(model: Model<'_, S>, data: &Dataset<S>, cfg: &EvalConfig) -> Result<f64> {
    let pred = predict(model, data.images.view(), data.n_classes, cfg)?;
    Ok(accuracy(&pred, &data.labels))
}

/// Per-class pixelwise means, one row per class.
pub fn class_means<S: Scalar>(data: &Dataset<S>) -> Result<Array2<S>> {
    let mut sums = Array2::<f64>::zeros((data.n_classes, data.dim()));
    let mut counts = vec![0usize; data.n_classes];
    for (row, &l) in data.images.rows().into_iter().zip(&data.labels) {
        counts[l] += 1;
        let mut acc = sums.row_mut(l);
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.as_f64();
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(k));
    }
    Ok(Array2::from_shape_fn(sums.raw_dim(), |(k, j)| {
        S::of(sums[[k, j]] / counts[k] as f64)
    }))
}

/// Root mean squared difference over all entries.
pub fn rmse<S: Scalar>(a: ArrayView2<'_, S>, b: ArrayView2<'_, S>) -> f64 {
    let n = a.len().max(1) as f64;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    (ss / n).sqrt()
}

/// Images generated with the label layer clamped to each label.
pub fn generate_conditional<S: Scalar>(
    model: Model<'_, S>,
    labels: &[usize],
    n_classes: usize,
    cfg: &EvalConfig,
) -> Result<Array2<S>> {
    let net = model.net;
    let targets: Array2<S> = label_targets(labels, n_classes, net.width(net.label_layer()))?;
    if let Some(kind) = model.baseline {
        let mut top = Array2::zeros((labels.len(), net.width(net.top_layer())));
        top.slice_mut(s![.., ..targets.ncols()]).assign(&targets);
        if kind == BaselineKind::DiscBp {
            return Err(Error::InvalidArgument("discBP has no generative pathway".into()));
        }
        return baseline_generate(net, top);
    }
    let clamps = ClampSpec::new().full(layer_id(net, net.label_layer()), targets);
    infer_layer(
        net,
        &clamps,
        generate_init(model.family()),
        &cfg.relax,
        &cfg.energy,
        net.image_layer(),
    )
}

/// RMSE between generated images and the class means of `data`.
pub fn generation_rmse<S: Scalar>(model: Model<'_, S>, data: &Dataset<S>, cfg: &EvalConfig) -> Result<f64> {
    let means = class_means(data)?;
    let labels: Vec<usize> = (0..data.n_classes).collect();
    let gen = generate_conditional(model, &labels, data.n_classes, cfg)?;
    Ok(rmse(gen.view(), means.view()))
}

/// Top-layer representation after inference with the image (and, when
/// given, the first `k` label neurons) clamped.
pub fn infer_representation<S: Scalar>(
    model: Model<'_, S>,
    images: ArrayView2<'_, S>,
    labels: Option<(&[usize], usize)>,
    cfg: &EvalConfig,
) -> Result<Array2<S>> {
    let net = model.net;
    let top = net.top_layer();
    let width = net.width(top);
    let mut out = Array2::zeros((images.nrows(), width));
    for r in chunks(images.nrows(), cfg.chunk) {
        let x = images.slice(s![r.clone(), ..]).to_owned();
        let label_block = labels
            .map(|(l, k)| label_block(&l[r.clone()], k, width))
            .transpose()?;
        let rep = match model.baseline {
            Some(BaselineKind::Ae { .. }) | Some(BaselineKind::DiscBp) => {
                let chain = Chain::new(net, Direction::Discriminative, net.image_layer(), top)?;
                let mut rep = chain.forward(net, x).output;
                if let Some((values, k)) = &label_block {
                    rep.slice_mut(s![.., ..*k]).assign(&values.slice(s![.., ..*k]));
                }
                rep
            }
            Some(BaselineKind::HybridBp) => {
                let chain = Chain::new(net, Direction::Discriminative, net.image_layer(), top)?;
                let mut init = chain.forward(net, x.clone()).output;
                let mut mask = Array2::from_elem(init.raw_dim(), false);
                if let Some((values, k)) = &label_block {
                    init.slice_mut(s![.., ..*k]).assign(&values.slice(s![.., ..*k]));
                    mask.slice_mut(s![.., ..*k]).fill(true);
                }
                relax_latent(net, &x, init, Some(&mask), &cfg.relax, &cfg.energy)?
            }
            Some(kind) => baseline_top(net, kind, &x, &cfg.relax, &cfg.energy)?,
            None => {
                let mut clamps = ClampSpec::new().full(layer_id(net, net.image_layer()), x);
                if let Some((values, k)) = label_block {
                    clamps = clamps.columns(layer_id(net, top), values, 0..k);
                }
                let init = cfg.init.unwrap_or_else(|| classify_init(model.family()));
                infer_layer(net, &clamps, init, &cfg.relax, &cfg.energy, top)?
            }
        };
        out.slice_mut(s![r, ..]).assign(&rep);
    }
    Ok(out)
}

fn label_block<S: Scalar>(labels: &[usize], k: usize, width: usize) -> Result<(Array2<S>, usize)> {
    if k > width {
        return Err(Error::InvalidArgument(format!(
            "{k} label neurons do not fit a top layer of width {width}"
        )));
    }
    let mut values = Array2::zeros((labels.len(), width));
    values
        .slice_mut(s![.., ..k])
        .assign(&crate::data::one_hot_matrix::<S>(labels, k));
    Ok((values, k))
}

/// Reconstructs images from their inferred representations: infer the top
/// layer, clamp it, re-initialise top-down, relax, read the image layer.
pub fn reconstruct<S: Scalar>(
    model: Model<'_, S>,
    images: ArrayView2<'_, S>,
    labels: Option<(&[usize], usize)>,
    cfg: &EvalConfig,
) -> Result<Array2<S>> {
    let net = model.net;
    let reps = infer_representation(model, images, labels, cfg)?;
    if model.baseline.is_some() {
        return baseline_generate(net, reps);
    }
    let mut out = Array2::zeros(images.raw_dim());
    for r in chunks(images.nrows(), cfg.chunk) {
        let clamps = ClampSpec::new().full(layer_id(net, net.top_layer()), reps.slice(s![r.clone(), ..]).to_owned());
        let x = infer_layer(
            net,
            &clamps,
            InitKind::TopDownSweep,
            &cfg.relax,
            &cfg.energy,
            net.image_layer(),
        )?;
        out.slice_mut(s![r, ..]).assign(&x);
    }
    Ok(out)
}

pub fn reconstruction_rmse<S: Scalar>(
    model: Model<'_, S>,
    data: &Dataset<S>,
    label_k: Option<usize>,
    cfg: &EvalConfig,
) -> Result<f64> {
    let labels = label_k.map(|k| (data.labels.as_slice(), k));
    let rec = reconstruct(model, data.images.view(), labels, cfg)?;
    Ok(rmse(rec.view(), data.images.view()))
}

/// Classification with a fraction of pixels missing.
#[derive(Debug, Clone)]
pub struct OcclusionResult<S> {
    pub fraction: f64,
    pub accuracy: f64,
    pub mask: PixelMask,
    /// Image-layer activities after inference; equals the input for
    /// baselines.
    pub completed: Array2<S>,
    /// Label-layer activities after inference.
    pub outputs: Array2<S>,
}

/// Classifies with `fraction` of pixels hidden: observed pixels are clamped,
/// missing ones start at zero and are left free.
pub fn occluded_classify<S: Scalar>(
    model: Model<'_, S>,
    data: &Dataset<S>,
    fraction: f64,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<OcclusionResult<S>> {
    check_label_block(model.net, data.n_classes)?;
    let (masked, mask) = mask_pixels(&data.images, fraction, seed)?;
    let observed = mask.observed();
    let steps = cfg.occlusion_steps.unwrap_or(cfg.relax.steps);
    let net = model.net;
    let mut labels_out = Array2::zeros((data.len(), net.width(net.label_layer())));
    let mut completed = masked.clone();
    for r in chunks(data.len(), cfg.chunk) {
        let x = masked.slice(s![r.clone(), ..]).to_owned();
        match model.baseline {
            Some(_) => {
                let y = occluded_outputs(model, x.view(), None, cfg, steps)?;
                labels_out.slice_mut(s![r, ..]).assign(&y);
            }
            None => {
                let id = layer_id(net, net.image_layer());
                let clamps = ClampSpec::new().partial(id, x, observed.slice(s![r.clone(), ..]).to_owned());
                let init = cfg.init.unwrap_or_else(|| classify_init(model.family()));
                let mut rcfg = cfg.relax.clone();
                rcfg.steps = steps;
                let mut state = init_state(net, &clamps, init, rcfg.seed)?;
                relax(net, &mut state, &rcfg, &cfg.energy)?;
                let y = &state.activities[net.label_layer()];
                labels_out.slice_mut(s![r.clone(), ..]).assign(y);
                completed
                    .slice_mut(s![r, ..])
                    .assign(&state.activities[net.image_layer()]);
            }
        }
    }
    let pred = decode_labels(labels_out.view(), data.n_classes)?;
    Ok(OcclusionResult {
        fraction,
        accuracy: accuracy(&pred, &data.labels),
        mask,
        completed,
        outputs: labels_out,
    })
}

/// Occluded accuracy for every configured fraction.
pub fn occlusion_sweep<S: Scalar>(
    model: Model<'_, S>,
    data: &Dataset<S>,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<Vec<(f64, f64)>> {
    cfg.occlusion_fractions
        .iter()
        .map(|&f| Ok((f, occluded_classify(model, data, f, seed, cfg)?.accuracy)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    #[test]
    fn class_means_are_arithmetic_means() {
        let images = ndarray::arr2(&[[0.0, 1.0], [1.0, 1.0], [0.5, -1.0]]);
        let data = Dataset::new(images, vec![0, 0, 1], 2, Split::Test).unwrap();
        let m = class_means(&data).unwrap();
        assert_eq!(m.row(0).to_vec(), vec![0.5, 1.0]);
        assert_eq!(m.row(1).to_vec(), vec![0.5, -1.0]);
        let shuffled = data.select(&[2, 1, 0]);
        assert_eq!(class_means(&shuffled).unwrap(), m);
    }

    #[test]
    fn empty_class_is_named() {
        let data = Dataset::new(ndarray::arr2(&[[0.0]]), vec![0], 3, Split::Test).unwrap();
        assert!(matches!(class_means(&data), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn argmax_decoding() {
        let out = ndarray::arr2(&[[0.1, 0.9, 0.0]]);
        assert_eq!(decode_labels(out.view(), 3).unwrap(), vec![1]);
        let scaled = out.mapv(|v| v * 7.0);
        assert_eq!(decode_labels(scaled.view(), 3).unwrap(), vec![1]);
    }

    #[test]
    fn rmse_of_identical_is_zero() {
        let a = ndarray::arr2(&[[0.3, -0.2]]);
        assert_eq!(rmse(a.view(), a.view()), 0.0);
        assert!((rmse(a.view(), ndarray::arr2(&[[1.3, 0.8]]).view()) - 1.0).abs() < 1e-15);
    }
}
