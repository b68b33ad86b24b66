//! Named hyperparameter sets for the standard experiments, sized to run on a
//! desk machine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::energy::FreeNeuronAlpha;
use crate::eval::{EvalConfig, LandscapeConfig, SampleConfig};
use crate::inference::RelaxConfig;
use crate::learning::{AdamWConfig, BaselineKind, TrainConfig, TrainMode};
use crate::network::{ActivationKind, Direction, EdgeSpec, LayerSpec, ModelFamily, NetworkSpec};
use crate::{EnergyConfig, Error, Result};

pub const PRESETS: [&str; 6] = [
    "xor",
    "mnist-supervised",
    "mnist-unsupervised",
    "mnist-partial",
    "bimodal",
    "occlusion-sweep",
];

/// Where a run gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Xor,
    Mnist {
        /// Directory holding the four IDX files; `data/mnist` when unset.
        #[serde(default)]
        dir: Option<std::path::PathBuf>,
        /// First `n` training images.
        #[serde(default)]
        train_subset: Option<usize>,
        /// First `n` validation images used for the per-epoch metric.
        #[serde(default)]
        val_subset: Option<usize>,
        /// First `n` test images used by evaluation commands.
        #[serde(default)]
        test_subset: Option<usize>,
        #[serde(default)]
        split_seed: u64,
    },
    /// Seeded blob images; for smoke tests without downloaded data.
    Synthetic {
        n_train: usize,
        n_test: usize,
        side: usize,
        n_classes: usize,
    },
}

/// Measurements an `eval` run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Classify,
    Generate,
    Reconstruct,
    Readout,
    Occlusion,
}

/// Everything needed to train and evaluate one model of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub model: String,
    pub network: NetworkSpec,
    pub baseline: Option<BaselineKind>,
    pub data: DataSource,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub protocols: Vec<Protocol>,
    pub landscape: LandscapeConfig,
    pub sample: SampleConfig,
}

/// Models a preset offers.
pub fn preset_models(name: &str) -> Result<&'static [&'static str]> {
    Ok(match name {
        "xor" => &["bpc", "discpc", "genpc", "discbp"],
        "mnist-supervised" | "occlusion-sweep" => {
            &["bpc", "discpc", "genpc", "hybridpc", "discbp", "genbp"]
        }
        "mnist-unsupervised" => &["bpc", "genpc", "hybridpc", "hybridbp", "ae"],
        "mnist-partial" => &["bpc", "hybridpc", "hybridbp", "ae"],
        "bimodal" => &["bpc", "genpc"],
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    })
}

fn family_of(model: &str) -> Option<(ModelFamily, Option<BaselineKind>)> {
    Some(match model {
        "bpc" => (ModelFamily::Bpc, None),
        "discpc" => (ModelFamily::DiscPc, None),
        "genpc" => (ModelFamily::GenPc, None),
        "hybridpc" => (ModelFamily::HybridPc, None),
        "discbp" => (ModelFamily::DiscBp, Some(BaselineKind::DiscBp)),
        "genbp" => (ModelFamily::GenBp, Some(BaselineKind::GenBp)),
        "hybridbp" => (ModelFamily::HybridBp, Some(BaselineKind::HybridBp)),
        "ae" => (ModelFamily::Ae, Some(BaselineKind::Ae { k: 0 })),
        _ => return None,
    })
}

/// MLP chain with a tanh image prediction, an identity top prediction and
/// `hidden` everywhere else. Edge directions follow the family.
pub fn mlp_spec(family: ModelFamily, widths: &[usize], hidden: ActivationKind) -> NetworkSpec {
    mlp_spec_with(family, widths, hidden, ActivationKind::Tanh, ActivationKind::Identity)
}

fn mlp_spec_with(
    family: ModelFamily,
    widths: &[usize],
    hidden: ActivationKind,
    image_act: ActivationKind,
    top_act: ActivationKind,
) -> NetworkSpec {
    let top = widths.len();
    let gen = move |l: usize| if l == 1 { image_act } else { hidden };
    let disc = move |l: usize| if l == top { top_act } else { hidden };
    let (g, d) = match family {
        ModelFamily::DiscPc | ModelFamily::DiscBp => (false, true),
        ModelFamily::GenPc | ModelFamily::GenBp => (true, false),
        _ => (true, true),
    };
    let mut spec = NetworkSpec::chain(
        family,
        widths,
        g.then_some(&gen as &dyn Fn(usize) -> ActivationKind),
        d.then_some(&disc as &dyn Fn(usize) -> ActivationKind),
    );
    if family == ModelFamily::HybridPc {
        for e in &mut spec.edges {
            e.stop_gradient = e.direction == Direction::Discriminative;
        }
    }
    spec
}

/// Image and label layers both predicted from one latent layer through
/// `f1(W f2(z) + b)`, with `f1` tanh for the image and identity for the label.
pub fn bimodal_genpc_spec(image: usize, classes: usize, latent: usize, f2: ActivationKind) -> NetworkSpec {
    NetworkSpec {
        family: ModelFamily::BimodalGenPc,
        layers: vec![
            LayerSpec::new("image", image),
            LayerSpec::new("label", classes),
            LayerSpec::new("latent", latent),
        ],
        edges: vec![
            EdgeSpec::generative("latent", "image", ActivationKind::Tanh).input_activation(f2),
            EdgeSpec::generative("latent", "label", ActivationKind::Identity).input_activation(f2),
        ],
        input_layers: vec!["image".into(), "label".into()],
        top_layer: "latent".into(),
        label_layer: Some("label".into()),
    }
}

fn mnist(train_subset: usize) -> DataSource {
    DataSource::Mnist {
        dir: None,
        train_subset: Some(train_subset),
        val_subset: Some(1000),
        test_subset: None,
        split_seed: 0,
    }
}

fn train_cfg(epochs: usize, batch: usize, relax: RelaxConfig, lr: f64, mode: TrainMode, energy: EnergyConfig) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        relax,
        adamw: AdamWConfig::new(lr),
        mode,
        energy,
        seed: 0,
        init: None,
        shuffle: true,
    }
}

fn eval_cfg(relax: RelaxConfig, energy: EnergyConfig) -> EvalConfig {
    EvalConfig {
        relax,
        energy,
        ..EvalConfig::default()
    }
}

/// Looks up preset `name` for `model` (e.g. `bpc`, `discbp`).
pub fn preset(name: &str, model: &str) -> Result<Preset> {
    let models = preset_models(name)?;
    if !models.contains(&model) {
        return Err(Error::Config(format!(
            "preset `{name}` has no model `{model}` (available: {})",
            models.join(", ")
        )));
    }
    let (family, mut baseline) = family_of(model).expect("listed models are known");
    let lrelu = ActivationKind::leaky_relu();
    let default_energy = EnergyConfig::default();
    let alpha = |a: f64| {
        if matches!(family, ModelFamily::Bpc | ModelFamily::HybridBp | ModelFamily::Ae) {
            EnergyConfig::default().with_alpha_gen(a)
        } else {
            EnergyConfig::default()
        }
    };
    let p = match name {
        "xor" => {
            let energy = alpha(0.1);
            let mut train = train_cfg(3000, 4, RelaxConfig::new(20, 0.1), 3e-3, TrainMode::Supervised, energy.clone());
            train.shuffle = false;
            Preset {
                name: name.into(),
                model: model.into(),
                network: mlp_spec_with(family, &[2, 16, 16, 1], lrelu, ActivationKind::Identity, ActivationKind::Sigmoid),
                baseline,
                data: DataSource::Xor,
                train,
                eval: eval_cfg(RelaxConfig::new(100, 0.1), energy.clone()),
                protocols: vec![Protocol::Classify],
                landscape: LandscapeConfig {
                    energy: energy.clone(),
                    ..LandscapeConfig::default()
                },
                sample: SampleConfig {
                    relax: RelaxConfig::new(0, 0.1),
                    energy,
                    ..SampleConfig::default()
                },
            }
        }
        "mnist-supervised" | "occlusion-sweep" => {
            let energy = alpha(0.01);
            let mut eval = eval_cfg(RelaxConfig::new(100, 0.05), energy.clone());
            let mut protocols = vec![Protocol::Classify];
            if name == "occlusion-sweep" {
                eval.relax.momentum = 0.9;
                eval.occlusion_steps = Some(1000);
                protocols.push(Protocol::Occlusion);
            } else if family != ModelFamily::DiscBp {
                protocols.push(Protocol::Generate);
            }
            if family == ModelFamily::GenBp {
                protocols.retain(|&p| p == Protocol::Generate);
            }
            Preset {
                name: name.into(),
                model: model.into(),
                network: mlp_spec(family, &[784, 256, 256, 10], lrelu),
                baseline,
                data: mnist(10_000),
                train: train_cfg(5, 64, RelaxConfig::new(8, 0.05), 1e-3, TrainMode::Supervised, energy.clone()),
                eval,
                protocols,
                landscape: LandscapeConfig::default(),
                sample: SampleConfig {
                    relax: RelaxConfig::new(0, 0.05),
                    energy,
                    ..SampleConfig::default()
                },
            }
        }
        "mnist-unsupervised" => {
            let energy = alpha(1.0);
            Preset {
                name: name.into(),
                model: model.into(),
                network: mlp_spec(family, &[784, 256, 256, 30], lrelu),
                baseline,
                data: mnist(10_000),
                train: train_cfg(5, 64, RelaxConfig::new(8, 0.05), 1e-3, TrainMode::Unsupervised, energy.clone()),
                eval: eval_cfg(RelaxConfig::new(100, 0.05), energy.clone()),
                protocols: vec![Protocol::Reconstruct, Protocol::Readout],
                landscape: LandscapeConfig::default(),
                sample: SampleConfig {
                    relax: RelaxConfig::new(0, 0.05),
                    energy,
                    ..SampleConfig::default()
                },
            }
        }
        "mnist-partial" => {
            let k = 10;
            let mut energy = alpha(0.01);
            if family != ModelFamily::HybridPc {
                energy.free_alpha_disc = BTreeMap::from([(
                    "x4".to_string(),
                    FreeNeuronAlpha { start: k, alpha: 0.01 },
                )]);
            }
            if family == ModelFamily::Ae {
                baseline = Some(BaselineKind::Ae { k });
            }
            Preset {
                name: name.into(),
                model: model.into(),
                network: mlp_spec(family, &[784, 256, 256, 40], lrelu),
                baseline,
                data: mnist(10_000),
                train: train_cfg(5, 64, RelaxConfig::new(8, 0.05), 1e-3, TrainMode::PartialClamp { k }, energy.clone()),
                eval: eval_cfg(RelaxConfig::new(100, 0.05), energy.clone()),
                protocols: vec![Protocol::Classify, Protocol::Reconstruct, Protocol::Readout],
                landscape: LandscapeConfig::default(),
                sample: SampleConfig {
                    relax: RelaxConfig::new(0, 0.05),
                    energy,
                    ..SampleConfig::default()
                },
            }
        }
        "bimodal" => {
            let genpc = model == "genpc";
            let (network, energy, t, t_eval) = if genpc {
                (bimodal_genpc_spec(784, 10, 256, lrelu), default_energy, 50, 200)
            } else {
                let spec = mlp_spec(ModelFamily::BimodalBpc, &[784, 256, 10], lrelu);
                (spec, EnergyConfig::default().with_alpha_gen(0.01), 8, 100)
            };
            Preset {
                name: name.into(),
                model: model.into(),
                network,
                baseline,
                data: mnist(10_000),
                train: train_cfg(5, 64, RelaxConfig::new(t, 0.05), 1e-3, TrainMode::Supervised, energy.clone()),
                eval: eval_cfg(RelaxConfig::new(t_eval, 0.05), energy.clone()),
                protocols: vec![Protocol::Classify, Protocol::Generate],
                landscape: LandscapeConfig::default(),
                sample: SampleConfig {
                    relax: RelaxConfig::new(0, 0.05),
                    energy,
                    ..SampleConfig::default()
                },
            }
        }
        _ => unreachable!("checked by preset_models"),
    };
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_model_builds() {
        for name in PRESETS {
            for model in preset_models(name).unwrap() {
                let p = preset(name, model).unwrap();
                p.network.validate().unwrap();
                p.train.validate().unwrap();
                p.eval.validate().unwrap();
            }
        }
        assert!(preset("xor", "ae").is_err());
        assert!(preset("nope", "bpc").is_err());
    }

    #[test]
    fn hybridpc_stops_bottom_up_gradients() {
        let p = preset("mnist-supervised", "hybridpc").unwrap();
        for e in &p.network.edges {
            assert_eq!(e.stop_gradient, e.direction == Direction::Discriminative);
        }
    }
}
