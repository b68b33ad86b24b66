use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::label_targets;
use crate::energy::{sample_energies, EnergyConfig};
use crate::inference::{init_state, relax, ClampSpec, InitKind, RelaxConfig};
use crate::network::{Direction, EdgeSpec, LayerSpec, ModelFamily, Network, NetworkSpec};
use crate::{Error, Result, Scalar};

fn default_relax() -> RelaxConfig {
    RelaxConfig::new(10_000, 0.1).grad_tol(1e-9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    #[serde(default = "default_relax")]
    pub relax: RelaxConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            lo: -3.0,
            hi: 3.0,
            step: 0.25,
            relax: default_relax(),
            energy: EnergyConfig::default(),
        }
    }
}

impl LandscapeConfig {
    pub fn axis(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.hi >= self.lo) {
            return Err(Error::InvalidArgument(format!(
                "bad landscape range [{}, {}] step {}",
                self.lo, self.hi, self.step
            )));
        }
        let n = ((self.hi - self.lo) / self.step).round() as usize + 1;
        Ok((0..n).map(|i| self.lo + i as f64 * self.step).collect())
    }
}

/// Equilibrium energies on a 2-D input grid, indexed `[label][iy][ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub axis: Vec<f64>,
    pub n_labels: usize,
    pub disc: Vec<f64>,
    pub gen: Vec<f64>,
    pub total: Vec<f64>,
}

impl Landscape {
    fn index(&self, label: usize, iy: usize, ix: usize) -> usize {
        let n = self.axis.len();
        (label * n + iy) * n + ix
    }

    pub fn total_at(&self, label: usize, iy: usize, ix: usize) -> f64 {
        self.total[self.index(label, iy, ix)]
    }

    /// Index of the grid point closest to `v`.
    pub fn nearest(&self, v: f64) -> usize {
        let mut best = 0;
        for (i, a) in self.axis.iter().enumerate() {
            if (a - v).abs() < (self.axis[best] - v).abs() {
                best = i;
            }
        }
        best
    }

    /// Whether the total energy at a point is no larger than at its 8 grid
    /// neighbours.
    pub fn is_local_min(&self, label: usize, iy: usize, ix: usize) -> bool {
        let n = self.axis.len() as isize;
        let centre = self.total_at(label, iy, ix);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (y, x) = (iy as isize + dy, ix as isize + dx);
                if (dy, dx) == (0, 0) || y < 0 || x < 0 || y >= n || x >= n {
                    continue;
                }
                if self.total_at(label, y as usize, x as usize) < centre {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,x1,x2,e_disc,e_gen,e_total\n");
        for l in 0..self.n_labels {
            for (iy, y) in self.axis.iter().enumerate() {
                for (ix, x) in self.axis.iter().enumerate() {
                    let i = self.index(l, iy, ix);
                    out.push_str(&format!(
                        "{l},{x},{y},{:e},{:e},{:e}\n",
                        self.disc[i], self.gen[i], self.total[i]
                    ));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Clamps the 2-D image layer to every grid point and the label layer to
/// each label, relaxes to equilibrium and records the energies.
pub fn energy_landscape<S: Scalar>(net: &Network<S>, n_classes: usize, cfg: &LandscapeConfig) -> Result<Landscape> {
    let img = net.image_layer();
    if net.width(img) != 2 {
        return Err(Error::InvalidArgument(format!(
            "energy landscapes need a 2-D input layer, `{}` has width {}",
            net.layer_id(img),
            net.width(img)
        )));
    }
    let axis = cfg.axis()?;
    let n = axis.len();
    let points = Array2::from_shape_fn((n * n, 2), |(i, c)| {
        S::of(if c == 0 { axis[i % n] } else { axis[i / n] })
    });
    let label_width = net.width(net.label_layer());
    let (mut disc, mut gen, mut total) = (Vec::new(), Vec::new(), Vec::new());
    for label in 0..n_classes {
        let labels = vec![label; n * n];
        let targets: Array2<S> = label_targets(&labels, n_classes, label_width)?;
        let clamps = ClampSpec::new()
            .full(net.layer_id(img), points.clone())
            .full(net.layer_id(net.label_layer()), targets);
        let mut state = init_state(net, &clamps, InitKind::Propagate, 0)?;
        relax(net, &mut state, &cfg.relax, &cfg.energy)?;
        let e = sample_energies(net, &state, &cfg.energy)?;
        disc.extend(e.direction(net, Direction::Discriminative).iter().map(|v| v.as_f64()));
        gen.extend(e.direction(net, Direction::Generative).iter().map(|v| v.as_f64()));
        total.extend(e.total().iter().map(|v| v.as_f64()));
    }
    Ok(Landscape {
        axis,
        n_labels: n_classes,
        disc,
        gen,
        total,
    })
}

/// Merges a discriminative and a generative network that share their image
/// and label layers into one network whose energy is the sum of both, with
/// the generative edges weighted by `gen_scale`. Hidden layers and edges are
/// prefixed with `disc.` and `gen.`.
pub fn combine_networks<S: Scalar>(disc: &Network<S>, gen: &Network<S>, gen_scale: f64) -> Result<Network<S>> {
    let shared = |net: &Network<S>| {
        [
            net.layer_id(net.image_layer()).to_string(),
            net.layer_id(net.label_layer()).to_string(),
        ]
    };
    let ids = shared(disc);
    if ids != shared(gen) {
        return Err(Error::InvalidSpec(
            "combined models must share image and label layer ids".into(),
        ));
    }
    let rename = |prefix: &str, id: &str| {
        if ids.iter().any(|s| s == id) {
            id.to_string()
        } else {
            format!("{prefix}.{id}")
        }
    };
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut edges: Vec<EdgeSpec> = Vec::new();
    for (prefix, net, scale) in [("disc", disc, 1.0), ("gen", gen, gen_scale)] {
        for l in &net.spec().layers {
            let id = rename(prefix, &l.id);
            match layers.iter_mut().find(|x| x.id == id) {
                Some(existing) => {
                    if existing.width != l.width {
                        return Err(Error::InvalidSpec(format!("shared layer `{id}` differs in width")));
                    }
                    existing.decay += l.decay;
                }
                None => layers.push(LayerSpec { id, ..l.clone() }),
            }
        }
        for e in &net.spec().edges {
            edges.push(EdgeSpec {
                id: format!("{prefix}.{}", e.id),
                src: rename(prefix, &e.src),
                dst: rename(prefix, &e.dst),
                alpha: e.alpha * scale,
                tied_to: e.tied_to.as_ref().map(|t| format!("{prefix}.{t}")),
                ..e.clone()
            });
        }
    }
    let spec = NetworkSpec {
        family: ModelFamily::Bpc,
        layers,
        edges,
        input_layers: vec![ids[0].clone()],
        top_layer: ids[1].clone(),
        label_layer: None,
    };
    let mut out = Network::build(spec, 0)?;
    let mut e_out = 0;
    for net in [disc, gen] {
        for e in 0..net.n_edges() {
            if let Some(w) = out.params.owned_weight_mut(e_out) {
                w.assign(&net.params.weight(e));
            }
            if let (Some(b), Some(src)) = (out.params.bias_mut(e_out), net.params.bias(e)) {
                b.assign(&src);
            }
            e_out += 1;
        }
    }
    Ok(out)
}
