//! Declarative description of a layer graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ActivationKind;
use crate::{Error, Result};

/// Prediction direction of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Top-down: a higher layer predicts a lower one.
    Generative,
    /// Bottom-up: a lower layer predicts a higher one.
    Discriminative,
}

/// Model family a spec belongs to. Selects default initialisation and
/// evaluation protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    DiscPc,
    GenPc,
    #[default]
    Bpc,
    HybridPc,
    SharedBpc,
    BimodalBpc,
    BimodalGenPc,
    DiscBp,
    GenBp,
    HybridBp,
    Ae,
}

impl ModelFamily {
    pub fn is_backprop(self) -> bool {
        matches!(
            self,
            ModelFamily::DiscBp | ModelFamily::GenBp | ModelFamily::HybridBp | ModelFamily::Ae
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::DiscPc => "discpc",
            ModelFamily::GenPc => "genpc",
            ModelFamily::Bpc => "bpc",
            ModelFamily::HybridPc => "hybridpc",
            ModelFamily::SharedBpc => "shared_bpc",
            ModelFamily::BimodalBpc => "bimodal_bpc",
            ModelFamily::BimodalGenPc => "bimodal_genpc",
            ModelFamily::DiscBp => "discbp",
            ModelFamily::GenBp => "genbp",
            ModelFamily::HybridBp => "hybridbp",
            ModelFamily::Ae => "ae",
        }
    }
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub id: String,
    pub width: usize,
    /// Activity-decay coefficient: adds `decay/2 * |x|^2` to the energy.
    #[serde(default)]
    pub decay: f64,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, width: usize) -> Self {
        Self {
            id: id.into(),
            width,
            decay: 0.0,
        }
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }
}

/// One prediction `f(W g(x_src) + b)` of layer `dst` from layer `src`.
///
/// `input_activation` (`g`) is the identity for ordinary MLP-style edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    /// Defaults to `"{src}->{dst}"` when omitted.
    #[serde(default)]
    pub id: String,
    pub src: String,
    pub dst: String,
    pub direction: Direction,
    #[serde(default)]
    pub activation: ActivationKind,
    #[serde(default)]
    pub input_activation: ActivationKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub stop_gradient: bool,
    /// Reuse the transpose of another edge's weights. Tied edges and the
    /// edges they tie to carry no bias.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tied_to: Option<String>,
}

impl EdgeSpec {
    pub fn new(
        src: impl Into<String>,
        dst: impl Into<String>,
        direction: Direction,
        activation: ActivationKind,
    ) -> Self {
        let src = src.into();
        let dst = dst.into();
        Self {
            id: format!("{src}->{dst}"),
            src,
            dst,
            direction,
            activation,
            input_activation: ActivationKind::Identity,
            alpha: 1.0,
            stop_gradient: false,
            tied_to: None,
        }
    }

    pub fn generative(src: impl Into<String>, dst: impl Into<String>, act: ActivationKind) -> Self {
        Self::new(src, dst, Direction::Generative, act)
    }

    pub fn discriminative(
        src: impl Into<String>,
        dst: impl Into<String>,
        act: ActivationKind,
    ) -> Self {
        Self::new(src, dst, Direction::Discriminative, act)
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn stop_gradient(mut self, on: bool) -> Self {
        self.stop_gradient = on;
        self
    }

    pub fn input_activation(mut self, act: ActivationKind) -> Self {
        self.input_activation = act;
        self
    }

    pub fn tied_to(mut self, edge: impl Into<String>) -> Self {
        self.tied_to = Some(edge.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default)]
    pub family: ModelFamily,
    pub layers: Vec<LayerSpec>,
    pub edges: Vec<EdgeSpec>,
    /// Sensory layers; the first one receives images.
    pub input_layers: Vec<String>,
    pub top_layer: String,
    /// Layer that receives one-hot labels; defaults to `top_layer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_layer: Option<String>,
}

/// Index-resolved, validated view of a [`NetworkSpec`].
#[derive(Debug, Clone)]
pub struct Topology {
    pub widths: Vec<usize>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    /// Index of the edge whose weights this edge reuses (transposed).
    pub edge_tie: Vec<Option<usize>>,
    pub edge_has_bias: Vec<bool>,
    pub layer_index: BTreeMap<String, usize>,
    pub edge_index: BTreeMap<String, usize>,
    pub image_layer: usize,
    pub input_layers: Vec<usize>,
    pub top_layer: usize,
    pub label_layer: usize,
}

impl NetworkSpec {
    /// Fills default edge ids in place.
    pub fn normalize(&mut self) {
        for e in &mut self.edges {
            if e.id.is_empty() {
                e.id = format!("{}->{}", e.src, e.dst);
            }
        }
    }

    pub fn label_layer_id(&self) -> &str {
        self.label_layer.as_deref().unwrap_or(&self.top_layer)
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Checks every structural invariant and resolves names to indices.
    pub fn validate(&self) -> Result<Topology> {
        let mut layer_index = BTreeMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return Err(Error::InvalidSpec(format!("layer `{}` has zero width", l.id)));
            }
            if !(l.decay >= 0.0 && l.decay.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "layer `{}` has invalid decay {}",
                    l.id, l.decay
                )));
            }
            if layer_index.insert(l.id.clone(), i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate layer id `{}`", l.id)));
            }
        }
        let widths: Vec<usize> = self.layers.iter().map(|l| l.width).collect();

        let mut edge_index = BTreeMap::new();
        let mut edge_src = Vec::with_capacity(self.edges.len());
        let mut edge_dst = Vec::with_capacity(self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            let bad = |reason: String| Error::InvalidEdge {
                edge: e.id.clone(),
                reason,
            };
            if e.id.is_empty() {
                return Err(Error::InvalidSpec(format!(
                    "edge {i} has no id (call normalize first)"
                )));
            }
            let s = *layer_index
                .get(&e.src)
                .ok_or_else(|| bad(format!("dangling source layer `{}`", e.src)))?;
            let d = *layer_index
                .get(&e.dst)
                .ok_or_else(|| bad(format!("dangling destination layer `{}`", e.dst)))?;
            if s == d {
                return Err(bad("source and destination are the same layer".into()));
            }
            if !(e.alpha >= 0.0 && e.alpha.is_finite()) {
                return Err(bad(format!("alpha must be finite and >= 0, got {}", e.alpha)));
            }
            if let ActivationKind::LeakyRelu { slope } = e.activation {
                if !slope.is_finite() {
                    return Err(bad("non-finite leaky relu slope".into()));
                }
            }
            if edge_index.insert(e.id.clone(), i).is_some() {
                return Err(bad("duplicate edge id".into()));
            }
            edge_src.push(s);
            edge_dst.push(d);
        }

        let mut edge_tie = vec![None; self.edges.len()];
        let mut edge_has_bias = vec![true; self.edges.len()];
        for (i, e) in self.edges.iter().enumerate() {
            if let Some(t) = &e.tied_to {
                let bad = |reason: String| Error::InvalidEdge {
                    edge: e.id.clone(),
                    reason,
                };
                let j = *edge_index
                    .get(t)
                    .ok_or_else(|| bad(format!("tied to unknown edge `{t}`")))?;
                if j == i {
                    return Err(bad("edge tied to itself".into()));
                }
                if self.edges[j].tied_to.is_some() {
                    return Err(bad(format!("tied to `{t}`, which is itself tied")));
                }
                if widths[edge_dst[i]] != widths[edge_src[j]]
                    || widths[edge_src[i]] != widths[edge_dst[j]]
                {
                    return Err(bad(format!(
                        "shape {}x{} is not the transpose of `{t}` ({}x{})",
                        widths[edge_dst[i]],
                        widths[edge_src[i]],
                        widths[edge_dst[j]],
                        widths[edge_src[j]]
                    )));
                }
                edge_tie[i] = Some(j);
                edge_has_bias[i] = false;
                edge_has_bias[j] = false;
            }
        }

        for dir in [Direction::Generative, Direction::Discriminative] {
            if let Some(edge) = self.find_cycle(dir, &edge_src, &edge_dst, widths.len()) {
                return Err(Error::InvalidEdge {
                    edge: self.edges[edge].id.clone(),
                    reason: format!("closes a cycle among {dir:?} edges"),
                });
            }
        }

        let resolve = |id: &str| {
            layer_index
                .get(id)
                .copied()
                .ok_or_else(|| Error::UnknownLayer(id.to_string()))
        };
        if self.input_layers.is_empty() {
            return Err(Error::InvalidSpec("no input layers".into()));
        }
        let input_layers = self
            .input_layers
            .iter()
            .map(|id| resolve(id))
            .collect::<Result<Vec<_>>>()?;
        let top_layer = resolve(&self.top_layer)?;
        let label_layer = resolve(self.label_layer_id())?;

        Ok(Topology {
            widths,
            edge_src,
            edge_dst,
            edge_tie,
            edge_has_bias,
            layer_index,
            edge_index,
            image_layer: input_layers[0],
            input_layers,
            top_layer,
            label_layer,
        })
    }

    /// Returns an edge that closes a cycle in the given direction, if any.
    fn find_cycle(
        &self,
        dir: Direction,
        src: &[usize],
        dst: &[usize],
        n_layers: usize,
    ) -> Option<usize> {
        // Kahn's algorithm; leftover edges lie on or after a cycle.
        let edges: Vec<usize> = (0..self.edges.len())
            .filter(|&i| self.edges[i].direction == dir)
            .collect();
        let mut indeg = vec![0usize; n_layers];
        for &e in &edges {
            indeg[dst[e]] += 1;
        }
        let mut queue: Vec<usize> = (0..n_layers).filter(|&l| indeg[l] == 0).collect();
        let mut seen = BTreeSet::new();
        while let Some(l) = queue.pop() {
            seen.insert(l);
            for &e in &edges {
                if src[e] == l {
                    indeg[dst[e]] -= 1;
                    if indeg[dst[e]] == 0 {
                        queue.push(dst[e]);
                    }
                }
            }
        }
        edges.into_iter().find(|&e| !seen.contains(&dst[e]))
    }

    /// Builds the chain spec `[w0, w1, ..]` with the given edge directions.
    ///
    /// Layer ids are `x1..xL`; generative edges are `x{l+1}->x{l}` and
    /// discriminative edges `x{l}->x{l+1}`. `gen_act(l)` / `disc_act(l)` give
    /// the activation of the edge predicting layer `l` (1-based).
    pub fn chain(
        family: ModelFamily,
        widths: &[usize],
        generative: Option<&dyn Fn(usize) -> ActivationKind>,
        discriminative: Option<&dyn Fn(usize) -> ActivationKind>,
    ) -> Self {
        let layers: Vec<LayerSpec> = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| LayerSpec::new(format!("x{}", i + 1), w))
            .collect();
        let n = widths.len();
        let mut edges = Vec::new();
        if let Some(act) = generative {
            for l in 1..n {
                edges.push(EdgeSpec::generative(
                    format!("x{}", l + 1),
                    format!("x{l}"),
                    act(l),
                ));
            }
        }
        if let Some(act) = discriminative {
            for l in 1..n {
                edges.push(EdgeSpec::discriminative(
                    format!("x{l}"),
                    format!("x{}", l + 1),
                    act(l + 1),
                ));
            }
        }
        NetworkSpec {
            family,
            layers,
            edges,
            input_layers: vec!["x1".into()],
            top_layer: format!("x{n}"),
            label_layer: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer() -> NetworkSpec {
        NetworkSpec {
            family: ModelFamily::DiscPc,
            layers: vec![LayerSpec::new("a", 2), LayerSpec::new("b", 3)],
            edges: vec![EdgeSpec::discriminative("a", "b", ActivationKind::Tanh)],
            input_layers: vec!["a".into()],
            top_layer: "b".into(),
            label_layer: None,
        }
    }

    #[test]
    fn self_loop_rejected() {
        let mut s = two_layer();
        s.edges.push(EdgeSpec::generative("a", "a", ActivationKind::Tanh));
        match s.validate() {
            Err(Error::InvalidEdge { edge, .. }) => assert_eq!(edge, "a->a"),
            other => panic!("expected edge error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_layer_names_edge() {
        let mut s = two_layer();
        s.edges.push(EdgeSpec::discriminative("b", "zz", ActivationKind::Tanh));
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("b->zz") && err.contains("zz"), "{err}");
    }

    #[test]
    fn cycle_rejected_per_direction() {
        let mut s = two_layer();
        s.edges.push(EdgeSpec::discriminative("b", "a", ActivationKind::Tanh));
        assert!(matches!(s.validate(), Err(Error::InvalidEdge { .. })));
        // The same pair in opposite directions is fine.
        let mut s = two_layer();
        s.edges.push(EdgeSpec::generative("b", "a", ActivationKind::Tanh));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn tie_shape_checked() {
        let mut s = two_layer();
        s.edges
            .push(EdgeSpec::generative("b", "a", ActivationKind::Tanh).tied_to("a->b"));
        let t = s.validate().unwrap();
        assert_eq!(t.edge_tie[1], Some(0));
        assert!(!t.edge_has_bias[0] && !t.edge_has_bias[1]);

        let mut s = two_layer();
        s.layers.push(LayerSpec::new("c", 5));
        s.edges
            .push(EdgeSpec::generative("c", "a", ActivationKind::Tanh).tied_to("a->b"));
        assert!(s.validate().is_err());
    }

    #[test]
    fn chain_builder_layout() {
        let s = NetworkSpec::chain(
            ModelFamily::Bpc,
            &[2, 16, 16, 1],
            Some(&|_| ActivationKind::Tanh),
            Some(&|_| ActivationKind::Tanh),
        );
        assert_eq!(s.edges.len(), 6);
        assert_eq!(s.edges[0].id, "x2->x1");
        assert_eq!(s.edges[3].id, "x1->x2");
        assert!(s.validate().is_ok());
    }

    #[test]
    fn toml_rejects_unknown_keys() {
        let text = r#"
            layers = [{ id = "a", width = 1, bogus = 3 }]
            edges = []
            input_layers = ["a"]
            top_layer = "a"
        "#;
        assert!(toml::from_str::<NetworkSpec>(text).is_err());
    }
}
