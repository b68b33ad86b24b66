//! Layer graphs, activations, parameters and single-edge predictions.

mod activation;
mod params;
mod spec;

pub use activation::ActivationKind;
pub use params::{ParamGrads, ParamStore};
pub use spec::{Direction, EdgeSpec, LayerSpec, ModelFamily, NetworkSpec, Topology};

use ndarray::{Array2, ArrayView2, Axis};

use crate::{Error, Result, Scalar};

/// A validated layer graph together with its parameters.
#[derive(Debug, Clone)]
pub struct Network<S> {
    spec: NetworkSpec,
    topo: Topology,
    pub params: ParamStore<S>,
}

impl<S: Scalar> Network<S> {
    /// Validates `spec` and draws parameters deterministically from `seed`.
    pub fn build(mut spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.normalize();
        let topo = spec.validate()?;
        let params = ParamStore::init_uniform(&topo, seed);
        Ok(Self { spec, topo, params })
    }

    /// Re-assembles a network from stored parameters (e.g. a checkpoint).
    pub fn from_parts(mut spec: NetworkSpec, params: ParamStore<S>) -> Result<Self> {
        spec.normalize();
        let topo = spec.validate()?;
        let expect = ParamStore::<S>::zeros(&topo);
        let shapes = |p: &ParamStore<S>| -> Vec<Vec<usize>> {
            p.arrays().into_iter().map(|(_, s, _)| s).collect()
        };
        if shapes(&expect) != shapes(&params) {
            return Err(Error::Shape(
                "parameter store does not match the network spec".into(),
            ));
        }
        Ok(Self { spec, topo, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn family(&self) -> ModelFamily {
        self.spec.family
    }

    pub fn n_layers(&self) -> usize {
        self.topo.widths.len()
    }

    pub fn n_edges(&self) -> usize {
        self.spec.edges.len()
    }

    pub fn width(&self, layer: usize) -> usize {
        self.topo.widths[layer]
    }

    pub fn edge(&self, e: usize) -> &EdgeSpec {
        &self.spec.edges[e]
    }

    pub fn edge_src(&self, e: usize) -> usize {
        self.topo.edge_src[e]
    }

    pub fn edge_dst(&self, e: usize) -> usize {
        self.topo.edge_dst[e]
    }

    pub fn layer_id(&self, l: usize) -> &str {
        &self.spec.layers[l].id
    }

    pub fn layer_index(&self, id: &str) -> Result<usize> {
        self.topo
            .layer_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownLayer(id.to_string()))
    }

    pub fn edge_index(&self, id: &str) -> Result<usize> {
        self.topo
            .edge_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownEdge(id.to_string()))
    }

    pub fn decay(&self, layer: usize) -> f64 {
        self.spec.layers[layer].decay
    }

    pub fn image_layer(&self) -> usize {
        self.topo.image_layer
    }

    pub fn label_layer(&self) -> usize {
        self.topo.label_layer
    }

    pub fn top_layer(&self) -> usize {
        self.topo.top_layer
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Edges of one direction, in spec order.
    pub fn edges_in(&self, dir: Direction) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_edges()).filter(move |&e| self.spec.edges[e].direction == dir)
    }

    /// Pre-activation `g(x) W^T + b` plus the transformed input `g(x)`.
    pub(crate) fn preactivation(
        &self,
        e: usize,
        src: ArrayView2<'_, S>,
    ) -> (Array2<S>, Option<Array2<S>>) {
        let edge = &self.spec.edges[e];
        let w = self.params.weight(e);
        let transformed = (!edge.input_activation.is_identity())
            .then(|| edge.input_activation.apply(&src));
        let mut z = match &transformed {
            Some(g) => g.dot(&w.t()),
            None => src.dot(&w.t()),
        };
        if let Some(b) = self.params.bias(e) {
            z += &b.insert_axis(Axis(0));
        }
        (z, transformed)
    }

    /// Prediction of edge `e`'s destination from a batch of source activities
    /// (`batch x src.width`), returned as `batch x dst.width`.
    pub fn edge_predict(&self, e: usize, src: ArrayView2<'_, S>) -> Result<Array2<S>> {
        if e >= self.n_edges() {
            return Err(Error::UnknownEdge(format!("#{e}")));
        }
        let want = self.width(self.edge_src(e));
        if src.ncols() != want {
            return Err(Error::Shape(format!(
                "edge `{}` expects {want} source columns, got {}",
                self.spec.edges[e].id,
                src.ncols()
            )));
        }
        let (z, _) = self.preactivation(e, src);
        Ok(self.spec.edges[e].activation.apply(&z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn xor_bpc() -> NetworkSpec {
        NetworkSpec::chain(
            ModelFamily::Bpc,
            &[2, 16, 16, 1],
            Some(&|_| ActivationKind::Tanh),
            Some(&|_| ActivationKind::Tanh),
        )
    }

    #[test]
    fn xor_parameter_count() {
        let net = Network::<f64>::build(xor_bpc(), 1).unwrap();
        assert_eq!(net.n_edges(), 6);
        // Each edge stores dst*src weights and dst biases.
        let gen = (16 * 2 + 2) + (16 * 16 + 16) + (16 + 16);
        let disc = (2 * 16 + 16) + (16 * 16 + 16) + (16 + 1);
        assert_eq!(net.param_count(), gen + disc);
    }

    #[test]
    fn build_is_deterministic() {
        let a = Network::<f64>::build(xor_bpc(), 42).unwrap();
        let b = Network::<f64>::build(xor_bpc(), 42).unwrap();
        let c = Network::<f64>::build(xor_bpc(), 43).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn init_within_fan_in_bound() {
        let net = Network::<f64>::build(xor_bpc(), 3).unwrap();
        for e in 0..net.n_edges() {
            let bound = (1.0 / net.width(net.edge_src(e)) as f64).sqrt();
            assert!(net.params.weight(e).iter().all(|w| w.abs() <= bound));
            assert!(net.params.bias(e).unwrap().iter().all(|&b| b == 0.0));
        }
    }

    fn single_edge(act: ActivationKind) -> Network<f64> {
        let spec = NetworkSpec {
            family: ModelFamily::DiscPc,
            layers: vec![LayerSpec::new("a", 1), LayerSpec::new("b", 1)],
            edges: vec![EdgeSpec::discriminative("a", "b", act)],
            input_layers: vec!["a".into()],
            top_layer: "b".into(),
            label_layer: None,
        };
        Network::build(spec, 0).unwrap()
    }

    #[test]
    fn zero_weights_predict_zero() {
        let mut net = Network::<f64>::build(xor_bpc(), 5).unwrap();
        net.params.map_inplace(|_| 0.0);
        let x = array![[0.3, -2.0], [1.0, 4.0]];
        let p = net.edge_predict(net.edge_index("x1->x2").unwrap(), x.view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_identity_prediction() {
        let mut net = single_edge(ActivationKind::Identity);
        net.params.owned_weight_mut(0).unwrap()[[0, 0]] = 2.0;
        net.params.bias_mut(0).unwrap()[0] = 1.0;
        let p = net.edge_predict(0, array![[3.0]].view()).unwrap();
        assert_eq!(p, array![[7.0]]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let net = single_edge(ActivationKind::Identity);
        assert!(matches!(
            net.edge_predict(0, array![[1.0, 2.0]].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tied_edge_uses_transpose() {
        let mut spec = NetworkSpec {
            family: ModelFamily::SharedBpc,
            layers: vec![LayerSpec::new("a", 2), LayerSpec::new("b", 3)],
            edges: vec![
                EdgeSpec::discriminative("a", "b", ActivationKind::Identity),
                EdgeSpec::generative("b", "a", ActivationKind::Identity).tied_to("a->b"),
            ],
            input_layers: vec!["a".into()],
            top_layer: "b".into(),
            label_layer: None,
        };
        spec.normalize();
        let mut net = Network::<f64>::build(spec, 9).unwrap();
        let check = |net: &Network<f64>| {
            let x = array![[0.5, -1.0, 2.0]];
            let got = net.edge_predict(1, x.view()).unwrap();
            let w = net.params.weight(0).to_owned();
            let explicit = x.dot(&w);
            assert_eq!(got, explicit);
            assert_eq!(net.params.weight(1), w.t());
        };
        check(&net);
        net.params.owned_weight_mut(0).unwrap()[[2, 1]] += 0.75;
        check(&net);
    }

    #[test]
    fn identity_prediction_is_affine() {
        let net = Network::<f64>::build(
            NetworkSpec::chain(
                ModelFamily::DiscPc,
                &[3, 4],
                None,
                Some(&|_| ActivationKind::Identity),
            ),
            11,
        )
        .unwrap();
        let x = array![[0.1, 0.2, -0.3]];
        let y = array![[1.5, -0.7, 0.25]];
        let zero = Array2::<f64>::zeros((1, 3));
        let lhs = net.edge_predict(0, (&x + &y).view()).unwrap();
        let rhs = net.edge_predict(0, x.view()).unwrap() + net.edge_predict(0, y.view()).unwrap()
            - net.edge_predict(0, zero.view()).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
