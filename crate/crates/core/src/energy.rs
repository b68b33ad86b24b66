//! Energy of a network state and its exact gradients.
//!
//! Every edge `e: s -> d` contributes `alpha_e/2 * |x_d - f(W g(x_s) + b)|^2`
//! per sample, every layer `l` contributes `decay_l/2 * |x_l|^2`. The reported
//! energy is the batch mean. Activity gradients are per sample (gradients of
//! the summed energy, i.e. what each sample's own dynamics see); weight
//! gradients are of the batch-mean energy.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::inference::NetworkState;
use crate::network::{Direction, Network, ParamGrads};
use crate::{Error, Result, Scalar};

/// Alpha applied to the coordinates `start..` of a layer's discriminative
/// error terms, leaving the first `start` coordinates at the edge's own alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeNeuronAlpha {
    pub start: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    /// Overrides the alpha of every generative edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_gen: Option<f64>,
    /// Overrides the alpha of every discriminative edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_disc: Option<f64>,
    /// Per-edge overrides, by edge id; take precedence over direction overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub edge_alpha: BTreeMap<String, f64>,
    /// Per-layer alpha for the free (representation) neurons targeted by
    /// discriminative edges, keyed by layer id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub free_alpha_disc: BTreeMap<String, FreeNeuronAlpha>,
}

impl EnergyConfig {
    pub fn with_alpha_gen(mut self, a: f64) -> Self {
        self.alpha_gen = Some(a);
        self
    }

    pub fn with_alpha_disc(mut self, a: f64) -> Self {
        self.alpha_disc = Some(a);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| a >= 0.0 && a.is_finite();
        let all = self
            .alpha_gen
            .iter()
            .chain(self.alpha_disc.iter())
            .chain(self.edge_alpha.values())
            .copied()
            .chain(self.free_alpha_disc.values().map(|f| f.alpha));
        for a in all {
            if !ok(a) {
                return Err(Error::InvalidArgument(format!(
                    "energy alphas must be finite and >= 0, got {a}"
                )));
            }
        }
        Ok(())
    }

    /// Scalar alpha of edge `e` before any per-neuron adjustment.
    pub fn edge_alpha<S: Scalar>(&self, net: &Network<S>, e: usize) -> f64 {
        let edge = net.edge(e);
        if let Some(a) = self.edge_alpha.get(&edge.id) {
            return *a;
        }
        let dir = match edge.direction {
            Direction::Generative => self.alpha_gen,
            Direction::Discriminative => self.alpha_disc,
        };
        dir.unwrap_or(edge.alpha)
    }

    fn resolve<S: Scalar>(&self, net: &Network<S>) -> Result<Vec<Alpha<S>>> {
        self.validate()?;
        for id in self.edge_alpha.keys() {
            net.edge_index(id)?;
        }
        let mut free = BTreeMap::new();
        for (id, f) in &self.free_alpha_disc {
            let l = net.layer_index(id)?;
            if f.start > net.width(l) {
                return Err(Error::InvalidArgument(format!(
                    "free-neuron offset {} exceeds width of `{id}`",
                    f.start
                )));
            }
            free.insert(l, *f);
        }
        Ok((0..net.n_edges())
            .map(|e| {
                let a = S::of(self.edge_alpha(net, e));
                let dst = net.edge_dst(e);
                match free.get(&dst) {
                    Some(f) if net.edge(e).direction == Direction::Discriminative => {
                        let mut v = Array1::from_elem(net.width(dst), a);
                        v.slice_mut(ndarray::s![f.start..]).fill(S::of(f.alpha));
                        Alpha::PerColumn(v)
                    }
                    _ => Alpha::Uniform(a),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
enum Alpha<S> {
    Uniform(S),
    PerColumn(Array1<S>),
}

impl<S: Scalar> Alpha<S> {
    fn scale(&self, m: &mut Array2<S>) {
        match self {
            Alpha::Uniform(a) => {
                if *a != S::one() {
                    m.mapv_inplace(|v| v * *a)
                }
            }
            Alpha::PerColumn(v) => *m *= &v.view().insert_axis(Axis(0)),
        }
    }

    /// Per-row `1/2 * sum_j alpha_j eps_j^2`.
    fn row_energy(&self, eps: &Array2<S>) -> Array1<S> {
        let half = S::of(0.5);
        match self {
            Alpha::Uniform(a) => eps
                .rows()
                .into_iter()
                .map(|r| half * *a * r.iter().map(|&v| v * v).sum::<S>())
                .collect(),
            Alpha::PerColumn(al) => eps
                .rows()
                .into_iter()
                .map(|r| half * r.iter().zip(al).map(|(&v, &a)| a * v * v).sum::<S>())
                .collect(),
        }
    }
}

/// Prediction error of one edge, before alpha scaling (`x_dst - prediction`).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeError<S> {
    pub edge: String,
    pub epsilon: Array2<S>,
}

/// Batch-mean energy split by term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub edge_ids: Vec<String>,
    pub per_edge: Vec<f64>,
    pub decay: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn edge(&self, id: &str) -> Option<f64> {
        self.edge_ids
            .iter()
            .position(|e| e == id)
            .map(|i| self.per_edge[i])
    }

    pub fn csv_header(&self) -> String {
        let mut cols: Vec<String> = self.edge_ids.iter().map(|e| format!("E[{e}]")).collect();
        cols.push("decay".into());
        cols.push("total".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.per_edge.iter().map(|v| format!("{v:e}")).collect();
        cols.push(format!("{:e}", self.decay));
        cols.push(format!("{:e}", self.total));
        cols.join(",")
    }
}

/// Per-sample energies (`batch` rows) split by edge and decay.
#[derive(Debug, Clone)]
pub struct SampleEnergies<S> {
    /// `batch x n_edges`.
    pub per_edge: Array2<S>,
    pub decay: Array1<S>,
}

impl<S: Scalar> SampleEnergies<S> {
    pub fn total(&self) -> Array1<S> {
        let mut t = self.per_edge.sum_axis(Axis(1));
        t += &self.decay;
        t
    }

    /// Sum over edges of one direction (decay excluded).
    pub fn direction(&self, net: &Network<S>, dir: Direction) -> Array1<S> {
        let mut out = Array1::zeros(self.per_edge.nrows());
        for e in 0..net.n_edges() {
            if net.edge(e).direction == dir {
                out += &self.per_edge.column(e);
            }
        }
        out
    }
}

/// Forward quantities of one edge for a given state.
#[derive(Debug, Clone)]
pub(crate) struct EdgeEval<S> {
    /// `f'(z)`.
    deriv: Array2<S>,
    /// `g(x_src)` when the edge has a non-identity input activation.
    transformed: Option<Array2<S>>,
    /// `x_dst - f(z)`.
    eps: Array2<S>,
}

/// All edge evaluations plus resolved alphas for one state.
pub(crate) struct Evaluation<S> {
    edges: Vec<EdgeEval<S>>,
    alphas: Vec<Alpha<S>>,
}

fn check_state<S: Scalar>(net: &Network<S>, state: &NetworkState<S>) -> Result<()> {
    if state.activities.len() != net.n_layers() {
        return Err(Error::Shape(format!(
            "state has {} layers, network has {}",
            state.activities.len(),
            net.n_layers()
        )));
    }
    let b = state.batch_size();
    for (l, x) in state.activities.iter().enumerate() {
        if x.ncols() != net.width(l) || x.nrows() != b {
            return Err(Error::Shape(format!(
                "layer `{}` activity is {}x{}, expected {b}x{}",
                net.layer_id(l),
                x.nrows(),
                x.ncols(),
                net.width(l)
            )));
        }
    }
    Ok(())
}

fn eval_edge<S: Scalar>(net: &Network<S>, e: usize, acts: &[Array2<S>]) -> EdgeEval<S> {
    let (mut z, transformed) = net.preactivation(e, acts[net.edge_src(e)].view());
    let deriv = net.edge(e).activation.activate_in_place(&mut z);
    // z now holds the prediction; turn it into x_dst - prediction.
    Zip::from(&mut z)
        .and(&acts[net.edge_dst(e)])
        .for_each(|p, &x| *p = x - *p);
    EdgeEval {
        deriv,
        transformed,
        eps: z,
    }
}

impl<S: Scalar> Evaluation<S> {
    pub(crate) fn new(
        net: &Network<S>,
        state: &NetworkState<S>,
        cfg: &EnergyConfig,
    ) -> Result<Self> {
        check_state(net, state)?;
        let alphas = cfg.resolve(net)?;
        Ok(Self::with_alphas(net, state, alphas))
    }

    fn with_alphas(net: &Network<S>, state: &NetworkState<S>, alphas: Vec<Alpha<S>>) -> Self {
        let edges = (0..net.n_edges())
            .map(|e| eval_edge(net, e, &state.activities))
            .collect();
        Self { edges, alphas }
    }

    /// Recomputes the edge evaluations for a new state, keeping alphas.
    pub(crate) fn refresh(&mut self, net: &Network<S>, state: &NetworkState<S>) {
        for (e, slot) in self.edges.iter_mut().enumerate() {
            *slot = eval_edge(net, e, &state.activities);
        }
    }

    pub(crate) fn sample_energies(
        &self,
        net: &Network<S>,
        state: &NetworkState<S>,
    ) -> SampleEnergies<S> {
        let b = state.batch_size();
        let mut per_edge = Array2::zeros((b, net.n_edges()));
        for (e, ev) in self.edges.iter().enumerate() {
            per_edge
                .column_mut(e)
                .assign(&self.alphas[e].row_energy(&ev.eps));
        }
        let mut decay = Array1::zeros(b);
        for (l, x) in state.activities.iter().enumerate() {
            let lambda = net.decay(l);
            if lambda > 0.0 {
                let half = S::of(0.5 * lambda);
                for (d, r) in decay.iter_mut().zip(x.rows()) {
                    *d += half * r.iter().map(|&v| v * v).sum::<S>();
                }
            }
        }
        SampleEnergies { per_edge, decay }
    }

    pub(crate) fn breakdown(&self, net: &Network<S>, state: &NetworkState<S>) -> EnergyBreakdown {
        let se = self.sample_energies(net, state);
        let b = state.batch_size().max(1) as f64;
        let per_edge: Vec<f64> = (0..net.n_edges())
            .map(|e| se.per_edge.column(e).iter().map(|v| v.as_f64()).sum::<f64>() / b)
            .collect();
        let decay = se.decay.iter().map(|v| v.as_f64()).sum::<f64>() / b;
        let total = per_edge.iter().fold(0.0, |acc, v| acc + v) + decay;
        EnergyBreakdown {
            edge_ids: net.spec().edges.iter().map(|e| e.id.clone()).collect(),
            per_edge,
            decay,
            total,
        }
    }

    /// Per-sample activity gradients; clamped coordinates are zero.
    pub(crate) fn activity_gradient(
        &self,
        net: &Network<S>,
        state: &NetworkState<S>,
    ) -> Vec<Array2<S>> {
        let mut grads: Vec<Array2<S>> = state
            .activities
            .iter()
            .map(|x| Array2::zeros(x.raw_dim()))
            .collect();
        for (e, ev) in self.edges.iter().enumerate() {
            let edge = net.edge(e);
            if edge.stop_gradient {
                continue;
            }
            let (s, d) = (net.edge_src(e), net.edge_dst(e));
            let mut scaled = ev.eps.clone();
            self.alphas[e].scale(&mut scaled);
            if !state.clamps[d].is_full() {
                grads[d] += &scaled;
            }
            if !state.clamps[s].is_full() {
                // -(alpha eps * f'(z)) W, then through g'(x_src).
                scaled *= &ev.deriv;
                let mut back = scaled.dot(&net.params.weight(e));
                if !edge.input_activation.is_identity() {
                    let act = edge.input_activation;
                    Zip::from(&mut back)
                        .and(&state.activities[s])
                        .for_each(|g, &x| *g *= act.deriv(x));
                }
                grads[s] -= &back;
            }
        }
        for (l, g) in grads.iter_mut().enumerate() {
            let lambda = net.decay(l);
            if lambda > 0.0 {
                g.scaled_add(S::of(lambda), &state.activities[l]);
            }
            state.clamps[l].mask_gradient(g);
        }
        grads
    }

    /// Gradient of the batch-mean energy with respect to every parameter.
    pub(crate) fn weight_gradient(
        &self,
        net: &Network<S>,
        state: &NetworkState<S>,
    ) -> ParamGrads<S> {
        let mut grads = net.params.zero_grads();
        let inv_b = S::one() / S::of(state.batch_size().max(1) as f64);
        for (e, ev) in self.edges.iter().enumerate() {
            let mut delta = ev.eps.clone();
            self.alphas[e].scale(&mut delta);
            delta *= &ev.deriv;
            let input: ArrayView2<'_, S> = match &ev.transformed {
                Some(g) => g.view(),
                None => state.activities[net.edge_src(e)].view(),
            };
            // dE/dW = -(1/B) delta^T g(x_src)
            let gw = delta.t().dot(&input);
            match net.params.tie(e) {
                None => {
                    let slot = grads.weights[e].as_mut().expect("owned weight");
                    slot.scaled_add(-inv_b, &gw);
                }
                Some(t) => {
                    let slot = grads.weights[t].as_mut().expect("owned weight");
                    slot.scaled_add(-inv_b, &gw.t());
                }
            }
            if let Some(gb) = grads.biases[e].as_mut() {
                gb.scaled_add(-inv_b, &delta.sum_axis(Axis(0)));
            }
        }
        grads
    }
}

/// Prediction error of a single edge.
pub fn edge_error<S: Scalar>(
    net: &Network<S>,
    state: &NetworkState<S>,
    edge: &str,
) -> Result<EdgeError<S>> {
    let e = net.edge_index(edge)?;
    check_state(net, state)?;
    Ok(EdgeError {
        edge: edge.to_string(),
        epsilon: eval_edge(net, e, &state.activities).eps,
    })
}

/// Batch-mean energy.
pub fn total_energy<S: Scalar>(
    net: &Network<S>,
    state: &NetworkState<S>,
    cfg: &EnergyConfig,
) -> Result<EnergyBreakdown> {
    Ok(Evaluation::new(net, state, cfg)?.breakdown(net, state))
}

/// Energy of every sample in the batch.
pub fn sample_energies<S: Scalar>(
    net: &Network<S>,
    state: &NetworkState<S>,
    cfg: &EnergyConfig,
) -> Result<SampleEnergies<S>> {
    Ok(Evaluation::new(net, state, cfg)?.sample_energies(net, state))
}

/// Per-sample gradient of the energy with respect to each layer's activity.
///
/// Row `b` of layer `l` is `dE_b/dx_{b,l}`; clamped coordinates and
/// stop-gradient edges contribute nothing.
pub fn activity_gradient<S: Scalar>(
    net: &Network<S>,
    state: &NetworkState<S>,
    cfg: &EnergyConfig,
) -> Result<Vec<Array2<S>>> {
    Ok(Evaluation::new(net, state, cfg)?.activity_gradient(net, state))
}

/// Gradient of the batch-mean energy with respect to every weight and bias.
///
/// Tied edges accumulate into the edge that owns the weights.
pub fn weight_gradient<S: Scalar>(
    net: &Network<S>,
    state: &NetworkState<S>,
    cfg: &EnergyConfig,
) -> Result<ParamGrads<S>> {
    Ok(Evaluation::new(net, state, cfg)?.weight_gradient(net, state))
}
