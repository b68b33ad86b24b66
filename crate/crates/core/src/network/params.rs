use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Topology;
use crate::Scalar;

/// Weights and biases of every edge.
///
/// Tied edges own no storage: their weight is the transpose of the edge they
/// are tied to, so updating the source updates both views.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    weights: Vec<Option<Array2<S>>>,
    biases: Vec<Option<Array1<S>>>,
    ties: Vec<Option<usize>>,
}

/// Gradient (or update) with the same layout as [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<S> {
    pub weights: Vec<Option<Array2<S>>>,
    pub biases: Vec<Option<Array1<S>>>,
}

impl<S: Scalar> ParamStore<S> {
    /// Uniform `±sqrt(1/fan_in)` weights and zero biases, drawn edge by edge.
    pub fn init_uniform(topo: &Topology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = topo.edge_src.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for e in 0..n {
            let rows = topo.widths[topo.edge_dst[e]];
            let cols = topo.widths[topo.edge_src[e]];
            if topo.edge_tie[e].is_some() {
                weights.push(None);
            } else {
                let bound = (1.0 / cols as f64).sqrt();
                let w = Array2::from_shape_simple_fn((rows, cols), || {
                    S::of(rng.random_range(-bound..bound))
                });
                weights.push(Some(w));
            }
            biases.push(topo.edge_has_bias[e].then(|| Array1::zeros(rows)));
        }
        Self {
            weights,
            biases,
            ties: topo.edge_tie.clone(),
        }
    }

    pub fn zeros(topo: &Topology) -> Self {
        let mut p = Self::init_uniform(topo, 0);
        p.map_inplace(|_| S::zero());
        p
    }

    /// Effective weight matrix of edge `e` (`dst.width x src.width`).
    pub fn weight(&self, e: usize) -> ArrayView2<'_, S> {
        match self.ties[e] {
            Some(t) => self.weights[t].as_ref().expect("tie source owns weights").t(),
            None => self.weights[e].as_ref().expect("untied edge owns weights").view(),
        }
    }

    pub fn bias(&self, e: usize) -> Option<ArrayView1<'_, S>> {
        self.biases[e].as_ref().map(|b| b.view())
    }

    /// Mutable access to the weights owned by edge `e`; `None` for tied edges.
    pub fn owned_weight_mut(&mut self, e: usize) -> Option<&mut Array2<S>> {
        self.weights[e].as_mut()
    }

    pub fn bias_mut(&mut self, e: usize) -> Option<&mut Array1<S>> {
        self.biases[e].as_mut()
    }

    pub fn tie(&self, e: usize) -> Option<usize> {
        self.ties[e]
    }

    pub fn n_edges(&self) -> usize {
        self.weights.len()
    }

    /// Number of stored scalars.
    pub fn count(&self) -> usize {
        self.weights.iter().flatten().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().flatten().map(|b| b.len()).sum::<usize>()
    }

    pub fn map_inplace(&mut self, mut f: impl FnMut(S) -> S) {
        for w in self.weights.iter_mut().flatten() {
            w.mapv_inplace(&mut f);
        }
        for b in self.biases.iter_mut().flatten() {
            b.mapv_inplace(&mut f);
        }
    }

    /// Stored arrays in canonical order (per edge: weight, then bias).
    pub fn arrays(&self) -> Vec<(String, Vec<usize>, Vec<S>)> {
        let mut out = Vec::new();
        for e in 0..self.weights.len() {
            if let Some(w) = &self.weights[e] {
                out.push((format!("w{e}"), w.shape().to_vec(), w.iter().copied().collect()));
            }
            if let Some(b) = &self.biases[e] {
                out.push((format!("b{e}"), b.shape().to_vec(), b.iter().copied().collect()));
            }
        }
        out
    }

    /// Mutable flat views in the same order as [`ParamStore::arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if let Some(w) = w {
                out.push(w.as_slice_mut().expect("standard layout"));
            }
            if let Some(b) = b {
                out.push(b.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    pub fn zero_grads(&self) -> ParamGrads<S> {
        ParamGrads {
            weights: self
                .weights
                .iter()
                .map(|w| w.as_ref().map(|w| Array2::zeros(w.raw_dim())))
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.as_ref().map(|b| Array1::zeros(b.raw_dim())))
                .collect(),
        }
    }
}

impl<S: Scalar> ParamGrads<S> {
    pub fn arrays(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = Vec::new();
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            if let Some(w) = w {
                out.push(w.as_slice().expect("standard layout"));
            }
            if let Some(b) = b {
                out.push(b.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn max_abs(&self) -> S {
        self.arrays()
            .into_iter()
            .flat_map(|a| a.iter().copied())
            .fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// Adds `scale * other` elementwise.
    pub fn add_scaled(&mut self, other: &ParamGrads<S>, scale: S) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.scaled_add(scale, b);
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                a.scaled_add(scale, b);
            }
        }
    }
}
