//! State initialisation and relaxation of neural activities.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyBreakdown, EnergyConfig, Evaluation};
use crate::network::{Direction, ModelFamily, Network};
use crate::{Error, Result, Scalar};

/// Energy above which relaxation is treated as divergent.
pub const DIVERGENCE_ENERGY: f64 = 1e12;

/// How a layer is held during relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerClamp {
    Free,
    Full,
    /// `batch x width`; `true` marks a clamped coordinate.
    Partial(Array2<bool>),
}

impl LayerClamp {
    pub fn is_full(&self) -> bool {
        matches!(self, LayerClamp::Full)
    }

    pub fn is_free(&self) -> bool {
        matches!(self, LayerClamp::Free)
    }

    pub fn is_clamped(&self, row: usize, col: usize) -> bool {
        match self {
            LayerClamp::Free => false,
            LayerClamp::Full => true,
            LayerClamp::Partial(m) => m[[row, col]],
        }
    }

    pub(crate) fn mask_gradient<S: Scalar>(&self, g: &mut Array2<S>) {
        match self {
            LayerClamp::Free => {}
            LayerClamp::Full => g.fill(S::zero()),
            LayerClamp::Partial(m) => Zip::from(g).and(m).for_each(|v, &c| {
                if c {
                    *v = S::zero()
                }
            }),
        }
    }
}

/// Activities, clamp masks and relaxation velocities of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<S> {
    /// One `batch x width` matrix per layer, in spec order.
    pub activities: Vec<Array2<S>>,
    pub clamps: Vec<LayerClamp>,
    pub velocities: Vec<Array2<S>>,
}

impl<S: Scalar> NetworkState<S> {
    /// Unclamped state with zero velocities.
    pub fn free(activities: Vec<Array2<S>>) -> Self {
        let velocities = activities
            .iter()
            .map(|a| Array2::zeros(a.raw_dim()))
            .collect();
        let clamps = vec![LayerClamp::Free; activities.len()];
        Self {
            activities,
            clamps,
            velocities,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.activities.first().map_or(0, |a| a.nrows())
    }

    pub fn layer(&self, net: &Network<S>, id: &str) -> Result<&Array2<S>> {
        Ok(&self.activities[net.layer_index(id)?])
    }

    pub fn reset_velocities(&mut self) {
        for v in &mut self.velocities {
            v.fill(S::zero());
        }
    }
}

/// Values held fixed during relaxation, keyed by layer id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampSpec<S> {
    layers: BTreeMap<String, ClampEntry<S>>,
}

#[derive(Debug, Clone, PartialEq)]
struct ClampEntry<S> {
    values: Array2<S>,
    mask: Option<Array2<bool>>,
}

impl<S> Default for ClampSpec<S> {
    fn default() -> Self {
        Self {
            layers: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> ClampSpec<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clamps every coordinate of `layer` to `values` (`batch x width`).
    pub fn full(mut self, layer: impl Into<String>, values: Array2<S>) -> Self {
        self.layers.insert(layer.into(), ClampEntry { values, mask: None });
        self
    }

    /// Clamps the coordinates where `mask` is true; the other entries of
    /// `values` are ignored.
    pub fn partial(mut self, layer: impl Into<String>, values: Array2<S>, mask: Array2<bool>) -> Self {
        self.layers.insert(
            layer.into(),
            ClampEntry {
                values,
                mask: Some(mask),
            },
        );
        self
    }

    /// Clamps columns `cols` of `layer` in every row.
    pub fn columns(
        self,
        layer: impl Into<String>,
        values: Array2<S>,
        cols: std::ops::Range<usize>,
    ) -> Self {
        let mut mask = Array2::from_elem(values.raw_dim(), false);
        mask.slice_mut(ndarray::s![.., cols]).fill(true);
        self.partial(layer, values, mask)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn batch_size(&self) -> Result<usize> {
        let mut sizes = self.layers.values().map(|c| c.values.nrows());
        let b = sizes
            .next()
            .ok_or_else(|| Error::InvalidArgument("no layer is clamped".into()))?;
        if sizes.any(|s| s != b) {
            return Err(Error::Shape("clamped layers disagree on batch size".into()));
        }
        Ok(b)
    }
}

/// How free activities are filled before relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitKind {
    BottomUpSweep,
    TopDownSweep,
    /// Outward from the clamped layers along edges of either direction,
    /// preferring discriminative edges when a layer has several sources.
    Propagate,
    Zeros,
    Uniform { lo: f64, hi: f64 },
    GaussianFanIn,
}

impl InitKind {
    /// Initialisation used for training and inference of a model family.
    pub fn for_family(family: ModelFamily) -> Self {
        match family {
            ModelFamily::GenPc | ModelFamily::GenBp => InitKind::TopDownSweep,
            ModelFamily::BimodalGenPc => InitKind::Zeros,
            _ => InitKind::BottomUpSweep,
        }
    }

    fn sweep_direction(self) -> Option<Direction> {
        match self {
            InitKind::BottomUpSweep => Some(Direction::Discriminative),
            InitKind::TopDownSweep => Some(Direction::Generative),
            _ => None,
        }
    }
}

fn fill_free<S: Scalar>(x: &mut Array2<S>, clamp: &LayerClamp, src: &Array2<S>) {
    match clamp {
        LayerClamp::Free => x.assign(src),
        LayerClamp::Full => {}
        LayerClamp::Partial(m) => Zip::from(x).and(m).and(src).for_each(|v, &c, &s| {
            if !c {
                *v = s
            }
        }),
    }
}

/// Builds a state with clamped values set and free coordinates filled per `kind`.
pub fn init_state<S: Scalar>(
    net: &Network<S>,
    clamps: &ClampSpec<S>,
    kind: InitKind,
    seed: u64,
) -> Result<NetworkState<S>> {
    let batch = clamps.batch_size()?;
    let n = net.n_layers();
    let mut activities: Vec<Array2<S>> = (0..n)
        .map(|l| Array2::zeros((batch, net.width(l))))
        .collect();
    let mut layer_clamps = vec![LayerClamp::Free; n];
    for (id, entry) in &clamps.layers {
        let l = net.layer_index(id)?;
        if entry.values.ncols() != net.width(l) {
            return Err(Error::Shape(format!(
                "clamp for `{id}` has {} columns, layer width is {}",
                entry.values.ncols(),
                net.width(l)
            )));
        }
        if let Some(m) = &entry.mask {
            if m.raw_dim() != entry.values.raw_dim() {
                return Err(Error::Shape(format!("clamp mask for `{id}` has the wrong shape")));
            }
        }
        let mut bad = false;
        Zip::from(&entry.values).for_each(|v| bad |= !v.is_finite());
        if bad {
            return Err(Error::InvalidArgument(format!(
                "clamp values for `{id}` contain NaN or infinity"
            )));
        }
        activities[l].assign(&entry.values);
        layer_clamps[l] = match &entry.mask {
            None => LayerClamp::Full,
            Some(m) if m.iter().all(|&c| c) => LayerClamp::Full,
            Some(m) if !m.iter().any(|&c| c) => LayerClamp::Free,
            Some(m) => LayerClamp::Partial(m.clone()),
        };
    }

    match kind.sweep_direction() {
        Some(dir) => sweep(net, &mut activities, &layer_clamps, dir)?,
        None if kind == InitKind::Propagate => propagate(net, &mut activities, &layer_clamps)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for l in 0..n {
                if layer_clamps[l].is_full() {
                    continue;
                }
                let shape = activities[l].raw_dim();
                let fill: Array2<S> = match kind {
                    InitKind::Zeros => Array2::zeros(shape),
                    InitKind::Uniform { lo, hi } => {
                        if !(lo < hi) {
                            return Err(Error::InvalidArgument(format!(
                                "uniform init needs lo < hi, got [{lo}, {hi}]"
                            )));
                        }
                        Array2::from_shape_simple_fn(shape, || S::of(rng.random_range(lo..=hi)))
                    }
                    InitKind::GaussianFanIn => {
                        let fan_in = (0..net.n_edges())
                            .find(|&e| net.edge_dst(e) == l)
                            .map_or(net.width(l), |e| net.width(net.edge_src(e)));
                        let std = (1.0 / fan_in as f64).sqrt();
                        Array2::from_shape_simple_fn(shape, || {
                            S::of(std * rng.sample::<f64, _>(StandardNormal))
                        })
                    }
                    _ => unreachable!(),
                };
                fill_free(&mut activities[l], &layer_clamps[l], &fill);
            }
        }
    }

    Ok(NetworkState {
        velocities: activities.iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
        activities,
        clamps: layer_clamps,
    })
}

/// Fills free coordinates layer by layer in topological order of the edges
/// of `dir`. A layer takes the prediction of its first incoming edge,
/// preferring fully clamped sources; layers without incoming edges start at 0.
fn sweep<S: Scalar>(
    net: &Network<S>,
    acts: &mut [Array2<S>],
    clamps: &[LayerClamp],
    dir: Direction,
) -> Result<()> {
    if clamps.iter().all(|c| c.is_free()) {
        return Err(Error::InvalidArgument(
            "a sweep needs at least one clamped layer".into(),
        ));
    }
    let n = net.n_layers();
    let edges: Vec<usize> = net
        .edges_in(dir)
        .filter(|&e| net.edge_src(e) != net.edge_dst(e))
        .collect();
    let mut indeg = vec![0usize; n];
    for &e in &edges {
        indeg[net.edge_dst(e)] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&l| indeg[l] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(l) = ready.first().copied() {
        ready.remove(0);
        order.push(l);
        for &e in &edges {
            if net.edge_src(e) == l {
                let d = net.edge_dst(e);
                indeg[d] -= 1;
                if indeg[d] == 0 {
                    ready.push(d);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::InvalidSpec("sweep direction contains a cycle".into()));
    }
    let mut reached = vec![false; n];
    for &l in &order {
        if clamps[l].is_full() {
            reached[l] = true;
            continue;
        }
        let incoming: Vec<usize> = edges
            .iter()
            .copied()
            .filter(|&e| net.edge_dst(e) == l)
            .collect();
        let pick = incoming
            .iter()
            .copied()
            .find(|&e| clamps[net.edge_src(e)].is_full())
            .or_else(|| incoming.iter().copied().find(|&e| reached[net.edge_src(e)]))
            .or_else(|| incoming.first().copied());
        match pick {
            Some(e) => {
                let pred = net.edge_predict(e, acts[net.edge_src(e)].view())?;
                fill_free(&mut acts[l], &clamps[l], &pred);
                reached[l] = reached[net.edge_src(e)] || !clamps[l].is_free();
            }
            None => {
                let zeros = Array2::zeros(acts[l].raw_dim());
                fill_free(&mut acts[l], &clamps[l], &zeros);
                reached[l] = !clamps[l].is_free();
            }
        }
    }
    Ok(())
}

fn propagate<S: Scalar>(net: &Network<S>, acts: &mut [Array2<S>], clamps: &[LayerClamp]) -> Result<()> {
    if clamps.iter().all(|c| c.is_free()) {
        return Err(Error::InvalidArgument(
            "propagation needs at least one clamped layer".into(),
        ));
    }
    let n = net.n_layers();
    let mut reached: Vec<bool> = clamps.iter().map(|c| c.is_full()).collect();
    let rank = |e: usize| {
        let disc = net.edge(e).direction == Direction::Discriminative;
        let full = clamps[net.edge_src(e)].is_full();
        (!disc, !full)
    };
    loop {
        let wave: Vec<(usize, usize)> = (0..n)
            .filter(|&l| !reached[l])
            .filter_map(|l| {
                (0..net.n_edges())
                    .filter(|&e| net.edge_dst(e) == l && net.edge_src(e) != l && reached[net.edge_src(e)])
                    .min_by_key(|&e| rank(e))
                    .map(|e| (l, e))
            })
            .collect();
        if wave.is_empty() {
            break;
        }
        for (l, e) in wave {
            let pred = net.edge_predict(e, acts[net.edge_src(e)].view())?;
            fill_free(&mut acts[l], &clamps[l], &pred);
            reached[l] = true;
        }
    }
    Ok(())
}

fn default_record() -> Option<usize> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxConfig {
    /// Number of updates `T`.
    pub steps: usize,
    pub lr_x: f64,
    #[serde(default)]
    pub momentum: f64,
    /// Langevin noise variance; 0 gives deterministic descent.
    #[serde(default)]
    pub noise_variance: f64,
    #[serde(default = "default_record")]
    pub record_energy_every: Option<usize>,
    /// Stop early once the largest activity gradient falls below this.
    #[serde(default)]
    pub grad_tol: Option<f64>,
    /// Seed of the noise stream in stochastic mode.
    #[serde(default)]
    pub seed: u64,
}

impl RelaxConfig {
    pub fn new(steps: usize, lr_x: f64) -> Self {
        Self {
            steps,
            lr_x,
            momentum: 0.0,
            noise_variance: 0.0,
            record_energy_every: None,
            grad_tol: None,
            seed: 0,
        }
    }

    pub fn momentum(mut self, m: f64) -> Self {
        self.momentum = m;
        self
    }

    pub fn noise(mut self, variance: f64, seed: u64) -> Self {
        self.noise_variance = variance;
        self.seed = seed;
        self
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_energy_every = Some(k);
        self
    }

    pub fn grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = Some(tol);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("relaxation needs T >= 1".into()));
        }
        if !(self.lr_x > 0.0 && self.lr_x.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr_x must be > 0, got {}", self.lr_x)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be >= 0, got {}",
                self.noise_variance
            )));
        }
        if self.record_energy_every == Some(0) {
            return Err(Error::InvalidArgument("record_energy_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Summary of one relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxReport {
    pub steps_taken: usize,
    pub final_energy: EnergyBreakdown,
    /// `(step, energy)` pairs; step 0 is the initial state.
    pub trace: Vec<(usize, EnergyBreakdown)>,
}

impl RelaxReport {
    /// Writes the trace as CSV: step, per-edge energies, decay, total.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        if let Some((_, first)) = self.trace.first() {
            out.push_str("step,");
            out.push_str(&first.csv_header());
            out.push('\n');
        }
        for (step, e) in &self.trace {
            out.push_str(&format!("{step},{}\n", e.csv_row()));
        }
        crate::io::write_atomic(path, out.as_bytes())
    }

    pub fn trace_totals(&self) -> Vec<f64> {
        self.trace.iter().map(|(_, e)| e.total).collect()
    }
}

fn divergence<S: Scalar>(
    net: &Network<S>,
    state: &NetworkState<S>,
    energy: &EnergyBreakdown,
    step: usize,
) -> Error {
    let layer = state
        .activities
        .iter()
        .position(|a| a.iter().any(|v| !v.is_finite()))
        .or_else(|| {
            let worst = energy
                .per_edge
                .iter()
                .enumerate()
                .max_by(|a, b| {
                    let key = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
                    key(*a.1).total_cmp(&key(*b.1))
                })
                .map(|(e, _)| e)?;
            Some(net.edge_dst(worst))
        })
        .unwrap_or(0);
    Error::Divergence {
        step,
        layer: net.layer_id(layer).to_string(),
        energy: energy.total,
    }
}

/// Relaxes the free activities of `state` in place.
///
/// Deterministic mode: `r <- m r - grad`, `x <- x + lr r`. Stochastic mode
/// (second-order Langevin): `r <- r - lr grad - lr (1-m) r + sqrt(2 (1-m) lr) sigma xi`,
/// then `x <- x + lr r`. Clamped coordinates never move.
pub fn relax<S: Scalar>(
    net: &Network<S>,
    state: &mut NetworkState<S>,
    cfg: &RelaxConfig,
    energy_cfg: &EnergyConfig,
) -> Result<RelaxReport> {
    cfg.validate()?;
    let mut eval = Evaluation::new(net, state, energy_cfg)?;
    let lr = S::of(cfg.lr_x);
    let m = S::of(cfg.momentum);
    let stochastic = cfg.noise_variance > 0.0;
    let noise_scale = (2.0 * (1.0 - cfg.momentum) * cfg.lr_x * cfg.noise_variance).sqrt();
    let friction = S::of(cfg.lr_x * (1.0 - cfg.momentum));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut trace = Vec::new();
    let mut energy = eval.breakdown(net, state);
    if !energy.total.is_finite() || energy.total > DIVERGENCE_ENERGY {
        return Err(divergence(net, state, &energy, 0));
    }
    if cfg.record_energy_every.is_some() {
        trace.push((0, energy.clone()));
    }

    let mut steps_taken = 0;
    for step in 1..=cfg.steps {
        let grads = eval.activity_gradient(net, state);
        if let Some(tol) = cfg.grad_tol {
            let gmax = grads
                .iter()
                .flat_map(|g| g.iter())
                .fold(0.0f64, |acc, v| acc.max(v.as_f64().abs()));
            if gmax < tol {
                break;
            }
        }
        for (l, g) in grads.iter().enumerate() {
            let clamp = &state.clamps[l];
            if clamp.is_full() {
                continue;
            }
            let x = &mut state.activities[l];
            let r = &mut state.velocities[l];
            let update = |x: &mut S, r: &mut S, g: S, rng: &mut ChaCha8Rng| {
                if stochastic {
                    let xi: f64 = rng.sample(StandardNormal);
                    *r = *r - lr * g - friction * *r + S::of(noise_scale * xi);
                } else {
                    *r = m * *r - g;
                }
                *x += lr * *r;
            };
            match clamp {
                LayerClamp::Partial(mask) => Zip::from(x).and(r).and(g).and(mask).for_each(
                    |x, r, &g, &c| {
                        if !c {
                            update(x, r, g, &mut rng)
                        }
                    },
                ),
                _ => Zip::from(x)
                    .and(r)
                    .and(g)
                    .for_each(|x, r, &g| update(x, r, g, &mut rng)),
            }
        }
        steps_taken = step;
        eval.refresh(net, state);
        energy = eval.breakdown(net, state);
        if !energy.total.is_finite() || energy.total > DIVERGENCE_ENERGY {
            return Err(divergence(net, state, &energy, step));
        }
        if let Some(k) = cfg.record_energy_every {
            if step % k == 0 || step == cfg.steps {
                trace.push((step, energy.clone()));
            }
        }
    }

    Ok(RelaxReport {
        steps_taken,
        final_energy: energy,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{activity_gradient, total_energy};
    use crate::network::{ActivationKind, EdgeSpec, LayerSpec, NetworkSpec};
    use ndarray::array;

    fn identity_pair() -> Network<f64> {
        let spec = NetworkSpec::chain(
            ModelFamily::DiscPc,
            &[1, 1],
            None,
            Some(&|_| ActivationKind::Identity),
        );
        let mut net = Network::build(spec, 0).unwrap();
        net.params.owned_weight_mut(0).unwrap()[[0, 0]] = 1.0;
        net
    }

    fn bpc(seed: u64) -> Network<f64> {
        let spec = NetworkSpec::chain(
            ModelFamily::Bpc,
            &[3, 5, 4, 2],
            Some(&|_| ActivationKind::Tanh),
            Some(&|_| ActivationKind::Tanh),
        );
        Network::build(spec, seed).unwrap()
    }

    #[test]
    fn converges_to_clamped_input() {
        let net = identity_pair();
        let clamps = ClampSpec::new().full("x1", array![[2.0]]);
        let mut st = init_state(&net, &clamps, InitKind::Zeros, 0).unwrap();
        relax(&net, &mut st, &RelaxConfig::new(200, 0.5), &EnergyConfig::default()).unwrap();
        assert!((st.activities[1][[0, 0]] - 2.0).abs() < 1e-12);
        assert_eq!(st.activities[0][[0, 0]], 2.0);
    }

    #[test]
    fn fully_clamped_state_is_unchanged() {
        let net = bpc(1);
        let clamps = ClampSpec::new()
            .full("x1", array![[0.1, -0.2, 0.3]])
            .full("x2", array![[0.5, 0.4, 0.3, 0.2, 0.1]])
            .full("x3", array![[-0.5, 0.4, 0.0, 1.0]])
            .full("x4", array![[1.0, 0.0]]);
        let st0 = init_state(&net, &clamps, InitKind::Zeros, 0).unwrap();
        let mut st = st0.clone();
        relax(&net, &mut st, &RelaxConfig::new(1, 0.1), &EnergyConfig::default()).unwrap();
        assert_eq!(st, st0);
    }

    #[test]
    fn zero_weight_sweep_gives_zero_layers() {
        let mut net = bpc(2);
        net.params.map_inplace(|_| 0.0);
        let clamps = ClampSpec::new().full("x1", array![[0.1, -0.2, 0.3], [1.0, 1.0, 1.0]]);
        let st = init_state(&net, &clamps, InitKind::BottomUpSweep, 0).unwrap();
        for l in 1..4 {
            assert!(st.activities[l].iter().all(|&v| v == 0.0));
        }
        assert!(st.velocities.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn bottom_up_sweep_follows_discriminative_edges() {
        let net = bpc(3);
        let x1 = array![[0.1, -0.2, 0.3]];
        let st = init_state(&net, &ClampSpec::new().full("x1", x1.clone()), InitKind::BottomUpSweep, 0)
            .unwrap();
        let e12 = net.edge_index("x1->x2").unwrap();
        let e23 = net.edge_index("x2->x3").unwrap();
        let x2 = net.edge_predict(e12, x1.view()).unwrap();
        let x3 = net.edge_predict(e23, x2.view()).unwrap();
        assert_eq!(st.activities[1], x2);
        assert_eq!(st.activities[2], x3);
    }

    #[test]
    fn top_down_sweep_starts_from_top() {
        let net = bpc(4);
        let top = array![[1.0, 0.0]];
        let st = init_state(&net, &ClampSpec::new().full("x4", top.clone()), InitKind::TopDownSweep, 0)
            .unwrap();
        let e = net.edge_index("x4->x3").unwrap();
        assert_eq!(st.activities[2], net.edge_predict(e, top.view()).unwrap());
        assert_eq!(st.activities[3], top);
    }

    #[test]
    fn propagate_fills_from_both_clamped_ends() {
        let net = bpc(5);
        let (x1, x4) = (array![[0.1, -0.2, 0.3]], array![[0.0, 1.0]]);
        let clamps = ClampSpec::new().full("x1", x1.clone()).full("x4", x4.clone());
        let st = init_state(&net, &clamps, InitKind::Propagate, 0).unwrap();
        let up = net.edge_index("x1->x2").unwrap();
        let down = net.edge_index("x4->x3").unwrap();
        assert_eq!(st.activities[1], net.edge_predict(up, x1.view()).unwrap());
        assert_eq!(st.activities[2], net.edge_predict(down, x4.view()).unwrap());
    }

    #[test]
    fn sweep_without_clamp_is_error() {
        let net = bpc(5);
        assert!(init_state(&net, &ClampSpec::new(), InitKind::BottomUpSweep, 0).is_err());
    }

    #[test]
    fn nan_clamp_is_error() {
        let net = bpc(5);
        let clamps = ClampSpec::new().full("x1", array![[f64::NAN, 0.0, 0.0]]);
        assert!(matches!(
            init_state(&net, &clamps, InitKind::Zeros, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn uniform_init_reproducible_and_bounded() {
        let net = bpc(6);
        let clamps = ClampSpec::new().full("x1", Array2::zeros((4, 3)));
        let kind = InitKind::Uniform { lo: -1.0, hi: 1.0 };
        let a = init_state(&net, &clamps, kind, 9).unwrap();
        let b = init_state(&net, &clamps, kind, 9).unwrap();
        assert_eq!(a, b);
        for l in 1..4 {
            assert!(a.activities[l].iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(a.activities[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partial_clamp_keeps_masked_coordinates() {
        let net = bpc(7);
        let values = array![[0.25, -0.75, 0.5], [1.0, 0.0, -1.0]];
        let mask = array![[true, false, true], [false, true, false]];
        let clamps = ClampSpec::new()
            .partial("x1", values.clone(), mask.clone())
            .full("x4", array![[1.0, 0.0], [0.0, 1.0]]);
        let mut st = init_state(&net, &clamps, InitKind::TopDownSweep, 0).unwrap();
        let cfg = RelaxConfig::new(50, 0.1).momentum(0.5).noise(0.1, 3);
        relax(&net, &mut st, &cfg, &EnergyConfig::default()).unwrap();
        for ((r, c), &m) in mask.indexed_iter() {
            if m {
                assert_eq!(st.activities[0][[r, c]].to_bits(), values[[r, c]].to_bits());
            } else {
                assert_ne!(st.activities[0][[r, c]], values[[r, c]]);
            }
        }
    }

    #[test]
    fn linear_network_reaches_minimizer() {
        // x1 clamped, x2 and x3 free with identity edges and unit decay on x3:
        // E = 1/2 (x2 - w1 x1)^2 + 1/2 (x3 - w2 x2)^2 + 1/2 x3^2.
        let spec = NetworkSpec {
            family: ModelFamily::DiscPc,
            layers: vec![
                LayerSpec::new("x1", 1),
                LayerSpec::new("x2", 1),
                LayerSpec::new("x3", 1).with_decay(1.0),
            ],
            edges: vec![
                EdgeSpec::discriminative("x1", "x2", ActivationKind::Identity),
                EdgeSpec::discriminative("x2", "x3", ActivationKind::Identity),
            ],
            input_layers: vec!["x1".into()],
            top_layer: "x3".into(),
            label_layer: None,
        };
        let mut net = Network::<f64>::build(spec, 0).unwrap();
        net.params.owned_weight_mut(0).unwrap()[[0, 0]] = 0.5;
        net.params.owned_weight_mut(1).unwrap()[[0, 0]] = 2.0;
        let mut st = init_state(&net, &ClampSpec::new().full("x1", array![[1.0]]), InitKind::Zeros, 0)
            .unwrap();
        let cfg = RelaxConfig::new(20_000, 0.05).momentum(0.5);
        relax(&net, &mut st, &cfg, &EnergyConfig::default()).unwrap();
        // Stationarity gives x3 = x2 and 3 x2 = 0.5.
        let (x2, x3) = (st.activities[1][[0, 0]], st.activities[2][[0, 0]]);
        assert!((x2 - 1.0 / 6.0).abs() < 1e-9);
        assert!((x3 - 1.0 / 6.0).abs() < 1e-9);
        let g = activity_gradient(&net, &st, &EnergyConfig::default()).unwrap();
        let gnorm: f64 = g.iter().flat_map(|m| m.iter()).map(|v| v * v).sum::<f64>().sqrt();
        assert!(gnorm <= 1e-8, "gradient norm {gnorm}");
    }

    #[test]
    fn deterministic_energy_is_nonincreasing() {
        for seed in 0..5 {
            let net = bpc(seed);
            let clamps = ClampSpec::new()
                .full("x1", array![[0.3, -0.1, 0.8], [-0.5, 0.2, 0.1]])
                .full("x4", array![[1.0, 0.0], [0.0, 1.0]]);
            let mut st = init_state(&net, &clamps, InitKind::BottomUpSweep, 0).unwrap();
            let cfg = RelaxConfig::new(500, 1e-3).record_every(1);
            let rep = relax(&net, &mut st, &cfg, &EnergyConfig::default()).unwrap();
            let t = rep.trace_totals();
            assert_eq!(t.len(), 501);
            for w in t.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "energy rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn divergence_reports_step_and_layer() {
        let net = identity_pair();
        let clamps = ClampSpec::new().full("x1", array![[2.0]]);
        let mut st = init_state(&net, &clamps, InitKind::Zeros, 0).unwrap();
        let err = relax(&net, &mut st, &RelaxConfig::new(10_000, 3.0), &EnergyConfig::default())
            .unwrap_err();
        match err {
            Error::Divergence { step, layer, .. } => {
                assert!(step > 0);
                assert_eq!(layer, "x2");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn grad_tol_stops_early() {
        let net = identity_pair();
        let clamps = ClampSpec::new().full("x1", array![[2.0]]);
        let mut st = init_state(&net, &clamps, InitKind::Zeros, 0).unwrap();
        let rep = relax(
            &net,
            &mut st,
            &RelaxConfig::new(1000, 0.5).grad_tol(1e-9),
            &EnergyConfig::default(),
        )
        .unwrap();
        assert!(rep.steps_taken < 1000);
        assert!(total_energy(&net, &st, &EnergyConfig::default()).unwrap().total < 1e-18);
    }

    #[test]
    fn gaussian_posterior_moments() {
        // E = 1/2 (y - x2)^2 + 1/2 x2^2 with y clamped: the posterior over x2
        // at unit temperature is N(y/2, 1/2). Each batch row is its own chain.
        let spec = NetworkSpec {
            family: ModelFamily::GenPc,
            layers: vec![LayerSpec::new("x1", 1), LayerSpec::new("x2", 1).with_decay(1.0)],
            edges: vec![EdgeSpec::generative("x2", "x1", ActivationKind::Identity)],
            input_layers: vec!["x1".into()],
            top_layer: "x2".into(),
            label_layer: None,
        };
        let mut net = Network::<f64>::build(spec, 0).unwrap();
        net.params.owned_weight_mut(0).unwrap()[[0, 0]] = 1.0;
        let chains = 256;
        let y = 2.0;
        let clamps = ClampSpec::new().full("x1", Array2::from_elem((chains, 1), y));
        let mut st = init_state(&net, &clamps, InitKind::Zeros, 0).unwrap();
        let ecfg = EnergyConfig::default();
        let burn = RelaxConfig::new(2_000, 0.02).noise(1.0, 11);
        relax(&net, &mut st, &burn, &ecfg).unwrap();
        let (mut n, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for k in 0..250 {
            let cfg = RelaxConfig::new(40, 0.02).noise(1.0, 100 + k);
            relax(&net, &mut st, &cfg, &ecfg).unwrap();
            for &v in st.activities[1].iter() {
                n += 1.0;
                s1 += v;
                s2 += v * v;
            }
        }
        let mean = s1 / n;
        let var = s2 / n - mean * mean;
        assert!((mean - 1.0).abs() / 1.0 < 0.05, "mean {mean}");
        assert!((var - 0.5).abs() / 0.5 < 0.05, "var {var}");
    }
}
