//! Finite-difference and structural checks of the energy and its gradients.

use bpc::energy::{activity_gradient, sample_energies, total_energy, weight_gradient};
use bpc::{
    ActivationKind, EdgeSpec, EnergyConfig, LayerClamp, LayerSpec, ModelFamily, Network, NetworkSpec,
    NetworkState,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [ActivationKind; 5] = [
    ActivationKind::Identity,
    ActivationKind::Tanh,
    ActivationKind::Sigmoid,
    ActivationKind::LeakyRelu { slope: 0.01 },
    ActivationKind::Gelu,
];

const H: f64 = 1e-5;

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-6 * an.abs().max(1e-3)
}

fn random_chain(rng: &mut ChaCha8Rng, family: ModelFamily) -> NetworkSpec {
    let depth = rng.random_range(2..=4);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
    let gen: Vec<ActivationKind> = (0..=depth).map(|_| KINDS[rng.random_range(0..5)]).collect();
    let disc: Vec<ActivationKind> = (0..=depth).map(|_| KINDS[rng.random_range(0..5)]).collect();
    let mut spec = NetworkSpec::chain(family, &widths, Some(&|l| gen[l]), Some(&|l| disc[l]));
    for e in &mut spec.edges {
        e.alpha = rng.random_range(0.1..2.0);
    }
    for l in &mut spec.layers {
        if rng.random_bool(0.3) {
            l.decay = rng.random_range(0.0..1.5);
        }
    }
    spec
}

fn random_state(net: &Network, rng: &mut ChaCha8Rng, batch: usize) -> NetworkState {
    let acts = (0..net.n_layers())
        .map(|l| {
            Array2::from_shape_simple_fn((batch, net.width(l)), || rng.random_range(-1.5..1.5))
        })
        .collect();
    NetworkState::free(acts)
}

fn randomize_biases(net: &mut Network, rng: &mut ChaCha8Rng) {
    for e in 0..net.n_edges() {
        if let Some(b) = net.params.bias_mut(e) {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
}

fn summed_energy(net: &Network, st: &NetworkState, cfg: &EnergyConfig) -> f64 {
    sample_energies(net, st, cfg).unwrap().total().sum()
}

fn check_activity_gradient(net: &Network, st: &NetworkState, cfg: &EnergyConfig) {
    let g = activity_gradient(net, st, cfg).unwrap();
    for l in 0..net.n_layers() {
        for idx in ndarray::indices(st.activities[l].raw_dim()) {
            let an = g[l][idx];
            if st.clamps[l].is_clamped(idx.0, idx.1) {
                assert_eq!(an, 0.0);
                continue;
            }
            let mut p = st.clone();
            p.activities[l][idx] += H;
            let mut m = st.clone();
            m.activities[l][idx] -= H;
            let fd = (summed_energy(net, &p, cfg) - summed_energy(net, &m, cfg)) / (2.0 * H);
            assert!(close(fd, an), "layer {l} {idx:?}: fd {fd} vs {an}");
        }
    }
}

fn check_weight_gradient(net: &Network, st: &NetworkState, cfg: &EnergyConfig) {
    let g = weight_gradient(net, st, cfg).unwrap();
    let mean = |n: &Network| total_energy(n, st, cfg).unwrap().total;
    for e in 0..net.n_edges() {
        if let Some(gw) = &g.weights[e] {
            for idx in ndarray::indices(gw.raw_dim()) {
                let mut p = net.clone();
                p.params.owned_weight_mut(e).unwrap()[idx] += H;
                let mut m = net.clone();
                m.params.owned_weight_mut(e).unwrap()[idx] -= H;
                let fd = (mean(&p) - mean(&m)) / (2.0 * H);
                assert!(close(fd, gw[idx]), "W{e} {idx:?}: fd {fd} vs {}", gw[idx]);
            }
        }
        if let Some(gb) = &g.biases[e] {
            for i in 0..gb.len() {
                let mut p = net.clone();
                p.params.bias_mut(e).unwrap()[i] += H;
                let mut m = net.clone();
                m.params.bias_mut(e).unwrap()[i] -= H;
                let fd = (mean(&p) - mean(&m)) / (2.0 * H);
                assert!(close(fd, gb[i]), "b{e}[{i}]: fd {fd} vs {}", gb[i]);
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences_on_random_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..40 {
        let spec = random_chain(&mut rng, ModelFamily::Bpc);
        let mut net = Network::build(spec, trial).unwrap();
        randomize_biases(&mut net, &mut rng);
        let mut st = random_state(&net, &mut rng, 3);
        st.clamps[0] = LayerClamp::Full;
        let cfg = EnergyConfig::default();
        check_activity_gradient(&net, &st, &cfg);
        check_weight_gradient(&net, &st, &cfg);
    }
}

#[test]
fn gradients_with_input_activation_and_partial_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = NetworkSpec {
        family: ModelFamily::BimodalBpc,
        layers: vec![
            LayerSpec::new("x1", 4),
            LayerSpec::new("x2", 5),
            LayerSpec::new("x3", 6).with_decay(0.5),
        ],
        edges: vec![
            EdgeSpec::generative("x3", "x2", ActivationKind::Tanh)
                .input_activation(ActivationKind::Sigmoid),
            EdgeSpec::generative("x2", "x1", ActivationKind::Gelu)
                .input_activation(ActivationKind::Tanh),
            EdgeSpec::discriminative("x1", "x2", ActivationKind::Tanh).alpha(0.7),
            EdgeSpec::discriminative("x2", "x3", ActivationKind::Identity),
        ],
        input_layers: vec!["x1".into()],
        top_layer: "x3".into(),
        label_layer: None,
    };
    let mut net = Network::build(spec, 3).unwrap();
    randomize_biases(&mut net, &mut rng);
    let mut st = random_state(&net, &mut rng, 2);
    st.clamps[0] = LayerClamp::Full;
    let mut mask = Array2::from_elem((2, 6), false);
    mask.slice_mut(ndarray::s![.., ..2]).fill(true);
    st.clamps[2] = LayerClamp::Partial(mask);
    let mut cfg = EnergyConfig::default().with_alpha_gen(0.3);
    cfg.free_alpha_disc.insert(
        "x3".into(),
        bpc::energy::FreeNeuronAlpha {
            start: 2,
            alpha: 0.3,
        },
    );
    check_activity_gradient(&net, &st, &cfg);
    check_weight_gradient(&net, &st, &cfg);
}

fn shared_spec() -> NetworkSpec {
    NetworkSpec {
        family: ModelFamily::SharedBpc,
        layers: vec![
            LayerSpec::new("x1", 3),
            LayerSpec::new("x2", 4),
            LayerSpec::new("x3", 2),
        ],
        edges: vec![
            EdgeSpec::discriminative("x1", "x2", ActivationKind::Tanh),
            EdgeSpec::discriminative("x2", "x3", ActivationKind::Sigmoid),
            EdgeSpec::generative("x3", "x2", ActivationKind::Tanh).tied_to("x2->x3"),
            EdgeSpec::generative("x2", "x1", ActivationKind::Gelu).tied_to("x1->x2"),
        ],
        input_layers: vec!["x1".into()],
        top_layer: "x3".into(),
        label_layer: None,
    }
}

#[test]
fn tied_gradients_accumulate_into_owner() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Network::build(shared_spec(), 1).unwrap();
    let st = random_state(&net, &mut rng, 4);
    let cfg = EnergyConfig::default();
    check_activity_gradient(&net, &st, &cfg);
    check_weight_gradient(&net, &st, &cfg);
    let g = weight_gradient(&net, &st, &cfg).unwrap();
    assert!(g.weights[2].is_none() && g.weights[3].is_none());
}

#[test]
fn stop_gradient_edges_do_not_move_activities() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut spec = NetworkSpec::chain(
        ModelFamily::HybridPc,
        &[4, 5, 3],
        Some(&|_| ActivationKind::Tanh),
        Some(&|_| ActivationKind::Tanh),
    );
    for e in &mut spec.edges {
        if e.direction == bpc::Direction::Discriminative {
            e.stop_gradient = true;
        }
    }
    let net = Network::build(spec, 2).unwrap();
    let st = random_state(&net, &mut rng, 3);
    let cfg = EnergyConfig::default();
    let before = activity_gradient(&net, &st, &cfg).unwrap();
    for e in net.edges_in(bpc::Direction::Discriminative).collect::<Vec<_>>() {
        let mut perturbed = net.clone();
        perturbed
            .params
            .owned_weight_mut(e)
            .unwrap()
            .mapv_inplace(|w| w + rng.random_range(-1.0..1.0));
        perturbed.params.bias_mut(e).unwrap().mapv_inplace(|b| b + 0.5);
        let after = activity_gradient(&perturbed, &st, &cfg).unwrap();
        assert_eq!(before, after);
    }
    // Stop-gradient edges still train through their own term.
    let g = weight_gradient(&net, &st, &cfg).unwrap();
    for e in net.edges_in(bpc::Direction::Discriminative) {
        assert!(g.weights[e].as_ref().unwrap().iter().any(|&v| v != 0.0));
    }
    check_weight_gradient(&net, &st, &cfg);
}

fn disc_only(spec: &NetworkSpec, dir: bpc::Direction) -> NetworkSpec {
    let mut s = spec.clone();
    s.edges.retain(|e| e.direction == dir);
    s
}

#[test]
fn direction_nulling_reproduces_single_direction_energies() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..25 {
        let spec = random_chain(&mut rng, ModelFamily::Bpc);
        let mut net = Network::build(spec.clone(), trial).unwrap();
        randomize_biases(&mut net, &mut rng);
        let st = random_state(&net, &mut rng, 5);
        for (dir, cfg) in [
            (bpc::Direction::Discriminative, EnergyConfig::default().with_alpha_gen(0.0)),
            (bpc::Direction::Generative, EnergyConfig::default().with_alpha_disc(0.0)),
        ] {
            let mut single = Network::build(disc_only(&spec, dir), 0).unwrap();
            let mut k = 0;
            for e in 0..net.n_edges() {
                if net.edge(e).direction == dir {
                    *single.params.owned_weight_mut(k).unwrap() =
                        net.params.weight(e).to_owned();
                    single.params.bias_mut(k).unwrap().assign(&net.params.bias(e).unwrap());
                    k += 1;
                }
            }
            let a = total_energy(&net, &st, &cfg).unwrap().total;
            let b = total_energy(&single, &st, &EnergyConfig::default()).unwrap().total;
            assert_eq!(a.to_bits(), b.to_bits(), "{dir:?}: {a} vs {b}");
        }
    }
}

#[test]
fn xor_zero_parameters_energy() {
    let spec = NetworkSpec::chain(
        ModelFamily::DiscPc,
        &[2, 16, 16, 1],
        None,
        Some(&|_| ActivationKind::Tanh),
    );
    let mut net = Network::build(spec, 0).unwrap();
    net.params.map_inplace(|_| 0.0);
    let st = NetworkState::free(vec![
        ndarray::array![[-1.0, -1.0]],
        Array2::zeros((1, 16)),
        Array2::zeros((1, 16)),
        ndarray::array![[-1.0]],
    ]);
    let e = total_energy(&net, &st, &EnergyConfig::default()).unwrap();
    assert_eq!(e.total, 0.5);
}

#[test]
fn breakdown_components_are_nonnegative_and_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..20 {
        let spec = random_chain(&mut rng, ModelFamily::Bpc);
        let net = Network::build(spec, trial).unwrap();
        let st = random_state(&net, &mut rng, 4);
        let e = total_energy(&net, &st, &EnergyConfig::default()).unwrap();
        assert!(e.per_edge.iter().all(|&v| v >= 0.0) && e.decay >= 0.0);
        let sum: f64 = e.per_edge.iter().sum::<f64>() + e.decay;
        assert!((sum - e.total).abs() <= 1e-12 * e.total.max(1.0));
    }
}

#[test]
fn f32_matches_f64() {
    let spec = NetworkSpec::chain(
        ModelFamily::Bpc,
        &[3, 4, 2],
        Some(&|_| ActivationKind::Tanh),
        Some(&|_| ActivationKind::Gelu),
    );
    let n64 = Network::build(spec.clone(), 4).unwrap();
    let n32 = bpc::network::Network::<f32>::build(spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let st64 = random_state(&n64, &mut rng, 2);
    let st32 = bpc::inference::NetworkState::free(
        st64.activities.iter().map(|a| a.mapv(|v| v as f32)).collect(),
    );
    let e64 = total_energy(&n64, &st64, &EnergyConfig::default()).unwrap().total;
    let e32 = total_energy(&n32, &st32, &EnergyConfig::default()).unwrap().total;
    assert!((e64 - e32).abs() < 1e-4 * e64.max(1.0));
}
