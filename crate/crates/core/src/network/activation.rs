use ndarray::{Array2, ArrayBase, Data, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::Scalar;

const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

/// Elementwise nonlinearity applied to an edge's affine pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    #[default]
    Identity,
    Tanh,
    Sigmoid,
    LeakyRelu {
        #[serde(default = "default_slope")]
        slope: f64,
    },
    Gelu,
}

impl ActivationKind {
    pub fn leaky_relu() -> Self {
        ActivationKind::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    #[inline]
    pub fn eval<S: Scalar>(self, v: S) -> S {
        match self {
            ActivationKind::Identity => v,
            ActivationKind::Tanh => v.tanh(),
            ActivationKind::Sigmoid => sigmoid(v),
            ActivationKind::LeakyRelu { slope } => {
                if v >= S::zero() {
                    v
                } else {
                    S::of(slope) * v
                }
            }
            ActivationKind::Gelu => v * gauss_cdf(v),
        }
    }

    #[inline]
    pub fn deriv<S: Scalar>(self, v: S) -> S {
        self.eval_with_deriv(v).1
    }

    /// Value and derivative at `v`, sharing intermediate work.
    #[inline]
    pub fn eval_with_deriv<S: Scalar>(self, v: S) -> (S, S) {
        match self {
            ActivationKind::Identity => (v, S::one()),
            ActivationKind::Tanh => {
                let t = v.tanh();
                (t, S::one() - t * t)
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(v);
                (s, s * (S::one() - s))
            }
            ActivationKind::LeakyRelu { slope } => {
                if v >= S::zero() {
                    (v, S::one())
                } else {
                    let a = S::of(slope);
                    (a * v, a)
                }
            }
            ActivationKind::Gelu => {
                let cdf = gauss_cdf(v);
                let pdf = (-(v * v) * S::of(0.5)).exp() * S::of(FRAC_1_SQRT_2PI);
                (v * cdf, cdf + v * pdf)
            }
        }
    }

    pub fn is_identity(self) -> bool {
        matches!(self, ActivationKind::Identity)
    }

    /// Applies the activation elementwise.
    pub fn apply<S: Scalar, D: Dimension, T: Data<Elem = S>>(
        self,
        v: &ArrayBase<T, D>,
    ) -> ndarray::Array<S, D> {
        v.mapv(|x| self.eval(x))
    }

    /// Elementwise value and (optionally) derivative of a real vector or matrix.
    pub fn evaluate<S: Scalar, D: Dimension, T: Data<Elem = S>>(
        self,
        v: &ArrayBase<T, D>,
        want_deriv: bool,
    ) -> (ndarray::Array<S, D>, Option<ndarray::Array<S, D>>) {
        if !want_deriv {
            return (self.apply(v), None);
        }
        let mut value = ndarray::Array::zeros(v.raw_dim());
        let mut deriv = ndarray::Array::zeros(v.raw_dim());
        Zip::from(&mut value)
            .and(&mut deriv)
            .and(v)
            .for_each(|o, d, &x| {
                let (a, b) = self.eval_with_deriv(x);
                *o = a;
                *d = b;
            });
        (value, Some(deriv))
    }

    /// In-place activation of a pre-activation matrix; returns the derivative matrix.
    pub(crate) fn activate_in_place<S: Scalar>(self, z: &mut Array2<S>) -> Array2<S> {
        let mut deriv = Array2::zeros(z.raw_dim());
        Zip::from(z).and(&mut deriv).for_each(|x, d| {
            let (a, b) = self.eval_with_deriv(*x);
            *x = a;
            *d = b;
        });
        deriv
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

#[inline]
fn gauss_cdf<S: Scalar>(v: S) -> S {
    S::of(0.5) * (S::one() + (v * S::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const ALL: [ActivationKind; 5] = [
        ActivationKind::Identity,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::LeakyRelu { slope: 0.01 },
        ActivationKind::Gelu,
    ];

    #[test]
    fn tanh_at_origin() {
        let (v, d) = ActivationKind::Tanh.evaluate(&array![0.0f64], true);
        assert_eq!(v[0], 0.0);
        assert_eq!(d.unwrap()[0], 1.0);
    }

    #[test]
    fn identity_passes_through() {
        let (v, d) = ActivationKind::Identity.evaluate(&array![3.5f64], true);
        assert_eq!(v[0], 3.5);
        assert_eq!(d.unwrap()[0], 1.0);
    }

    #[test]
    fn leaky_relu_negative_branch() {
        let (v, d) = ActivationKind::leaky_relu().evaluate(&array![-2.0f64], true);
        assert!((v[0] + 0.02).abs() < 1e-15);
        assert_eq!(d.unwrap()[0], 0.01);
    }

    #[test]
    fn deriv_only_when_requested() {
        let (_, d) = ActivationKind::Gelu.evaluate(&array![1.0f64], false);
        assert!(d.is_none());
    }

    #[test]
    fn output_ranges() {
        for x in [-50.0f64, -3.0, 0.0, 2.0, 50.0] {
            let t: f64 = ActivationKind::Tanh.eval(x);
            assert!(t.abs() <= 1.0);
            let s: f64 = ActivationKind::Sigmoid.eval(x);
            assert!((0.0..=1.0).contains(&s));
        }
        let t: f64 = ActivationKind::Tanh.eval(0.3);
        assert!(t.abs() < 1.0);
    }

    #[test]
    fn serde_tagging() {
        let k: ActivationKind = serde_json::from_str(r#"{"kind":"leaky_relu"}"#).unwrap();
        assert_eq!(k, ActivationKind::LeakyRelu { slope: 0.01 });
        let k: ActivationKind = serde_json::from_str(r#"{"kind":"gelu"}"#).unwrap();
        assert_eq!(k, ActivationKind::Gelu);
    }

    #[test]
    fn derivatives_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for kind in ALL {
            for _ in 0..100 {
                let mut x: f64 = rng.random_range(-4.0..4.0);
                if matches!(kind, ActivationKind::LeakyRelu { .. }) && x.abs() < 1e-3 {
                    x += 0.5;
                }
                let fd = (kind.eval(x + h) - kind.eval(x - h)) / (2.0 * h);
                let an: f64 = kind.deriv(x);
                let rel = (fd - an).abs() / an.abs().max(1e-8);
                assert!(rel <= 1e-6, "{kind:?} at {x}: fd {fd} vs {an} (rel {rel})");
            }
        }
    }

    proptest! {
        #[test]
        fn identity_derivative_is_one(x in -1e6f64..1e6) {
            prop_assert_eq!(ActivationKind::Identity.deriv(x), 1.0);
        }

        #[test]
        fn total_on_finite_inputs(x in -1e3f64..1e3) {
            for kind in ALL {
                let (v, d) = kind.eval_with_deriv(x);
                prop_assert!(v.is_finite() && d.is_finite());
            }
        }
    }
}
