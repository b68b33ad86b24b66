use serde::{Deserialize, Serialize};

use crate::network::{ParamGrads, ParamStore};
use crate::{Error, Result, Scalar};

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            betas: default_betas(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        if !beta_ok(self.betas.0) || !beta_ok(self.betas.1) {
            return Err(Error::InvalidArgument(format!(
                "betas must lie in [0, 1), got {:?}",
                self.betas
            )));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "eps must be > 0 and weight decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// First and second moment estimates, flattened in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    /// Number of completed steps.
    pub step: u64,
}

impl<S: Scalar> AdamWState<S> {
    pub fn for_params(params: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<S>> = params
            .arrays()
            .into_iter()
            .map(|(_, _, a)| vec![S::zero(); a.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update over flat parameter slices.
///
/// `step_index` is 1-based and drives the bias correction.
pub fn adamw_step<S: Scalar>(
    params: Vec<&mut [S]>,
    grads: Vec<&[S]>,
    cfg: &AdamWConfig,
    moments: &mut AdamWState<S>,
    step_index: u64,
) -> Result<()> {
    if step_index < 1 {
        return Err(Error::InvalidArgument("AdamW step index starts at 1".into()));
    }
    if params.len() != grads.len() || params.len() != moments.m.len() {
        return Err(Error::Shape("AdamW parameter/gradient/moment lists differ".into()));
    }
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powf(step_index as f64);
    let c2 = 1.0 - b2.powf(step_index as f64);
    let lr = S::of(cfg.lr);
    let decay = S::of(1.0 - cfg.lr * cfg.weight_decay);
    let (b1s, b2s) = (S::of(b1), S::of(b2));
    let (ib1, ib2) = (S::of(1.0 - b1), S::of(1.0 - b2));
    let (c1, c2, eps) = (S::of(c1), S::of(c2), S::of(cfg.eps));
    for (((p, g), m), v) in params
        .into_iter()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape("AdamW array lengths differ".into()));
        }
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1s * m[i] + ib1 * gi;
            v[i] = b2s * v[i] + ib2 * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] = p[i] * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    moments.step = step_index;
    Ok(())
}

/// AdamW bound to a parameter store layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<S> {
    pub cfg: AdamWConfig,
    pub state: AdamWState<S>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(cfg: AdamWConfig, params: &ParamStore<S>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: AdamWState::for_params(params),
        })
    }

    /// Applies one update using the gradient of the loss.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &ParamGrads<S>) -> Result<()> {
        let next = self.state.step + 1;
        adamw_step(params.arrays_mut(), grads.arrays(), &self.cfg, &mut self.state, next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut Vec<f64>, g: &[f64], cfg: &AdamWConfig, st: &mut AdamWState<f64>, t: u64) {
        adamw_step(vec![p.as_mut_slice()], vec![g], cfg, st, t).unwrap();
    }

    fn state(n: usize) -> AdamWState<f64> {
        AdamWState {
            m: vec![vec![0.0; n]],
            v: vec![vec![0.0; n]],
            step: 0,
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let cfg = AdamWConfig::new(1e-3);
        let mut p = vec![0.5, -2.0];
        let mut st = state(2);
        for t in 1..=10 {
            run(&mut p, &[0.0, 0.0], &cfg, &mut st, t);
        }
        assert_eq!(p, vec![0.5, -2.0]);
    }

    #[test]
    fn decoupled_decay_scales_parameters() {
        let cfg = AdamWConfig::new(0.1).weight_decay(0.5);
        let mut p = vec![2.0];
        let mut st = state(1);
        for t in 1..=3 {
            run(&mut p, &[0.0], &cfg, &mut st, t);
        }
        assert!((p[0] - 2.0 * 0.95f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let cfg = AdamWConfig::new(1e-2);
        let mut p = vec![0.0];
        let mut st = state(1);
        let mut last = 0.0;
        for t in 1..=2000 {
            let before = p[0];
            run(&mut p, &[3.0], &cfg, &mut st, t);
            last = before - p[0];
        }
        assert!((last - 1e-2).abs() < 1e-8, "step {last}");
    }

    #[test]
    fn first_step_is_lr_sized() {
        let cfg = AdamWConfig::new(1e-3);
        let mut p = vec![1.0, 1.0];
        let mut st = state(2);
        run(&mut p, &[0.25, -4.0], &cfg, &mut st, 1);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn step_zero_rejected() {
        let cfg = AdamWConfig::new(1e-3);
        let mut p = vec![1.0];
        let mut st = state(1);
        assert!(adamw_step(vec![p.as_mut_slice()], vec![&[0.0][..]], &cfg, &mut st, 0).is_err());
    }

    #[test]
    fn invalid_betas_rejected() {
        let mut cfg = AdamWConfig::new(1e-3);
        cfg.betas = (1.0, 0.9);
        assert!(cfg.validate().is_err());
    }
}
