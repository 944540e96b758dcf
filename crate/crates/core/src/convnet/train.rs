//! Mini-batch training on mean squared error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Network, Param, Workspace};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::ADAM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || !(epsilon > 0.0) {
                return Err(Error::InvalidArgument("adam betas must lie in [0, 1) and epsilon > 0".into()));
            }
        }
        Ok(())
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

struct AdamState {
    m: Vec<Param>,
    v: Vec<Param>,
    t: i32,
}

fn update(
    params: &mut [Param],
    grads: &[Param],
    cfg: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    let lr = cfg.learning_rate;
    match (cfg.optimizer, adam) {
        (Optimizer::Sgd, _) => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (w, d) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
                    *w -= lr * d;
                }
                for (w, d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                    *w -= lr * d;
                }
            }
        }
        (Optimizer::Adam { beta1, beta2, epsilon }, Some(st)) => {
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            let step = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                }
            };
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
                step(p.weights.data_mut(), g.weights.data(), m.weights.data_mut(), v.weights.data_mut());
                step(p.bias.data_mut(), g.bias.data(), m.bias.data_mut(), v.bias.data_mut());
            }
        }
        (Optimizer::Adam { .. }, None) => unreachable!("adam state initialised with the optimizer"),
    }
}

/// Trains `net` in place and returns the mean training loss of every epoch,
/// measured on each batch before its update.
pub fn train(net: &mut Network, data: &[Sample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let in_shape = [net.spec().input_window, net.spec().input_channels];
    let out_dim = net.spec().output_dim;
    for s in data {
        s.input.expect_shape("training input", &in_shape)?;
        s.target.expect_shape("training target", &[out_dim])?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = net.zero_grads();
    let mut adam = matches!(cfg.optimizer, Optimizer::Adam { .. }).then(|| AdamState {
        m: net.zero_grads(),
        v: net.zero_grads(),
        t: 0,
    });
    let mut ws = Workspace::default();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            inputs.clear();
            targets.clear();
            for &i in chunk {
                inputs.extend_from_slice(data[i].input.data());
                targets.extend_from_slice(data[i].target.data());
            }
            let loss = net.loss_and_grad_with(&inputs, &targets, chunk.len(), &mut ws, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            total += loss * chunk.len() as f64;
            update(net.params_mut(), &grads, cfg, &mut adam);
        }
        history.push(total / data.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::network::{build_variant, Variant};

    fn dataset(n: usize, window: usize) -> Vec<Sample> {
        (0..n)
            .map(|k| Sample {
                input: Tensor::new(
                    vec![window, 3],
                    (0..window * 3).map(|i| ((i + 5 * k) as f64 * 0.37).sin()).collect(),
                )
                .unwrap(),
                target: Tensor::new(vec![3], vec![(k as f64 * 0.3).cos(), 0.2, -0.1 * k as f64]).unwrap(),
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_weights() {
        let mut net = Network::init(build_variant(Variant::Superficial, 8).unwrap(), 1).unwrap();
        let before = net.clone();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let h = train(&mut net, &dataset(4, 8), &cfg).unwrap();
        assert!(h.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = Network::init(build_variant(Variant::Superficial, 8).unwrap(), 1).unwrap();
        assert!(matches!(train(&mut net, &[], &TrainConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn deterministic_history() {
        let data = dataset(10, 8);
        let cfg = TrainConfig { epochs: 5, batch_size: 3, seed: 11, ..TrainConfig::default() };
        let run = || {
            let mut net = Network::init(build_variant(Variant::Superficial, 8).unwrap(), 2).unwrap();
            let h = train(&mut net, &data, &cfg).unwrap();
            (net, h)
        };
        let (n1, h1) = run();
        let (n2, h2) = run();
        assert_eq!(h1.len(), 5);
        assert!(h1.iter().zip(&h2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(n1, n2);
    }

    #[test]
    fn sgd_reduces_loss() {
        let data = dataset(6, 8);
        let cfg = TrainConfig { epochs: 40, batch_size: 6, learning_rate: 1e-2, optimizer: Optimizer::Sgd, ..TrainConfig::default() };
        let mut net = Network::init(build_variant(Variant::Superficial, 8).unwrap(), 4).unwrap();
        let h = train(&mut net, &data, &cfg).unwrap();
        assert!(h.last().unwrap() < &h[0]);
    }

    #[test]
    fn non_finite_loss_reports_epoch() {
        let mut data = dataset(2, 8);
        data[1].target.data_mut()[0] = f64::INFINITY;
        let mut net = Network::init(build_variant(Variant::Superficial, 8).unwrap(), 1).unwrap();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        assert!(matches!(train(&mut net, &data, &cfg), Err(Error::NonFiniteLoss { epoch: 0 })));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
