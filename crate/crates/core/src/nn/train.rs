//! Loss and SGD-with-momentum training.
//!
//! The batch loss is the summed cross entropy plus an L2 penalty on the
//! weights (biases excluded). Per-sample gradient work fans out over a
//! fixed number of chunks and is reduced in chunk order, so results are
//! bit-identical for any thread count.

use rayon::prelude::*;

use super::network::{ModelParams, Network};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::seed;

/// Probabilities below this are clamped before the log.
const PROB_FLOOR: f64 = 1e-12;
/// Fixed gradient-reduction fan-out; independent of the thread count.
const GRAD_CHUNKS: usize = 8;

/// Summed cross entropy: -sum_n ln p_n[y_n], clamped at 1e-12. Non-finite
/// probabilities propagate as NaN instead of being clamped away.
pub fn cross_entropy_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    probs.iter().zip(labels).map(|(p, &y)| sample_nll(p[y])).sum()
}

pub(crate) fn sample_nll(p: f64) -> f64 {
    if p.is_finite() {
        -(p.max(PROB_FLOOR)).ln()
    } else {
        f64::NAN
    }
}

/// lambda * sum of squared weights; biases are not penalized.
pub fn l2_penalty(params: &ModelParams, lambda: f64) -> f64 {
    let sq: f64 = params
        .layers
        .iter()
        .flatten()
        .map(|(w, _)| w.data.iter().map(|v| v * v).sum::<f64>())
        .sum();
    lambda * sq
}

/// The regularized training loss over a batch of predictions.
pub fn loss(probs: &[Vec<f64>], labels: &[usize], params: &ModelParams, lambda: f64) -> f64 {
    cross_entropy_loss(probs, labels) + l2_penalty(params, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Summed batch losses (data term plus per-batch L2).
    pub loss: f64,
}

/// Momentum-SGD state for one model.
pub struct Trainer {
    cfg: TrainConfig,
    velocity: Vec<f64>,
    step_count: u64,
    epoch: usize,
    batch_in_epoch: usize,
}

impl Trainer {
    pub fn new(net: &Network, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            velocity: vec![0.0; net.num_params()],
            cfg,
            step_count: 0,
            epoch: 0,
            batch_in_epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One gradient step over a batch: reverse-mode gradients for every
    /// sample, L2 term, then velocity <- mu*velocity - lr*grad and
    /// w <- w + velocity. Returns the batch loss.
    pub fn step(
        &mut self,
        net: &Network,
        params: &mut ModelParams,
        inputs: &[&[f64]],
        labels: &[usize],
    ) -> Result<f64> {
        assert_eq!(inputs.len(), labels.len());
        let n = inputs.len();
        let total = net.num_params();
        let step_seed = seed::derive_indexed(self.cfg.seed, "dropout-step", self.step_count);

        let chunk_len = n.div_ceil(GRAD_CHUNKS);
        let chunks: Vec<(usize, usize)> = (0..n)
            .step_by(chunk_len.max(1))
            .map(|s| (s, (s + chunk_len).min(n)))
            .collect();

        let partials: Vec<Result<(Vec<f64>, f64)>> = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut grad = vec![0.0f64; total];
                let mut ce = 0.0f64;
                for i in lo..hi {
                    let mask_seed = seed::derive_indexed(step_seed, "sample", i as u64);
                    let trace = net.forward_train(params, inputs[i], mask_seed)?;
                    ce += net.backward(params, &trace, labels[i], &mut grad)?;
                }
                Ok((grad, ce))
            })
            .collect();

        let mut grad = vec![0.0f64; total];
        let mut batch_loss = 0.0f64;
        for partial in partials {
            let (g, ce) = partial?;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
            batch_loss += ce;
        }

        // L2 term and its gradient, weights only.
        let lambda = self.cfg.l2_lambda;
        if lambda != 0.0 {
            batch_loss += l2_penalty(params, lambda);
            for (li, entry) in net.layout().entries.iter().enumerate() {
                if let Some((wr, _)) = entry {
                    let (w, _) = params.layers[li].as_ref().unwrap();
                    for (g, v) in grad[wr.clone()].iter_mut().zip(&w.data) {
                        *g += 2.0 * lambda * v;
                    }
                }
            }
        }

        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                batch: self.batch_in_epoch,
            });
        }

        let (mu, lr) = (self.cfg.momentum, self.cfg.lr);
        for (v, g) in self.velocity.iter_mut().zip(&grad) {
            *v = mu * *v - lr * g;
        }
        for (li, entry) in net.layout().entries.iter().enumerate() {
            if let Some((wr, br)) = entry {
                let (w, b) = params.layers[li].as_mut().unwrap();
                for (p, v) in w.data.iter_mut().zip(&self.velocity[wr.clone()]) {
                    *p += v;
                }
                for (p, v) in b.iter_mut().zip(&self.velocity[br.clone()]) {
                    *p += v;
                }
            }
        }

        self.step_count += 1;
        Ok(batch_loss)
    }
}

/// Full training loop: seeded shuffle each epoch, minibatches of
/// `cfg.batch_size`, one stats entry per epoch.
pub fn train(
    net: &Network,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<Vec<EpochStats>> {
    let mut trainer = Trainer::new(net, cfg.clone())?;
    let n = inputs.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        trainer.epoch = epoch;
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "epoch-shuffle", epoch as u64));
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);

        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            trainer.batch_in_epoch = bi;
            let batch_inputs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            epoch_loss += trainer.step(net, params, &batch_inputs, &batch_labels)?;
        }
        stats.push(EpochStats {
            epoch,
            loss: epoch_loss,
        });
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};

    fn linear_softmax_net(inputs: usize, classes: usize) -> Network {
        Network::new(
            vec![inputs],
            vec![
                LayerSpec::Dense {
                    units: classes,
                    activation: Activation::Linear,
                },
                LayerSpec::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn perfect_one_hot_predictions_have_zero_loss() {
        let probs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(cross_entropy_loss(&probs, &[0, 2]), 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln_c() {
        let probs = vec![vec![1.0 / 6.0; 6]];
        let l = cross_entropy_loss(&probs, &[3]);
        assert!((l - 6.0_f64.ln()).abs() < 1e-12);
        assert!((l - 1.791759469228055).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_make_loss_equal_data_term() {
        let net = linear_softmax_net(4, 3);
        let mut params = net.init_params(0);
        for layer in params.layers.iter_mut().flatten() {
            layer.0.data.fill(0.0);
        }
        let probs = vec![vec![0.5, 0.25, 0.25]];
        let with = loss(&probs, &[0], &params, 0.7);
        let without = cross_entropy_loss(&probs, &[0]);
        assert_eq!(with, without);
    }

    #[test]
    fn l2_excludes_biases() {
        let net = linear_softmax_net(2, 2);
        let mut params = net.init_params(0);
        let (w, b) = params.layers[0].as_mut().unwrap();
        w.data.copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        b.copy_from_slice(&[100.0, 100.0]);
        assert_eq!(l2_penalty(&params, 0.5), 0.5 * 30.0);
    }

    #[test]
    fn first_step_without_momentum_moves_by_lr_times_grad() {
        let net = linear_softmax_net(1, 2);
        let mut params = net.init_params(3);
        let cfg = TrainConfig {
            lr: 0.1,
            momentum: 0.0,
            l2_lambda: 0.0,
            batch_size: 1,
            epochs: 1,
            dropout_rate: 0.0,
            seed: 0,
        };

        // Analytic gradient for this one sample.
        let input = [2.0f64];
        let trace = net.forward_train(&params, &input, 0).unwrap();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&params, &trace, 1, &mut grad).unwrap();

        let before: Vec<f64> = {
            let (w, b) = params.layers[0].as_ref().unwrap();
            w.data.iter().chain(b.iter()).copied().collect()
        };
        let mut trainer = Trainer::new(&net, cfg).unwrap();
        trainer.step(&net, &mut params, &[&input], &[1]).unwrap();
        let after: Vec<f64> = {
            let (w, b) = params.layers[0].as_ref().unwrap();
            w.data.iter().chain(b.iter()).copied().collect()
        };
        for i in 0..before.len() {
            let expected = before[i] - 0.1 * grad[i];
            assert!((after[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn training_is_bit_deterministic_across_runs() {
        let net = linear_softmax_net(3, 2);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let inputs: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![i as f64 * 0.1, (i % 3) as f64, 1.0])
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();

        let mut p1 = net.init_params(cfg.seed);
        let s1 = train(&net, &mut p1, &cfg, &inputs, &labels).unwrap();
        let mut p2 = net.init_params(cfg.seed);
        let s2 = train(&net, &mut p2, &cfg, &inputs, &labels).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn training_is_bit_deterministic_across_thread_counts() {
        let net = linear_softmax_net(3, 2);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 6,
            seed: 4,
            ..TrainConfig::default()
        };
        let inputs: Vec<Vec<f64>> = (0..24)
            .map(|i| vec![(i as f64).sin(), (i as f64).cos(), 0.5])
            .collect();
        let labels: Vec<usize> = (0..24).map(|i| usize::from(i % 3 == 0)).collect();

        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut p = net.init_params(cfg.seed);
                let stats = train(&net, &mut p, &cfg, &inputs, &labels).unwrap();
                (p, stats)
            })
        };
        let (p1, s1) = run_with(1);
        let (p4, s4) = run_with(4);
        assert_eq!(p1, p4);
        assert_eq!(s1, s4);
    }

    #[test]
    fn toy_separable_training_loss_decreases_monotonically() {
        // 50 linearly separable samples, full-batch SGD, default cfg.
        let net = linear_softmax_net(2, 2);
        let inputs: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let x = (i as f64 / 49.0) * 2.0 - 1.0;
                if i % 2 == 0 {
                    vec![x, 1.0 + 0.1 * x]
                } else {
                    vec![x, -1.0 - 0.1 * x]
                }
            })
            .collect();
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let cfg = TrainConfig {
            batch_size: 50,
            epochs: 20,
            seed: 2,
            ..TrainConfig::default()
        };
        let mut params = net.init_params(cfg.seed);
        let stats = train(&net, &mut params, &cfg, &inputs, &labels).unwrap();
        for pair in stats.windows(2) {
            assert!(
                pair[1].loss < pair[0].loss,
                "loss rose: {} -> {}",
                pair[0].loss,
                pair[1].loss
            );
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let net = linear_softmax_net(1, 2);
        let mut params = net.init_params(0);
        let cfg = TrainConfig {
            l2_lambda: 0.0,
            dropout_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&net, cfg).unwrap();
        let bad = [f64::INFINITY];
        let err = trainer
            .step(&net, &mut params, &[&bad[..]], &[0])
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }
}
