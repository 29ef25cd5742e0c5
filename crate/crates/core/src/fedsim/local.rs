use rand::seq::SliceRandom;

use super::{ClientShard, FedConfig};
use crate::error::{Error, Result};
use crate::nn::{self, Matrix, ModelParams};
use crate::rng;

/// Plain minibatch SGD on the client's cross-entropy; returns `θ = w0 − w_final`.
///
/// Each epoch reshuffles the client's points from its per-round stream; the
/// last batch of an epoch may be short.
pub fn local_update(client: &ClientShard, w0: &ModelParams, cfg: &FedConfig, round: usize) -> Result<Vec<f64>> {
    if client.is_empty() {
        return Err(Error::Shape(format!("client {} has no data", client.client_id)));
    }
    let onehot = Matrix::one_hot(&client.labels, w0.arch().num_classes);
    let mut rng = rng::local_batches(client.rng_seed, round);
    let mut w = w0.clone();
    let mut order: Vec<usize> = (0..client.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.local_batch_size) {
            let x = client.x.select_rows(batch);
            let y = onehot.select_rows(batch);
            let g = nn::grad(&w, &x, &y)?;
            for (wi, gi) in w.values_mut().iter_mut().zip(&g) {
                *wi -= cfg.local_lr * gi;
            }
        }
    }
    if w.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("local model"));
    }
    Ok(w0.values().iter().zip(w.values()).map(|(a, b)| a - b).collect())
}

/// Weighted mean `Σ w_c u_c / Σ w_c`, accumulated in the given order.
pub fn aggregate(updates: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Shape("nothing to aggregate".into()))?;
    if weights.len() != updates.len() {
        return Err(Error::Shape("one weight per update required".into()));
    }
    if updates.iter().any(|u| u.len() != first.len()) {
        return Err(Error::Shape("updates differ in length".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(Error::Shape("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Shape("weights sum to zero".into()));
    }
    let mut out = vec![0.0; first.len()];
    for (u, &w) in updates.iter().zip(weights) {
        let k = w / total;
        for (o, v) in out.iter_mut().zip(u) {
            *o += k * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchDescriptor;
    use crate::rng::Streams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn client(n: usize, seed: u64) -> ClientShard {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClientShard {
            client_id: 0,
            x: Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap(),
            labels: (0..n).map(|i| i % 3).collect(),
            rng_seed: Streams::new(seed).client_seed(0),
        }
    }

    fn model(seed: u64) -> ModelParams {
        ModelParams::init(ArchDescriptor::mlp(&[2, 8, 3]).unwrap(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_epochs_is_zero_update() {
        let cfg = FedConfig {
            local_epochs: 0,
            ..FedConfig::default()
        };
        let theta = local_update(&client(5, 1), &model(1), &cfg, 0).unwrap();
        assert!(theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_point_single_step() {
        let c = client(1, 2);
        let w0 = model(2);
        let cfg = FedConfig {
            local_epochs: 1,
            local_batch_size: 1,
            local_lr: 0.02,
            ..FedConfig::default()
        };
        let theta = local_update(&c, &w0, &cfg, 0).unwrap();
        let g = nn::grad(&w0, &c.x, &Matrix::one_hot(&c.labels, 3)).unwrap();
        for (t, gi) in theta.iter().zip(&g) {
            assert!((t - 0.02 * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn replay_is_bit_identical_and_rounds_differ() {
        let c = client(23, 3);
        let w0 = model(3);
        let cfg = FedConfig::default();
        let a = local_update(&c, &w0, &cfg, 4).unwrap();
        let b = local_update(&c, &w0, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, local_update(&c, &w0, &cfg, 5).unwrap());
    }

    #[test]
    fn aggregate_cases() {
        let u = vec![1.0, 0.0];
        let v = vec![0.0, 1.0];
        assert_eq!(aggregate(std::slice::from_ref(&u), &[3.0]).unwrap(), u);
        assert_eq!(aggregate(&[u.clone(), v.clone()], &[1.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        let a = vec![2.0, -4.0, 1.0];
        let b = vec![6.0, 8.0, -3.0];
        let got = aggregate(&[a.clone(), b.clone()], &[1.0, 3.0]).unwrap();
        for i in 0..3 {
            assert!((got[i] - (0.25 * a[i] + 0.75 * b[i])).abs() < 1e-15);
        }
        assert!(aggregate(&[], &[]).is_err());
        assert!(aggregate(std::slice::from_ref(&u), &[0.0]).is_err());
        assert!(aggregate(&[u, vec![1.0]], &[1.0, 1.0]).is_err());
    }
}
