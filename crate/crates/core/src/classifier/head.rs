//! The trainable classification head: FC(D -> 128) + ReLU + dropout +
//! FC(128 -> C), trained with Adam and softmax cross-entropy. All head math
//! is f64; gradients are closed-form and checked against finite differences
//! in the test suite.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::{Tensor, TensorData};
use super::{softmax_in_place, ClassifierError};

pub const HIDDEN_UNITS: usize = 128;

#[derive(Debug, Clone)]
pub struct Head {
    /// (D, 128)
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// (128, C)
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub dropout: f64,
}

impl Head {
    pub fn new(feature_dim: usize, class_count: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = move || {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let he1 = (2.0 / feature_dim as f64).sqrt();
        let he2 = (2.0 / HIDDEN_UNITS as f64).sqrt();
        let w1 = Array2::from_shape_fn((feature_dim, HIDDEN_UNITS), |_| normal() * he1);
        let w2 = Array2::from_shape_fn((HIDDEN_UNITS, class_count), |_| normal() * he2);
        Self {
            w1,
            b1: Array1::zeros(HIDDEN_UNITS),
            w2,
            b2: Array1::zeros(class_count),
            dropout,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.w2.ncols()
    }

    /// Deterministic inference: dropout disabled.
    pub fn forward_eval(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut hidden = features.dot(&self.w1) + &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut logits = hidden.dot(&self.w2) + &self.b2;
        for mut row in logits.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        logits
    }

    /// Training forward with inverted dropout; returns probabilities plus the
    /// cached activations needed for a backward pass.
    pub fn forward_train(
        &self,
        features: &Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<f64>, TrainCache) {
        let mut hidden = features.dot(&self.w1) + &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let keep = 1.0 - self.dropout;
        let mask = Array2::from_shape_fn(hidden.dim(), |_| {
            if keep >= 1.0 || rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let dropped = &hidden * &mask;
        let mut probs = dropped.dot(&self.w2) + &self.b2;
        for mut row in probs.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        (
            probs,
            TrainCache {
                hidden,
                mask,
                dropped,
            },
        )
    }

    /// Closed-form gradients of mean cross-entropy over the batch.
    pub fn backward(
        &self,
        features: &Array2<f64>,
        probs: &Array2<f64>,
        targets: &[usize],
        cache: &TrainCache,
    ) -> HeadGrads {
        let batch = features.nrows() as f64;
        let mut d_logits = probs.clone();
        for (i, &t) in targets.iter().enumerate() {
            d_logits[[i, t]] -= 1.0;
        }
        d_logits.mapv_inplace(|v| v / batch);

        let d_w2 = cache.dropped.t().dot(&d_logits);
        let d_b2 = d_logits.sum_axis(Axis(0));
        let mut d_hidden = d_logits.dot(&self.w2.t());
        d_hidden *= &cache.mask;
        // ReLU gate
        ndarray::Zip::from(&mut d_hidden)
            .and(&cache.hidden)
            .for_each(|g, &h| {
                if h <= 0.0 {
                    *g = 0.0;
                }
            });
        let d_w1 = features.t().dot(&d_hidden);
        let d_b1 = d_hidden.sum_axis(Axis(0));
        HeadGrads {
            d_w1,
            d_b1,
            d_w2,
            d_b2,
        }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        vec![
            tensor2("head.fc1.weight", &self.w1),
            tensor1("head.fc1.bias", &self.b1),
            tensor2("head.fc2.weight", &self.w2),
            tensor1("head.fc2.bias", &self.b2),
        ]
    }

    pub fn from_tensors(
        get: impl Fn(&str) -> Option<Tensor>,
        dropout: f64,
    ) -> Result<Self, ClassifierError> {
        let fetch2 = |name: &str| -> Result<Array2<f64>, ClassifierError> {
            let t = get(name).ok_or_else(|| missing(name))?;
            Array2::from_shape_vec(
                (t.shape[0], t.shape[1]),
                t.data.as_f64().ok_or_else(|| missing(name))?.to_vec(),
            )
            .map_err(|e| ClassifierError::WeightsParse {
                path: name.into(),
                reason: e.to_string(),
            })
        };
        let fetch1 = |name: &str| -> Result<Array1<f64>, ClassifierError> {
            let t = get(name).ok_or_else(|| missing(name))?;
            Ok(Array1::from_vec(
                t.data.as_f64().ok_or_else(|| missing(name))?.to_vec(),
            ))
        };
        Ok(Self {
            w1: fetch2("head.fc1.weight")?,
            b1: fetch1("head.fc1.bias")?,
            w2: fetch2("head.fc2.weight")?,
            b2: fetch1("head.fc2.bias")?,
            dropout,
        })
    }
}

fn missing(name: &str) -> ClassifierError {
    ClassifierError::WeightsParse {
        path: name.into(),
        reason: "tensor missing from checkpoint".to_string(),
    }
}

fn tensor2(name: &str, a: &Array2<f64>) -> Tensor {
    Tensor {
        name: name.to_string(),
        shape: vec![a.nrows(), a.ncols()],
        data: TensorData::F64(a.iter().copied().collect()),
    }
}

fn tensor1(name: &str, a: &Array1<f64>) -> Tensor {
    Tensor {
        name: name.to_string(),
        shape: vec![a.len()],
        data: TensorData::F64(a.to_vec()),
    }
}

pub struct TrainCache {
    hidden: Array2<f64>,
    mask: Array2<f64>,
    dropped: Array2<f64>,
}

pub struct HeadGrads {
    pub d_w1: Array2<f64>,
    pub d_b1: Array1<f64>,
    pub d_w2: Array2<f64>,
    pub d_b2: Array1<f64>,
}

/// Adam with L2 weight decay folded into the gradient.
pub struct AdamState {
    lr: f64,
    weight_decay: f64,
    t: i32,
    m_w1: Array2<f64>,
    v_w1: Array2<f64>,
    m_b1: Array1<f64>,
    v_b1: Array1<f64>,
    m_w2: Array2<f64>,
    v_w2: Array2<f64>,
    m_b2: Array1<f64>,
    v_b2: Array1<f64>,
}

impl AdamState {
    pub fn new(head: &Head, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            t: 0,
            m_w1: Array2::zeros(head.w1.dim()),
            v_w1: Array2::zeros(head.w1.dim()),
            m_b1: Array1::zeros(head.b1.len()),
            v_b1: Array1::zeros(head.b1.len()),
            m_w2: Array2::zeros(head.w2.dim()),
            v_w2: Array2::zeros(head.w2.dim()),
            m_b2: Array1::zeros(head.b2.len()),
            v_b2: Array1::zeros(head.b2.len()),
        }
    }

    pub fn step(&mut self, head: &mut Head, grads: &HeadGrads) {
        self.t += 1;
        let bc1 = 1.0 - 0.9f64.powi(self.t);
        let bc2 = 1.0 - 0.999f64.powi(self.t);
        let lr = self.lr;
        let wd = self.weight_decay;

        #[allow(clippy::too_many_arguments)]
        fn update2(
            w: &mut Array2<f64>,
            g: &Array2<f64>,
            m: &mut Array2<f64>,
            v: &mut Array2<f64>,
            lr: f64,
            wd: f64,
            bc1: f64,
            bc2: f64,
        ) {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            ndarray::Zip::from(w)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g + wd * *w;
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + EPS);
                });
        }
        #[allow(clippy::too_many_arguments)]
        fn update1(
            w: &mut Array1<f64>,
            g: &Array1<f64>,
            m: &mut Array1<f64>,
            v: &mut Array1<f64>,
            lr: f64,
            wd: f64,
            bc1: f64,
            bc2: f64,
        ) {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            ndarray::Zip::from(w)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g + wd * *w;
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + EPS);
                });
        }

        update2(
            &mut head.w1,
            &grads.d_w1,
            &mut self.m_w1,
            &mut self.v_w1,
            lr,
            wd,
            bc1,
            bc2,
        );
        update1(
            &mut head.b1,
            &grads.d_b1,
            &mut self.m_b1,
            &mut self.v_b1,
            lr,
            wd,
            bc1,
            bc2,
        );
        update2(
            &mut head.w2,
            &grads.d_w2,
            &mut self.m_w2,
            &mut self.v_w2,
            lr,
            wd,
            bc1,
            bc2,
        );
        update1(
            &mut head.b2,
            &grads.d_b2,
            &mut self.m_b2,
            &mut self.v_b2,
            lr,
            wd,
            bc1,
            bc2,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::cross_entropy;

    #[test]
    fn eval_forward_rows_are_distributions() {
        let head = Head::new(32, 3, 0.5, 1);
        let x = Array2::from_shape_fn((5, 32), |(i, j)| ((i * 7 + j) % 13) as f64 / 13.0);
        let p = head.forward_eval(&x);
        for row in p.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        // dropout off so the loss is deterministic
        let mut head = Head::new(6, 3, 0.0, 3);
        let x = Array2::from_shape_fn((4, 6), |(i, j)| ((i + 2 * j) % 5) as f64 / 5.0 - 0.4);
        let targets = [0usize, 2, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let loss_of = |h: &Head| -> f64 {
            let p = h.forward_eval(&x);
            targets
                .iter()
                .enumerate()
                .map(|(i, &t)| cross_entropy(t, p.row(i).as_slice().unwrap()).unwrap())
                .sum::<f64>()
                / targets.len() as f64
        };

        let (probs, cache) = head.forward_train(&x, &mut rng);
        let grads = head.backward(&x, &probs, &targets, &cache);

        let eps = 1e-6;
        // spot-check a handful of w1 and w2 entries
        for &(r, c) in &[(0usize, 0usize), (2, 1), (5, 2)] {
            let orig = head.w1[[r, c]];
            head.w1[[r, c]] = orig + eps;
            let up = loss_of(&head);
            head.w1[[r, c]] = orig - eps;
            let down = loss_of(&head);
            head.w1[[r, c]] = orig;
            let fd = (up - down) / (2.0 * eps);
            let analytic = grads.d_w1[[r, c]];
            assert!(
                (fd - analytic).abs() < 1e-6 + 1e-4 * fd.abs().max(analytic.abs()),
                "w1[{r},{c}]: fd {fd} vs analytic {analytic}"
            );
        }
        for &(r, c) in &[(0usize, 0usize), (10, 1), (127, 2)] {
            let orig = head.w2[[r, c]];
            head.w2[[r, c]] = orig + eps;
            let up = loss_of(&head);
            head.w2[[r, c]] = orig - eps;
            let down = loss_of(&head);
            head.w2[[r, c]] = orig;
            let fd = (up - down) / (2.0 * eps);
            let analytic = grads.d_w2[[r, c]];
            assert!(
                (fd - analytic).abs() < 1e-6 + 1e-4 * fd.abs().max(analytic.abs()),
                "w2[{r},{c}]: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn adam_reduces_loss_on_separable_toy() {
        let mut head = Head::new(4, 2, 0.0, 9);
        let x = Array2::from_shape_fn((8, 4), |(i, j)| {
            if i % 2 == 0 {
                (j as f64) / 4.0
            } else {
                -(j as f64) / 4.0
            }
        });
        let targets: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let mut adam = AdamState::new(&head, 1e-2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = |p: &Array2<f64>| -> f64 {
            targets
                .iter()
                .enumerate()
                .map(|(i, &t)| -p[[i, t]].max(1e-12).ln())
                .sum::<f64>()
                / 8.0
        };
        let initial = loss(&head.forward_eval(&x));
        for _ in 0..200 {
            let (p, cache) = head.forward_train(&x, &mut rng);
            let grads = head.backward(&x, &p, &targets, &cache);
            adam.step(&mut head, &grads);
        }
        let fin = loss(&head.forward_eval(&x));
        assert!(fin < initial * 0.1, "loss {initial} -> {fin}");
    }
}
