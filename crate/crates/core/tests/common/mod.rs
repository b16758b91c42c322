#![allow(dead_code)]

use onda::batchnorm::{bn_backward, bn_forward_train, BnState};
use onda::network::{backward, forward, NetworkSpec, ParamGrads, Params, Regime};
use onda::rng::{gaussian_sample, RngStream};
use onda::tensor::{softmax_cross_entropy, Tensor};

const H: f64 = 1e-3;

fn loss(params: &Params, x: &Tensor, labels: &[usize]) -> f64 {
    let pass = forward(params, x, Regime::Train).unwrap();
    softmax_cross_entropy(&pass.logits, labels).unwrap().0
}

/// Mutable view of every trainable group, in the same order as `grad_groups`.
fn param_groups(p: &mut Params) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for d in p.dense.iter_mut() {
        out.push(d.weight.data_mut());
        out.push(&mut d.bias);
    }
    for bn in p.bn.iter_mut() {
        out.push(&mut bn.gamma);
        out.push(&mut bn.beta);
    }
    out
}

fn grad_groups(g: &ParamGrads) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.biases) {
        out.push(w.data().to_vec());
        out.push(b.clone());
    }
    for (gm, bt) in g.gammas.iter().zip(&g.betas) {
        out.push(gm.clone());
        out.push(bt.clone());
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error of one group; `None` when both gradients vanish.
pub fn rel_error(a: &[f64], n: &[f64]) -> Option<f64> {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a) + norm(n);
    (scale > 1e-9).then(|| norm(&diff) / scale)
}

/// Worst norm-wise relative error between backprop and central differences
/// over all parameter groups of a 5→7→3 network on a batch of 4.
pub fn network_gradient_error(seed: u64) -> f64 {
    let spec = NetworkSpec {
        input_dim: 5,
        hidden_dims: vec![7],
        num_classes: 3,
    };
    let mut rng = RngStream::new(seed, 0);
    let mut params = Params::init(&spec, &mut rng).unwrap();
    for bn in params.bn.iter_mut() {
        for (g, b) in bn.gamma.iter_mut().zip(bn.beta.iter_mut()) {
            *g = 1.0 + 0.5 * rng.gaussian();
            *b = 0.3 * rng.gaussian();
        }
    }
    let labels: Vec<usize> = (0..4).map(|i| (seed as usize + i) % 3).collect();
    // Central differences are meaningless across the ReLU kink, so batches
    // with a pre-activation within 5h of zero are redrawn.
    let (x, pass) = loop {
        let x = gaussian_sample(&mut rng, &[4, 5]);
        let pass = forward(&params, &x, Regime::Train).unwrap();
        let caches = pass.caches.as_ref().unwrap();
        if caches
            .hidden
            .iter()
            .all(|l| l.pre_relu.data().iter().all(|v| v.abs() >= 5.0 * H))
        {
            break (x, pass);
        }
    };
    let (_, grad_logits) = softmax_cross_entropy(&pass.logits, &labels).unwrap();
    let analytic = grad_groups(&backward(&params, &pass.caches.unwrap(), &grad_logits).unwrap());

    let sizes: Vec<usize> = param_groups(&mut params).iter().map(|g| g.len()).collect();
    let mut worst: f64 = 0.0;
    for (gi, &len) in sizes.iter().enumerate() {
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = param_groups(&mut params)[gi][k];
            param_groups(&mut params)[gi][k] = orig + H;
            let up = loss(&params, &x, &labels);
            param_groups(&mut params)[gi][k] = orig - H;
            let down = loss(&params, &x, &labels);
            param_groups(&mut params)[gi][k] = orig;
            *slot = (up - down) / (2.0 * H);
        }
        match rel_error(&analytic[gi], &numeric) {
            Some(e) => worst = worst.max(e),
            // The bias feeding a BN layer has no effect on the loss.
            None => assert!(norm(&analytic[gi]) < 1e-9 && norm(&numeric) < 1e-9),
        }
    }
    worst
}

/// Worst relative error of the BN layer's input and γ gradients on a batch of 4.
pub fn bn_gradient_error(seed: u64) -> f64 {
    {
        let mut rng = RngStream::new(seed, 1);
        let x = gaussian_sample(&mut rng, &[4, 3]);
        let mut state = BnState::new(3);
        for g in state.gamma.iter_mut() {
            *g = 1.0 + 0.5 * rng.gaussian();
        }
        // Loss = Σ w ⊙ y with fixed random weights, so dL/dy = w.
        let w = gaussian_sample(&mut rng, &[4, 3]);
        let objective = |x: &Tensor, s: &BnState| -> f64 {
            let (y, _) = bn_forward_train(x, s).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = bn_forward_train(&x, &state).unwrap();
        let grads = bn_backward(&cache, &state, &w).unwrap();

        let mut numeric = vec![0.0; x.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut xp = x.clone();
            xp.data_mut()[k] += H;
            let mut xm = x.clone();
            xm.data_mut()[k] -= H;
            *slot = (objective(&xp, &state) - objective(&xm, &state)) / (2.0 * H);
        }
        let ex = rel_error(grads.x.data(), &numeric).unwrap();

        let mut numeric_gamma = vec![0.0; 3];
        for (c, slot) in numeric_gamma.iter_mut().enumerate() {
            let mut sp = state.clone();
            sp.gamma[c] += H;
            let mut sm = state.clone();
            sm.gamma[c] -= H;
            *slot = (objective(&x, &sp) - objective(&x, &sm)) / (2.0 * H);
        }
        let eg = rel_error(&grads.gamma, &numeric_gamma).unwrap();
        ex.max(eg)
    }
}

/// Layer-1 pre-BN activations computed without the library's matmul.
pub fn first_layer(params: &Params, x: &Tensor) -> Vec<Vec<f64>> {
    let w = &params.dense[0].weight;
    let b = &params.dense[0].bias;
    (0..x.rows())
        .map(|i| {
            (0..w.cols())
                .map(|j| {
                    b[j] + (0..w.rows())
                        .map(|k| x.get(i, k) * w.get(k, j))
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Closed form of the moving average after K updates:
/// `(1−α)^K s₀ + Σ_k α(1−α)^{K−k} ŝ_k`.
pub fn unrolled(initial: &[f64], partials: &[Vec<f64>], alpha: f64) -> Vec<f64> {
    let k_total = partials.len() as i32;
    (0..initial.len())
        .map(|c| {
            let mut v = (1.0 - alpha).powi(k_total) * initial[c];
            for (k, p) in partials.iter().enumerate() {
                v += alpha * (1.0 - alpha).powi(k_total - 1 - k as i32) * p[c];
            }
            v
        })
        .collect()
}
