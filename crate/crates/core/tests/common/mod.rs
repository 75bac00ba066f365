//! Reference implementations the library is checked against. Everything here
//! is written from the defining formulas, without calling the code under
//! test.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use snapuq::heads::{Density, HeadConfig, TapHead};
use snapuq::nnet::Tensor;
use snapuq::rng::seeded;
use snapuq::train::{Optimizer, TrainConfig};

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Row-major `rows × cols` matrix-vector product.
pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| (0..cols).map(|c| m[r * cols + c] * x[c]).sum())
        .collect()
}

/// `(μ, ξ)` of a head computed from its raw tensors.
pub fn ref_head_mu_xi(h: &TapHead, a_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (r, dp, d) = (h.p.shape()[0], h.p.shape()[1], h.w_mu.shape()[0]);
    let z = matvec(h.p.data(), r, dp, a_prev);
    let mut mu = matvec(h.w_mu.data(), d, r, &z);
    let mut xi = matvec(h.w_xi.data(), d, r, &z);
    for i in 0..d {
        mu[i] += h.b_mu.data()[i];
        xi[i] += h.b_xi.data()[i];
    }
    (mu, xi)
}

/// Per-tap loss of a realized activation given `μ` and the raw log-variance
/// pre-activation `ξ` (no clamp is active for the inputs used here).
pub fn ref_loss_mu_xi(density: Density, eps: f64, a: &[f64], mu: &[f64], xi: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        let var = softplus(xi[i]) + eps * eps;
        let s = var.ln();
        let v = a[i] - mu[i];
        total += match density {
            Density::DiagGauss => 0.5 * (v * v / var + s),
            Density::StudentT { nu } => {
                0.5 * (nu + 1.0) * (1.0 + v * v / (nu * var)).ln() + 0.5 * s
            }
            Density::Huber { delta } => {
                let u = (v / var.sqrt()).abs();
                let rho = if u <= delta {
                    0.5 * u * u
                } else {
                    delta * u - 0.5 * delta * delta
                };
                rho + 0.5 * s
            }
            Density::LowRank { .. } => unreachable!("not a per-channel density"),
        };
    }
    total
}

pub fn ref_head_loss(h: &TapHead, a_prev: &[f64], a: &[f64]) -> f64 {
    let (mu, xi) = ref_head_mu_xi(h, a_prev);
    ref_loss_mu_xi(h.config.density, h.config.eps, a, &mu, &xi)
}

/// Central difference of `f` along coordinate `j` of `x`.
pub fn central_diff(x: &[f64], j: usize, h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[j] += h;
    let up = f(&xp);
    xp[j] -= 2.0 * h;
    let down = f(&xp);
    (up - down) / (2.0 * h)
}

/// Partial-pivot Gaussian elimination: solution of `A x = b` and `log|det A|`.
pub fn dense_solve(a: &[f64], b: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let mut logdet = 0.0;
    for c in 0..n {
        let mut p = c;
        for r in c + 1..n {
            if m[r * n + c].abs() > m[p * n + c].abs() {
                p = r;
            }
        }
        if p != c {
            for j in 0..n {
                m.swap(c * n + j, p * n + j);
            }
            x.swap(c, p);
        }
        let piv = m[c * n + c];
        logdet += piv.abs().ln();
        for r in c + 1..n {
            let f = m[r * n + c] / piv;
            for j in c..n {
                m[r * n + j] -= f * m[c * n + j];
            }
            x[r] -= f * x[c];
        }
    }
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|j| m[c * n + j] * x[j]).sum();
        x[c] = (x[c] - s) / m[c * n + c];
    }
    (x, logdet)
}

/// Gaussian NLL `½(vᵀΣ⁻¹v + log det Σ + d log 2π)` with a dense covariance.
pub fn dense_gauss_nll(a: &[f64], mu: &[f64], cov: &[f64]) -> f64 {
    let d = a.len();
    let v: Vec<f64> = a.iter().zip(mu).map(|(x, m)| x - m).collect();
    let (w, logdet) = dense_solve(cov, &v, d);
    let quad: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
    0.5 * (quad + logdet + d as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Best nondecreasing least-squares fit found by trying every split of the
/// sequence into contiguous blocks, each fitted by its mean.
pub fn isotonic_exhaustive(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best = (f64::INFINITY, Vec::new());
    for cuts in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || (cuts >> i) & 1 == 1 {
                let m = y[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                fit.extend(std::iter::repeat_n(m, i + 1 - start));
                start = i + 1;
            }
        }
        if fit.windows(2).any(|w| w[1] < w[0]) {
            continue;
        }
        let sse: f64 = fit.iter().zip(y).map(|(f, v)| (f - v).powi(2)).sum();
        if sse < best.0 {
            best = (sse, fit);
        }
    }
    best.1
}

/// Average ranks (1-based), ties share their mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let below = v.iter().filter(|&&x| x < v[i]).count();
        let equal = v.iter().filter(|&&x| x == v[i]).count();
        out[i] = below as f64 + (equal as f64 + 1.0) / 2.0;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Risk at target coverage `kappa` by trying every threshold: the accepted
/// set `{u < τ}` with the fewest members that still covers `kappa`.
pub fn risk_at_coverage(u: &[f64], correct: &[bool], kappa: f64) -> (f64, f64) {
    let n = u.len();
    let mut cands: Vec<f64> = u.to_vec();
    cands.push(f64::INFINITY);
    let mut best: Option<(usize, f64)> = None;
    for &tau in &cands {
        let acc = u.iter().filter(|&&v| v < tau).count();
        if (acc as f64) < kappa * n as f64 - 1e-9 {
            continue;
        }
        if best.is_none_or(|(b, _)| acc < b) {
            let errors = (0..n).filter(|&i| u[i] < tau && !correct[i]).count();
            best = Some((acc, errors as f64 / acc as f64));
        }
    }
    let (acc, risk) = best.expect("the full set always qualifies");
    (acc as f64 / n as f64, risk)
}

/// Linear-Gaussian layer dynamics `a = W a_prev + b + ε`, `ε ~ N(0, diag σ²)`,
/// with `a_prev ~ N(0, I)`.
pub struct LinearGaussian {
    pub d_prev: usize,
    pub d: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub sd: Vec<f64>,
}

impl LinearGaussian {
    pub fn new(d_prev: usize, d: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let scale = 1.0 / (d_prev as f64).sqrt();
        Self {
            d_prev,
            d,
            w: (0..d * d_prev)
                .map(|_| rng.random_range(-1.0..1.0) * scale)
                .collect(),
            b: (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
            sd: (0..d).map(|_| rng.random_range(0.2..1.0)).collect(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..self.d_prev)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                let mut a = matvec(&self.w, self.d, self.d_prev, &x);
                for i in 0..self.d {
                    let e: f64 = StandardNormal.sample(rng);
                    a[i] += self.b[i] + self.sd[i] * e;
                }
                (x, a)
            })
            .collect()
    }
}

/// Trains a diagonal head on `data` with minibatch Adam on the per-layer
/// negative log-likelihood; returns the head and the mean training loss of
/// every epoch.
pub fn train_head(
    data: &[(Vec<f64>, Vec<f64>)],
    rank: usize,
    epochs: usize,
    seed: u64,
) -> (TapHead, Vec<f64>) {
    let (dp, d) = (data[0].0.len(), data[0].1.len());
    let mut rng = seeded(seed);
    let cfg = HeadConfig::default();
    let mut head = TapHead::init(2, dp, rank, d, false, cfg, &mut rng).expect("valid head");
    let tc = TrainConfig {
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let mut opt = Optimizer::new(&tc, &head.params());
    let batch = 32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grads: Vec<Tensor> = head
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect();
            for &i in chunk {
                let g = snapuq::heads::head_gradients(&head, &data[i].0, &data[i].1)
                    .expect("gradients");
                epoch_loss += g.loss;
                for (acc, gi) in grads.iter_mut().zip(&g.params) {
                    acc.data_mut()
                        .iter_mut()
                        .zip(gi.data())
                        .for_each(|(a, b)| *a += b / chunk.len() as f64);
                }
            }
            opt.step(&mut head.params_mut(), &grads, tc.lr);
        }
        losses.push(epoch_loss / data.len() as f64);
    }
    (head, losses)
}
