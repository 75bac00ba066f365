//! Quick invariant checks run by `snapuq selftest`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::calibrate::pav_fit;
use crate::error::Result;
use crate::heads::{
    head_gradients, surprisal_diag, surprisal_huber, surprisal_student_t, Density, HeadConfig,
    HeadOutput, TapHead, WoodburyCache,
};
use crate::nnet::Tensor;
use crate::rng::{seeded, SnapRng};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// Worst deviation observed.
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> Check {
    Check {
        name,
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

fn random_head(density: Density, rng: &mut SnapRng) -> TapHead {
    let (dp, r, d) = (
        rng.random_range(2..5),
        rng.random_range(1..4),
        rng.random_range(2..5),
    );
    let cfg = HeadConfig {
        density,
        xi_clip: None,
        ..HeadConfig::default()
    };
    let mut h = TapHead::init(2, dp, r, d, false, cfg, rng).expect("valid dims");
    for t in h.params_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
    h
}

fn head_loss(h: &TapHead, a_prev: &[f64], a: &[f64]) -> Result<f64> {
    let out = h.forward(a_prev)?;
    Ok(match h.config.density {
        Density::StudentT { nu } => surprisal_student_t(a, &out, nu)?,
        Density::Huber { delta } => surprisal_huber(a, &out, delta)?,
        _ => surprisal_diag(a, &out)?.nll_core,
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Analytic head gradients against central differences.
pub fn gradient_check(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let densities = [
        Density::DiagGauss,
        Density::StudentT { nu: 4.0 },
        Density::Huber { delta: 1.0 },
    ];
    let h_step = 1e-6;
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let mut head = random_head(densities[c % densities.len()], &mut rng);
        let a_prev: Vec<f64> = (0..head.in_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let a: Vec<f64> = (0..head.out_dim())
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        let g = head_gradients(&head, &a_prev, &a)?;
        for (pi, grad) in g.params.iter().enumerate() {
            for j in 0..grad.len() {
                let orig = head.params()[pi].data()[j];
                head.params_mut()[pi].data_mut()[j] = orig + h_step;
                let up = head_loss(&head, &a_prev, &a)?;
                head.params_mut()[pi].data_mut()[j] = orig - h_step;
                let down = head_loss(&head, &a_prev, &a)?;
                head.params_mut()[pi].data_mut()[j] = orig;
                worst = worst.max(rel(grad.data()[j], (up - down) / (2.0 * h_step)));
            }
        }
        for j in 0..a.len() {
            let mut ap = a.clone();
            ap[j] += h_step;
            let up = head_loss(&head, &a_prev, &ap)?;
            ap[j] -= 2.0 * h_step;
            let down = head_loss(&head, &a_prev, &ap)?;
            worst = worst.max(rel(g.d_a[j], (up - down) / (2.0 * h_step)));
        }
    }
    Ok(worst)
}

fn output(mu: Vec<f64>, s: Vec<f64>) -> HeadOutput {
    HeadOutput {
        z: Vec::new(),
        xi: s.clone(),
        s_open: vec![true; s.len()],
        mu,
        s,
        woodbury: None,
    }
}

/// `2·nll_core − e − Σs` and the gap to a dense-Gaussian NLL.
pub fn likelihood_identity(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..9);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = surprisal_diag(&a, &output(mu.clone(), s.clone()))?;
        worst = worst.max((2.0 * r.nll_core - r.e - s.iter().sum::<f64>()).abs());
        let dense: f64 = (0..d)
            .map(|i| {
                let var = s[i].exp();
                0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (a[i] - mu[i]).powi(2) / var)
            })
            .sum();
        let full = r.nll_core + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        worst = worst.max((full - dense).abs());
    }
    Ok(worst)
}

/// `e` under `a ↦ s⊙a + t`, `μ ↦ s⊙μ + t`, `σ ↦ |s|⊙σ`.
pub fn affine_invariance(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..9);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sd: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
        let sc: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
        let t: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e0 = crate::heads::standardized_error(&a, &mu, &sd);
        let a2: Vec<f64> = (0..d).map(|i| sc[i] * a[i] + t[i]).collect();
        let mu2: Vec<f64> = (0..d).map(|i| sc[i] * mu[i] + t[i]).collect();
        let sd2: Vec<f64> = (0..d).map(|i| sc[i] * sd[i]).collect();
        let e1 = crate::heads::standardized_error(&a2, &mu2, &sd2);
        worst = worst.max((e0 - e1).abs() / e0.max(1.0));
    }
    Ok(worst)
}

/// Woodbury quadratic form and log-determinant against Gaussian elimination.
pub fn woodbury_check(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(2..9);
        let k = rng.random_range(1..4.min(d));
        let b = Tensor::new(
            vec![d, k],
            (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let s: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = WoodburyCache::new(&b, &s)?;
        let mut dense = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                dense[i * d + j] = (0..k)
                    .map(|c| b.data()[i * k + c] * b.data()[j * k + c])
                    .sum::<f64>();
            }
            dense[i * d + i] += s[i].exp();
        }
        let (x, logdet) = solve(&dense, &u, d);
        let quad: f64 = u.iter().zip(&x).map(|(a, b)| a * b).sum();
        let w: Vec<f64> = u.iter().zip(&s).map(|(ui, si)| ui * (-si).exp()).collect();
        let diag_quad: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        let bw: Vec<f64> = (0..k)
            .map(|c| (0..d).map(|r| b.data()[r * k + c] * w[r]).sum())
            .collect();
        let delta = cache.inv_quad(&bw);
        let wq = diag_quad - delta;
        let wl = s.iter().sum::<f64>() + cache.logdet();
        worst = worst.max(rel(wq, quad)).max(rel(wl, logdet));
        if delta < 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Solves `A x = b` by partial-pivot elimination; returns `x` and `log|det A|`.
fn solve(a: &[f64], b: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs()))
            .expect("rows");
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

/// PAV against exhaustive search over block partitions, binary targets.
pub fn pav_check(max_len: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 1..=max_len {
        let psi: Vec<f64> = (0..n).map(|i| i as f64).collect();
        for mask in 0u32..(1 << n) {
            let y: Vec<f64> = (0..n).map(|i| f64::from((mask >> i) & 1)).collect();
            let fit = pav_fit(&psi, &y)?;
            let sse = |f: &[f64]| f.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            worst = worst.max((sse(&fit) - best_partition(&y)).abs());
            if fit.windows(2).any(|w| w[1] < w[0] - 1e-12) {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(worst)
}

/// Minimum SSE over monotone piecewise-constant fits built from contiguous
/// blocks with their means.
fn best_partition(y: &[f64]) -> f64 {
    let n = y.len();
    let mut best = f64::INFINITY;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut means = Vec::new();
        let mut sse = 0.0;
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || (cuts >> i) & 1 == 1 {
                let block = &y[start..=i];
                let m = block.iter().sum::<f64>() / block.len() as f64;
                sse += block.iter().map(|v| (v - m).powi(2)).sum::<f64>();
                means.push(m);
                start = i + 1;
            }
        }
        if means.windows(2).all(|w| w[0] <= w[1]) {
            best = best.min(sse);
        }
    }
    best
}

/// Mean and variance of `ē` for samples drawn from the head's own density.
pub fn chi_square_moments(d: usize, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = seeded(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let out = output(mu.clone(), s.clone());
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let a: Vec<f64> = (0..d)
            .map(|i| mu[i] + (0.5 * s[i]).exp() * std.sample(&mut rng))
            .collect();
        vals.push(surprisal_diag(&a, &out)?.ebar);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, var))
}

/// Runs every check with fixed seeds.
pub fn run_all() -> Result<Vec<Check>> {
    let (mean, var) = chi_square_moments(64, 4000, 7)?;
    Ok(vec![
        check("gradients", gradient_check(60, 1)?, 1e-5),
        check("likelihood_identity", likelihood_identity(500, 2)?, 1e-10),
        check("affine_invariance", affine_invariance(500, 3)?, 1e-9),
        check("woodbury", woodbury_check(300, 4)?, 1e-8),
        check("pav", pav_check(8)?, 1e-10),
        check("chi_square_mean", (mean - 1.0).abs(), 0.05),
        check(
            "chi_square_var_outside_band",
            (1.0 - var * 64.0).max(var * 64.0 - 4.0).max(0.0),
            0.0,
        ),
    ])
}
