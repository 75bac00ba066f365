//! Per-tap projectors and predictor heads, the densities they define over
//! the next activation, and the exact gradients of the resulting losses.

mod grad;
mod head;
mod surprisal;
mod woodbury;

pub use grad::{density_grad, head_backward, head_gradients, xi_chain, DensityGrad, HeadGrads};
pub use head::{Density, HeadConfig, HeadOutput, TapHead};
pub use surprisal::{
    gaussian_nll, huber_rho, standardized_error, surprisal_diag, surprisal_huber,
    surprisal_lowrank, surprisal_student_t, DiagSurprisal, LowRankSurprisal,
};
pub use woodbury::{cholesky, forward_substitute, WoodburyCache};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Tensor;
    use crate::rng::seeded;
    use rand::Rng;

    fn head_with(d_prev: usize, r: usize, d: usize, density: Density, seed: u64) -> TapHead {
        let cfg = HeadConfig {
            density,
            ..HeadConfig::default()
        };
        let mut rng = seeded(seed);
        let mut h = TapHead::init(2, d_prev, r, d, false, cfg, &mut rng).unwrap();
        for t in h.params_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        h
    }

    fn output(mu: Vec<f64>, s: Vec<f64>) -> HeadOutput {
        let n = mu.len();
        HeadOutput {
            z: vec![],
            mu,
            xi: vec![0.0; n],
            s,
            s_open: vec![true; n],
            woodbury: None,
        }
    }

    #[test]
    fn projection_examples() {
        let mut h = head_with(3, 3, 2, Density::DiagGauss, 1);
        h.p = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(h.project(&[0.5, -2.0, 3.0]).unwrap(), vec![0.5, -2.0, 3.0]);
        h.p.fill(0.0);
        assert_eq!(h.project(&[0.5, -2.0, 3.0]).unwrap(), vec![0.0; 3]);
        assert!(h.project(&[1.0]).is_err());

        let h = head_with(5, 3, 2, Density::DiagGauss, 2);
        let a = [0.3, -0.1, 0.7, 1.2, -0.4];
        let z = h.project(&a).unwrap();
        for i in 0..3 {
            let mut want = 0.0;
            for j in 0..5 {
                want += h.p.data()[i * 5 + j] * a[j];
            }
            assert!((z[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn head_forward_floor_and_closed_forms() {
        let mut h = head_with(2, 2, 3, Density::DiagGauss, 3);
        h.w_xi.fill(0.0);
        h.b_xi.fill(0.0);
        // The default clamp would lift ln 2 + 1e-8 only if it fell outside
        // [ln 1e-4, ln 1e2], which it does not.
        let out = h.head_forward(&[0.4, -1.0]).unwrap();
        for v in out.variances() {
            assert!((v - (std::f64::consts::LN_2 + 1e-8)).abs() < 1e-14);
        }

        // Floor: with ξ = −40 the variance collapses to ε². Widen the clamp
        // so the floor itself is observable.
        h.config.log_var_min = -30.0;
        h.b_xi.fill(-40.0);
        let out = h.head_forward(&[0.0, 0.0]).unwrap();
        for v in out.variances() {
            assert!(((v - 1e-8) / 1e-8).abs() < 1e-8);
        }
        // Default clamp keeps exp(s) ≥ ε² regardless.
        h.config = HeadConfig::default();
        let out = h.head_forward(&[0.0, 0.0]).unwrap();
        assert!(out.s.iter().all(|s| (*s - 1e-4f64.ln()).abs() < 1e-12));
        assert!(out.s_open.iter().all(|o| !o));
    }

    #[test]
    fn head_forward_matches_direct_recomputation() {
        let h = head_with(4, 3, 5, Density::DiagGauss, 4);
        let z = [0.2, -0.7, 1.1];
        let out = h.head_forward(&z).unwrap();
        for i in 0..5 {
            let mut mu = h.b_mu.data()[i];
            let mut xi = h.b_xi.data()[i];
            for j in 0..3 {
                mu += h.w_mu.data()[i * 3 + j] * z[j];
                xi += h.w_xi.data()[i * 3 + j] * z[j];
            }
            let var = (1.0 + xi.exp()).ln() + 1e-8;
            assert!((out.mu[i] - mu).abs() < 1e-12);
            assert!((out.s[i].exp() - var).abs() < 1e-12);
        }
    }

    #[test]
    fn diag_surprisal_examples() {
        let out = output(vec![1.0, 2.0, 3.0], vec![0.1, -0.2, 0.3]);
        let r = surprisal_diag(&[1.0, 2.0, 3.0], &out).unwrap();
        assert_eq!(r.e, 0.0);
        assert!((r.nll_core - 0.5 * 0.2).abs() < 1e-15);

        let out = output(vec![0.0; 4], vec![0.0; 4]);
        let r = surprisal_diag(&[1.0; 4], &out).unwrap();
        assert_eq!((r.e, r.ebar, r.nll_core), (4.0, 1.0, 2.0));

        let bad = surprisal_diag(&[f64::NAN; 4], &out);
        assert!(matches!(bad, Err(crate::SnapError::Numeric(_))));
    }

    #[test]
    fn student_t_examples() {
        let out = output(vec![0.5, -0.5], vec![0.4, 1.0]);
        let v = surprisal_student_t(&[0.5, -0.5], &out, 4.0).unwrap();
        assert!((v - 0.7).abs() < 1e-15);
        // d=1, residual = σ, ν = 1 → log 2 + s/2.
        let s = 0.6f64;
        let out = output(vec![0.0], vec![s]);
        let v = surprisal_student_t(&[(0.5 * s).exp()], &out, 1.0).unwrap();
        assert!((v - (std::f64::consts::LN_2 + 0.5 * s)).abs() < 1e-14);
        assert!(surprisal_student_t(&[0.0], &out, 0.0).is_err());
    }

    #[test]
    fn student_t_approaches_gaussian() {
        let mut rng = seeded(9);
        let d = 12;
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..d)
            .map(|i| mu[i] + rng.random_range(-2.0..2.0))
            .collect();
        let out = output(mu, s);
        let t = surprisal_student_t(&a, &out, 1e6).unwrap();
        let g = surprisal_diag(&a, &out).unwrap().nll_core;
        assert!((t - g).abs() <= 1e-3, "{t} vs {g}");
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber_rho(0.5, 1.0), 0.125);
        assert_eq!(huber_rho(3.0, 1.0), 2.5);
        assert_eq!(huber_rho(-3.0, 1.0), 2.5);
        let out = output(vec![0.0, 0.0, 0.0], vec![0.0, 0.2, -0.3]);
        let a = [0.3, -0.5, 0.2];
        let h = surprisal_huber(&a, &out, 1.0).unwrap();
        let g = surprisal_diag(&a, &out).unwrap().nll_core;
        assert!((h - g).abs() < 1e-15);
    }

    /// Dense Gaussian elimination: inverse and log|det| for small matrices.
    fn dense_inverse_logdet(a: &[f64], n: usize) -> (Vec<f64>, f64) {
        let mut m = a.to_vec();
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        let mut logdet = 0.0;
        for c in 0..n {
            let piv = (c..n)
                .max_by(|&x, &y| m[x * n + c].abs().total_cmp(&m[y * n + c].abs()))
                .unwrap();
            if piv != c {
                for j in 0..n {
                    m.swap(c * n + j, piv * n + j);
                    inv.swap(c * n + j, piv * n + j);
                }
            }
            let p = m[c * n + c];
            logdet += p.abs().ln();
            for j in 0..n {
                m[c * n + j] /= p;
                inv[c * n + j] /= p;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r * n + c];
                    for j in 0..n {
                        m[r * n + j] -= f * m[c * n + j];
                        inv[r * n + j] -= f * inv[c * n + j];
                    }
                }
            }
        }
        (inv, logdet)
    }

    #[test]
    fn lowrank_matches_dense_oracle_and_degenerates() {
        let mut rng = seeded(11);
        let d = 4;
        for k in [1usize, 2, 3] {
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b = Tensor::new(
                vec![d, k],
                (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let out = output(mu.clone(), s.clone());
            let lr = surprisal_lowrank(&a, &out, &b).unwrap();
            let mut sigma = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    sigma[i * d + j] = (0..k)
                        .map(|p| b.data()[i * k + p] * b.data()[j * k + p])
                        .sum();
                }
                sigma[i * d + i] += s[i].exp();
            }
            let (inv, logdet) = dense_inverse_logdet(&sigma, d);
            let v: Vec<f64> = a.iter().zip(&mu).map(|(x, m)| x - m).collect();
            let quad: f64 = (0..d)
                .map(|i| (0..d).map(|j| v[i] * inv[i * d + j] * v[j]).sum::<f64>())
                .sum();
            assert!((lr.quad - quad).abs() < 1e-8);
            assert!((lr.logdet - logdet).abs() < 1e-8);
            assert!(lr.delta >= 0.0);
            assert!(lr.quad <= surprisal_diag(&a, &out).unwrap().e + 1e-12);
        }
        let out = output(vec![0.0; 3], vec![0.1, 0.2, 0.3]);
        let zero = Tensor::zeros(vec![3, 1]);
        let a = [1.0, -1.0, 0.5];
        let lr = surprisal_lowrank(&a, &out, &zero).unwrap();
        let diag = surprisal_diag(&a, &out).unwrap();
        assert_eq!(lr.quad, diag.e);
        assert!((lr.logdet - 0.6).abs() < 1e-15);
    }

    #[test]
    fn lowrank_orthogonal_residual_has_no_correction() {
        // D = I, B = e₁, residual on e₂: Bᵀ D⁻¹ v = 0.
        let out = output(vec![0.0; 3], vec![0.0; 3]);
        let b = Tensor::new(vec![3, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let lr = surprisal_lowrank(&[0.0, 2.0, 0.0], &out, &b).unwrap();
        assert_eq!(lr.quad, 4.0);
        assert_eq!(lr.delta, 0.0);
    }

    #[test]
    fn gradient_zero_points() {
        let h = head_with(3, 2, 4, Density::DiagGauss, 5);
        let a_prev = [0.2, 0.1, -0.3];
        let out = h.forward(&a_prev).unwrap();
        let g = density_grad(&out.mu.clone(), &out, &Density::DiagGauss).unwrap();
        assert!(g.d_mu.iter().all(|v| *v == 0.0));
        // Standardized residual of exactly one: ∂ℓ/∂s vanishes.
        let a: Vec<f64> = out
            .mu
            .iter()
            .zip(&out.s)
            .map(|(m, s)| m + (0.5 * s).exp())
            .collect();
        let g = density_grad(&a, &out, &Density::DiagGauss).unwrap();
        assert!(g.d_s.iter().all(|v| v.abs() < 1e-12));
    }

    fn loss_of(h: &TapHead, a_prev: &[f64], a: &[f64]) -> f64 {
        let out = h.forward(a_prev).unwrap();
        density_grad(a, &out, &h.config.density).unwrap().loss
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let densities = [
            Density::DiagGauss,
            Density::StudentT { nu: 4.0 },
            Density::Huber { delta: 1.0 },
        ];
        for (n, density) in densities.iter().enumerate() {
            let h = head_with(4, 3, 5, *density, 100 + n as u64);
            let mut rng = seeded(200 + n as u64);
            let a_prev: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = head_gradients(&h, &a_prev, &a).unwrap();
            let step = 1e-6;
            for (pi, grad) in g.params.iter().enumerate() {
                for idx in 0..grad.len() {
                    let mut hp = h.clone();
                    hp.params_mut()[pi].data_mut()[idx] += step;
                    let mut hm = h.clone();
                    hm.params_mut()[pi].data_mut()[idx] -= step;
                    let fd = (loss_of(&hp, &a_prev, &a) - loss_of(&hm, &a_prev, &a)) / (2.0 * step);
                    let an = grad.data()[idx];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
                    assert!(rel <= 1e-5, "{density:?} param {pi}[{idx}]: {an} vs {fd}");
                }
            }
        }
    }
}
