use crate::error::{Result, SnapError};
use crate::heads::cholesky;
use crate::nnet::sigmoid;

/// L2 weight on `β₁` and `β₂`.
pub const LOGISTIC_L2: f64 = 1e-4;
const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: [f64; 3],
    pub iterations: usize,
    pub grad_norm: f64,
    /// Class-balanced mean log-loss (without the penalty).
    pub loss: f64,
}

struct Problem<'a> {
    s: &'a [f64],
    m: &'a [f64],
    y: Vec<f64>,
    w: Vec<f64>,
    dims: usize,
}

impl Problem<'_> {
    fn x(&self, i: usize) -> [f64; 3] {
        [1.0, self.s[i], self.m[i]]
    }

    fn loss(&self, beta: &[f64; 3]) -> f64 {
        let n = self.y.len() as f64;
        let mut total = 0.0;
        for i in 0..self.y.len() {
            let x = self.x(i);
            let eta = beta[0] + beta[1] * x[1] + beta[2] * x[2];
            // log(1 + e^η) − yη, computed stably.
            let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
            total += self.w[i] * (softplus - self.y[i] * eta);
        }
        total / n
    }

    fn objective(&self, beta: &[f64; 3]) -> f64 {
        self.loss(beta) + LOGISTIC_L2 * (beta[1] * beta[1] + beta[2] * beta[2])
    }

    fn grad_hess(&self, beta: &[f64; 3]) -> ([f64; 3], [f64; 9]) {
        let n = self.y.len() as f64;
        let mut g = [0.0; 3];
        let mut h = [0.0; 9];
        for i in 0..self.y.len() {
            let x = self.x(i);
            let p = sigmoid(beta[0] + beta[1] * x[1] + beta[2] * x[2]);
            let r = self.w[i] * (p - self.y[i]) / n;
            let c = self.w[i] * p * (1.0 - p) / n;
            for a in 0..3 {
                g[a] += r * x[a];
                for b in 0..3 {
                    h[a * 3 + b] += c * x[a] * x[b];
                }
            }
        }
        for a in 1..3 {
            g[a] += 2.0 * LOGISTIC_L2 * beta[a];
            h[a * 3 + a] += 2.0 * LOGISTIC_L2;
        }
        (g, h)
    }
}

/// Objective value (balanced mean log-loss plus penalty) at `beta`.
pub fn logistic_objective(s: &[f64], m: &[f64], errors: &[bool], beta: [f64; 3]) -> Result<f64> {
    Ok(problem(s, m, errors, false)?.objective(&beta))
}

fn problem<'a>(
    s: &'a [f64],
    m: &'a [f64],
    errors: &[bool],
    label_free: bool,
) -> Result<Problem<'a>> {
    if s.len() != m.len() || s.len() != errors.len() || s.is_empty() {
        return Err(SnapError::argument(
            "S, m and labels must be non-empty and aligned",
        ));
    }
    if s.iter().chain(m).any(|v| !v.is_finite()) {
        return Err(SnapError::numeric("non-finite feature"));
    }
    let n = errors.len();
    let pos = errors.iter().filter(|&&e| e).count();
    if pos == 0 || pos == n {
        return Err(SnapError::fit(
            "dev set has a single class; the mapping is not identifiable",
        ));
    }
    let (wp, wn) = (
        n as f64 / (2.0 * pos as f64),
        n as f64 / (2.0 * (n - pos) as f64),
    );
    Ok(Problem {
        s,
        m,
        y: errors.iter().map(|&e| f64::from(u8::from(e))).collect(),
        w: errors.iter().map(|&e| if e { wp } else { wn }).collect(),
        dims: if label_free { 2 } else { 3 },
    })
}

/// Class-balanced L2-regularized logistic regression of the error indicator
/// on `(S, m)` by damped Newton steps from zero. `label_free` pins `β₂ = 0`.
pub fn fit_logistic(
    s: &[f64],
    m: &[f64],
    errors: &[bool],
    label_free: bool,
) -> Result<LogisticFit> {
    let prob = problem(s, m, errors, label_free)?;
    let k = prob.dims;
    let mut beta = [0.0; 3];
    let mut obj = prob.objective(&beta);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < MAX_ITER {
        let (g, h) = prob.grad_hess(&beta);
        grad_norm = g[..k].iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm <= GRAD_TOL {
            break;
        }
        iterations += 1;
        let mut hk = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                hk[a * k + b] = h[a * 3 + b];
            }
        }
        // Newton direction, or steepest descent when the Hessian is not SPD.
        let dir: Vec<f64> = match cholesky(&hk, k) {
            Ok(l) => solve_chol(&l, k, &g[..k]),
            Err(_) => g[..k].to_vec(),
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = beta;
            for a in 0..k {
                cand[a] -= step * dir[a];
            }
            let c = prob.objective(&cand);
            if c <= obj {
                beta = cand;
                obj = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(SnapError::numeric("logistic fit diverged"));
    }
    Ok(LogisticFit {
        beta,
        iterations,
        grad_norm,
        loss: prob.loss(&beta),
    })
}

fn solve_chol(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let y = crate::heads::forward_substitute(l, n, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for p in i + 1..n {
            sum -= l[p * n + i] * x[p];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}
