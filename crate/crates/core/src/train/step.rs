use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::balance::balance_lambda;
use super::config::{Balance, TrainConfig};
use super::objective::training_density;
use super::optim::{clip_global_norm, cosine_lr, warmup_factor, Optimizer};
use crate::error::{Result, SnapError};
use crate::heads::{density_grad, head_backward, surprisal_diag, xi_chain};
use crate::model::SnapModel;
use crate::nnet::{clf_loss_grad, cross_entropy, Backbone, Tensor};
use crate::rng::seeded;

/// Gradients of the three loss terms kept apart, each over the full
/// parameter list of [`SnapModel::params`].
#[derive(Debug, Clone)]
pub struct GradParts {
    pub clf: Vec<Tensor>,
    pub ss: Vec<Tensor>,
    pub reg: Vec<Tensor>,
    pub clf_loss: f64,
    pub ss_loss: f64,
    pub reg_loss: f64,
    /// `ē_ℓ` per example (rows) and tap (columns).
    pub ebar: Vec<Vec<f64>>,
}

impl GradParts {
    /// `∇L_clf + λ_SS ∇L_SS + λ_reg ∇R`.
    pub fn combine(&self, lambda_ss: f64, lambda_reg: f64) -> Vec<Tensor> {
        let mut total = self.clf.clone();
        for (t, (s, r)) in total.iter_mut().zip(self.ss.iter().zip(&self.reg)) {
            if lambda_ss != 0.0 {
                t.add_scaled(s, lambda_ss);
            }
            if lambda_reg != 0.0 {
                t.add_scaled(r, lambda_reg);
            }
        }
        total
    }

    pub fn total_loss(&self, lambda_ss: f64, lambda_reg: f64) -> f64 {
        self.clf_loss + lambda_ss * self.ss_loss + lambda_reg * self.reg_loss
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64], sign: f64) {
    let v = slot.get_or_insert_with(|| vec![0.0; g.len()]);
    v.iter_mut().zip(g).for_each(|(a, b)| *a += sign * b);
}

/// Exact gradients of every loss term on one batch. With `detach` the
/// auxiliary terms do not reach the backbone.
pub fn compute_gradients(
    model: &SnapModel,
    batch: &[(Tensor, usize)],
    cfg: &TrainConfig,
    detach: bool,
) -> Result<GradParts> {
    if batch.is_empty() {
        return Err(SnapError::argument("empty batch"));
    }
    let net = &model.backbone;
    let spec = net.spec();
    let nb = net.params().len();
    let omega = cfg.omega_for(model.heads.len());
    let mut clf = model.zero_grads();
    let mut ss = model.zero_grads();
    let mut reg = model.zero_grads();
    let inv = 1.0 / batch.len() as f64;
    let (mut clf_loss, mut ss_loss, mut reg_loss) = (0.0, 0.0, 0.0);
    let mut ebar = Vec::with_capacity(batch.len());
    let zero_logits = vec![0.0; spec.class_count];

    for (x, y) in batch {
        if *y >= spec.class_count {
            return Err(SnapError::argument(format!(
                "label {y} outside [0, {})",
                spec.class_count
            )));
        }
        let (trace, _) = net.forward_collect(x)?;
        let (l, dlogits) = cross_entropy(&trace.logits, *y);
        clf_loss += l;
        net.backward(x, &trace, &dlogits, &[], &mut clf[..nb], inv);

        let mut ss_dvec: Vec<Option<Vec<f64>>> = vec![None; spec.depth()];
        let mut reg_dvec: Vec<Option<Vec<f64>>> = vec![None; spec.depth()];
        let mut row = Vec::with_capacity(model.heads.len());
        for (h, (head, w)) in model.heads.iter().zip(&omega).enumerate() {
            let a_prev = trace.tap_vector(head.tap - 1)?;
            let a = trace.tap_vector(head.tap)?;
            let out = head.forward(a_prev)?;
            row.push(surprisal_diag(a, &out)?.ebar);
            let off = nb + 5 * h;

            let c = w / a.len() as f64 * inv;
            let dg = density_grad(a, &out, &training_density(head))?;
            ss_loss += c * dg.loss;
            let d_mu: Vec<f64> = dg.d_mu.iter().map(|g| g * c).collect();
            let d_s: Vec<f64> = dg.d_s.iter().map(|g| g * c).collect();
            let d_xi = xi_chain(head, &out, &d_s);
            let (pg, d_prev) = head_backward(head, a_prev, &out, &d_mu, &d_xi);
            for (acc, g) in ss[off..off + 5].iter_mut().zip(&pg) {
                acc.add_scaled(g, 1.0);
            }
            if !detach {
                add_into(&mut ss_dvec[head.tap - 1], &d_mu, -1.0);
                add_into(&mut ss_dvec[head.tap - 2], &d_prev, 1.0);
            }

            let k = cfg.alpha_var * inv;
            reg_loss += k * out.s.iter().map(|s| s.abs()).sum::<f64>();
            let d_s: Vec<f64> = out.s.iter().map(|s| k * sign(*s)).collect();
            let d_xi = xi_chain(head, &out, &d_s);
            let zeros = vec![0.0; out.dim()];
            let (pg, d_prev) = head_backward(head, a_prev, &out, &zeros, &d_xi);
            for (acc, g) in reg[off..off + 5].iter_mut().zip(&pg) {
                acc.add_scaled(g, 1.0);
            }
            if !detach {
                add_into(&mut reg_dvec[head.tap - 2], &d_prev, 1.0);
            }
        }
        ebar.push(row);
        if !detach {
            net.backward(x, &trace, &zero_logits, &ss_dvec, &mut ss[..nb], 1.0);
            net.backward(x, &trace, &zero_logits, &reg_dvec, &mut reg[..nb], 1.0);
        }
    }

    for (h, head) in model.heads.iter().enumerate() {
        let off = nb + 5 * h;
        // Weight decay on P, W_μ and W_ξ only.
        for (slot, p) in [(0, &head.p), (1, &head.w_mu), (3, &head.w_xi)] {
            reg[off + slot].add_scaled(p, 2.0 * cfg.alpha_wd);
        }
        reg_loss += cfg.alpha_wd * head.weight_sq_norm();
    }
    Ok(GradParts {
        clf,
        ss,
        reg,
        clf_loss: clf_loss * inv,
        ss_loss,
        reg_loss,
        ebar,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Diagnostics of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiag {
    pub clf_loss: f64,
    pub ss_loss: f64,
    pub reg_loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// `λ_SS ‖∇L_SS‖ / ‖∇L_clf‖`, if the classifier gradient is non-zero.
    pub rho: Option<f64>,
    pub ebar: Vec<Vec<f64>>,
}

/// One stabilized update: combine, check, clip, step.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut SnapModel,
    opt: &mut Optimizer,
    batch: &[(Tensor, usize)],
    cfg: &TrainConfig,
    lambda_ss: f64,
    lambda_nominal: f64,
    detach: bool,
    lr: f64,
) -> Result<StepDiag> {
    let parts = compute_gradients(model, batch, cfg, detach)?;
    let loss = parts.total_loss(lambda_ss, cfg.lambda_reg);
    let mut total = parts.combine(lambda_ss, cfg.lambda_reg);
    let grad_norm = clip_global_norm(&mut total, cfg.clip_norm);
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(SnapError::numeric(format!(
            "non-finite training state: clf={} ss={} reg={} grad_norm={grad_norm} lambda_ss={lambda_ss} lr={lr}",
            parts.clf_loss, parts.ss_loss, parts.reg_loss
        )));
    }
    let clf_norm = parts.clf.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    let ss_norm = parts.ss.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    let rho = (clf_norm > 0.0).then(|| lambda_nominal * ss_norm / clf_norm);
    opt.step(&mut model.params_mut(), &total, lr);
    Ok(StepDiag {
        clf_loss: parts.clf_loss,
        ss_loss: parts.ss_loss,
        reg_loss: parts.reg_loss,
        grad_norm,
        rho,
        ebar: parts.ebar,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub clf_loss: f64,
    pub ss_loss: f64,
    pub reg: f64,
    /// EMA of the batch mean of `ē_ℓ`, per tap.
    pub ebar_mean: Vec<f64>,
    /// EMA of the batch variance of `ē_ℓ`, per tap.
    pub ebar_var: Vec<f64>,
    pub lambda_ss: f64,
    pub rho_hat: Option<f64>,
    pub lr: f64,
    pub detach: bool,
    pub val_nll: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn ema(slot: &mut Option<f64>, v: f64, rate: f64) {
    *slot = Some(match *slot {
        None => v,
        Some(prev) => (1.0 - rate) * prev + rate * v,
    });
}

fn batches(n: usize, cfg: &TrainConfig) -> usize {
    n.div_ceil(cfg.batch_size)
}

/// Mean cross-entropy of the backbone on `data`.
pub fn mean_nll(net: &Backbone, data: &[(Tensor, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data {
        let (trace, _) = net.forward_collect(x)?;
        total += cross_entropy(&trace.logits, *y).0;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Full joint training run. `val` enables validation NLL tracking and the
/// optional stall rule for detaching.
pub fn fit(
    model: &mut SnapModel,
    train: &[(Tensor, usize)],
    val: Option<&[(Tensor, usize)]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate(model.heads.len())?;
    if train.is_empty() {
        return Err(SnapError::argument("empty training set"));
    }
    for h in &mut model.heads {
        h.config.xi_clip = cfg.xi_clip;
    }
    let mut rng = seeded(cfg.seed);
    let mut opt = Optimizer::new(cfg, &model.params());
    let total_steps = cfg.epochs * batches(train.len(), cfg);
    let taps = model.heads.len();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lambda = cfg.lambda_ss;
    let mut rho_hat = None;
    let mut detach = cfg.detach;
    let mut mean_ema = vec![None; taps];
    let mut var_ema = vec![None; taps];
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut log = TrainLog::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lambda_eff = lambda * warmup_factor(epoch, cfg.epochs, cfg.warmup_frac);
        let (mut clf_sum, mut ss_sum, mut reg_sum) = (0.0, 0.0, 0.0);
        let mut lr = cfg.lr;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Tensor, usize)> = chunk.iter().map(|&i| train[i].clone()).collect();
            lr = cosine_lr(cfg.lr, step, total_steps);
            let d = train_step(model, &mut opt, &batch, cfg, lambda_eff, lambda, detach, lr)
                .map_err(|e| match e {
                    SnapError::Numeric(m) => {
                        SnapError::numeric(format!("epoch {epoch}, step {step}: {m}"))
                    }
                    other => other,
                })?;
            step += 1;
            let w = batch.len() as f64;
            clf_sum += d.clf_loss * w;
            ss_sum += d.ss_loss * w;
            reg_sum += d.reg_loss * w;
            if let Some(r) = d.rho {
                let rate = match cfg.balance {
                    Balance::Adaptive(b) => b.ema,
                    Balance::Off => cfg.diag_ema,
                };
                ema(&mut rho_hat, r, rate);
            }
            for j in 0..taps {
                let col: Vec<f64> = d.ebar.iter().map(|r| r[j]).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                let v = col.iter().map(|e| (e - m).powi(2)).sum::<f64>() / col.len() as f64;
                ema(&mut mean_ema[j], m, cfg.diag_ema);
                ema(&mut var_ema[j], v, cfg.diag_ema);
            }
        }
        let n = train.len() as f64;
        let val_nll = match val {
            Some(v) if !v.is_empty() => Some(mean_nll(&model.backbone, v)?),
            _ => None,
        };
        log.records.push(EpochRecord {
            epoch,
            clf_loss: clf_sum / n,
            ss_loss: ss_sum / n,
            reg: reg_sum / n,
            ebar_mean: mean_ema.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            ebar_var: var_ema.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            lambda_ss: lambda_eff,
            rho_hat,
            lr,
            detach,
            val_nll,
        });
        log::debug!("epoch {epoch}: clf {:.4} ss {:.4}", clf_sum / n, ss_sum / n);
        if let (Balance::Adaptive(b), Some(r)) = (cfg.balance, rho_hat) {
            lambda = balance_lambda(lambda, r, &b);
        }
        if let Some(v) = val_nll {
            if v < best_val {
                best_val = v;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if cfg.detach_on_stall && !detach && epoch + 1 >= 10 && since_best >= 3 {
                log::info!(
                    "validation NLL stalled; detaching auxiliary gradients from epoch {}",
                    epoch + 1
                );
                detach = true;
            }
        }
    }
    Ok(log)
}

/// Classifier-only training with the same batching, schedule, optimizer and
/// clipping as [`fit`]. Returns the mean training loss per epoch.
pub fn fit_classifier(
    net: &mut Backbone,
    train: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(SnapError::argument("empty training set"));
    }
    let mut rng = seeded(cfg.seed);
    let refs: Vec<&Tensor> = net.params().iter().collect();
    let mut opt = Optimizer::new(cfg, &refs);
    let total_steps = cfg.epochs * batches(train.len(), cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Tensor, usize)> = chunk.iter().map(|&i| train[i].clone()).collect();
            let lr = cosine_lr(cfg.lr, step, total_steps);
            let (loss, mut grads) = clf_loss_grad(net, &batch)?;
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(SnapError::numeric(format!(
                    "non-finite classifier loss at step {step}"
                )));
            }
            let mut params: Vec<&mut Tensor> = net.params_mut().iter_mut().collect();
            opt.step(&mut params, &grads, lr);
            sum += loss * batch.len() as f64;
            step += 1;
        }
        losses.push(sum / train.len() as f64);
    }
    Ok(losses)
}

/// Mean SS loss of `heads` on `data` under uniform layer weights.
pub fn eval_ss(model: &SnapModel, data: &[Tensor]) -> Result<f64> {
    let traces = data
        .iter()
        .map(|x| model.backbone.forward_collect(x).map(|t| t.0))
        .collect::<Result<Vec<_>>>()?;
    super::objective::ss_loss(&traces, &model.heads, &vec![1.0; model.heads.len()])
}
