//! Training of the linear classification head on frozen pooled features
//! with softmax cross-entropy and Adam. The backbone is never updated.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;
use crate::swin::{softmax, Linear};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of each class assigned to training (7:3 by default).
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("invalid Adam hyper-parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeature {
    pub feature: Vec<f64>,
    pub label: u8,
}

impl LabeledFeature {
    pub fn new(feature: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::InvalidValue(format!("label must be 0 or 1, got {label}")));
        }
        if let Some(i) = feature.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("feature value {i} is not finite")));
        }
        Ok(Self { feature, label })
    }
}

/// `-log softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Head parameters flattened as the row-major weight followed by the bias.
pub fn head_params(head: &Linear) -> Vec<f64> {
    head.weight.iter().chain(head.bias.iter()).copied().collect()
}

pub fn set_head_params(head: &mut Linear, params: &[f64]) -> Result<()> {
    let nw = head.weight.len();
    if params.len() != nw + head.bias.len() {
        return Err(Error::Dimension(format!(
            "{} parameters given for a head holding {}",
            params.len(),
            nw + head.bias.len()
        )));
    }
    head.weight.iter_mut().zip(&params[..nw]).for_each(|(w, p)| *w = *p);
    head.bias.iter_mut().zip(&params[nw..]).for_each(|(b, p)| *b = *p);
    Ok(())
}

fn check_batch(head: &Linear, batch: &[LabeledFeature]) -> Result<()> {
    for (i, s) in batch.iter().enumerate() {
        if s.feature.len() != head.in_dim() {
            return Err(Error::Dimension(format!(
                "sample {i} has {} features, head expects {}",
                s.feature.len(),
                head.in_dim()
            )));
        }
        if s.label as usize >= head.out_dim() {
            return Err(Error::InvalidValue(format!("sample {i} label {} out of range", s.label)));
        }
    }
    Ok(())
}

/// Mean cross-entropy of the head over `batch`.
pub fn head_loss(head: &Linear, batch: &[LabeledFeature]) -> Result<f64> {
    check_batch(head, batch)?;
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        total += cross_entropy(&head.forward(&s.feature)?, s.label as usize);
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss and its gradient with respect to [`head_params`]:
/// `dL/dW = x^T (p - y) / B`, `dL/db = (p - y) / B`.
pub fn head_loss_and_grad(head: &Linear, batch: &[LabeledFeature]) -> Result<(f64, Vec<f64>)> {
    check_batch(head, batch)?;
    if batch.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let (d, k) = (head.in_dim(), head.out_dim());
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; d * k + k];
    let mut total = 0.0;
    for s in batch {
        let logits = head.forward(&s.feature)?;
        total += cross_entropy(&logits, s.label as usize);
        let mut delta = softmax(&logits);
        delta[s.label as usize] -= 1.0;
        for (i, &x) in s.feature.iter().enumerate() {
            for (j, &dj) in delta.iter().enumerate() {
                grad[i * k + j] += x * dj * inv;
            }
        }
        for (j, &dj) in delta.iter().enumerate() {
            grad[d * k + j] += dj * inv;
        }
    }
    Ok((total * inv, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension(format!(
            "Adam shapes differ: params {n}, grads {}, state {}",
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Deterministic per-class split into train and validation indices. Each
/// class contributes `round(n_c * fraction)` samples to training, at least
/// one; both lists come back sorted.
pub fn stratified_split(labels: &[u8], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = keyed_rng(seed, "train.split");
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len());
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: Linear,
    pub curve: Vec<EpochStats>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub train_accuracy: f64,
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn accuracy(head: &Linear, samples: &[LabeledFeature]) -> Result<f64> {
    check_batch(head, samples)?;
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to score".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        let logits = head.forward(&s.feature)?;
        correct += usize::from(crate::swin::argmax(&logits) == s.label as usize);
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Trains a copy of `init` and records train/validation loss after every epoch.
pub fn train_head(data: &[LabeledFeature], cfg: &TrainConfig, init: &Linear) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_batch(init, data)?;
    let labels: Vec<u8> = data.iter().map(|s| s.label).collect();
    let (train_idx, val_idx) = stratified_split(&labels, cfg.train_fraction, cfg.seed);
    let train: Vec<LabeledFeature> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let val: Vec<LabeledFeature> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let (pos, neg) = train.iter().fold((0, 0), |(p, n), s| {
        if s.label == 1 {
            (p + 1, n)
        } else {
            (p, n + 1)
        }
    });
    if pos == 0 || neg == 0 {
        return Err(Error::Dataset(format!(
            "training split needs both classes, found {pos} positive and {neg} negative samples"
        )));
    }

    let mut head = init.clone();
    let mut params = head_params(&head);
    let mut state = AdamState::new(params.len());
    let mut rng = keyed_rng(cfg.seed, "train.shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<LabeledFeature> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (_, grad) = head_loss_and_grad(&head, &batch)?;
            adam_step(&mut params, &grad, &mut state, cfg)?;
            set_head_params(&mut head, &params)?;
        }
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            (Some(head_loss(&head, &val)?), Some(accuracy(&head, &val)?))
        };
        let stats = EpochStats {
            epoch,
            train_loss: head_loss(&head, &train)?,
            val_loss,
            val_accuracy,
        };
        log::debug!("epoch {epoch}: train loss {:.6}", stats.train_loss);
        curve.push(stats);
    }
    let train_accuracy = accuracy(&head, &train)?;
    Ok(TrainOutcome {
        head,
        curve,
        train_indices: train_idx,
        val_indices: val_idx,
        train_accuracy,
    })
}

/// `epoch,train_loss,val_loss,val_accuracy`; validation fields are empty
/// when the split left no validation samples.
pub fn write_loss_curve_csv<W: Write>(out: W, curve: &[EpochStats]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["epoch", "train_loss", "val_loss", "val_accuracy"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in curve {
        wtr.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            opt(e.val_loss),
            opt(e.val_accuracy),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<loss curve csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, dim: usize, sep: f64, seed: u64) -> Vec<LabeledFeature> {
        let mut rng = keyed_rng(seed, "blobs");
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let feature = (0..dim)
                    .map(|j| if j == 0 { sign * sep } else { 0.0 } + rng.gen_range(-0.3..0.3))
                    .collect();
                LabeledFeature::new(feature, label).unwrap()
            })
            .collect()
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(&[0.0, 0.0], 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(cross_entropy(&[20.0, -20.0], 0) < 1e-8);
        let hand = (1.0 + (-1.0f64).exp()).ln();
        assert!((cross_entropy(&[1.0, 2.0], 1) - hand).abs() < 1e-15);
        assert!((hand - 0.313262).abs() < 1e-6);
        assert!(cross_entropy(&[1000.0, -1000.0], 1).is_finite());
    }

    #[test]
    fn shift_invariance() {
        for (a, b, c) in [(0.3, -1.2, 5.0), (4.0, 4.5, -100.0)] {
            for label in 0..2 {
                let l0 = cross_entropy(&[a, b], label);
                let l1 = cross_entropy(&[a + c, b + c], label);
                assert!((l0 - l1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.5, -2.0];
        let mut st = AdamState::new(2);
        st.m = vec![0.1, -0.1];
        st.v = vec![0.01, 0.01];
        adam_step(&mut p, &[0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(st.m, vec![0.1 * 0.9, -0.1 * 0.9]);
        assert!(st.v[0] < 0.01);
        let mut q = vec![0.5, -2.0];
        let mut fresh = AdamState::new(2);
        adam_step(&mut q, &[0.0, 0.0], &mut fresh, &cfg).unwrap();
        assert_eq!(q, vec![0.5, -2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.7, -3.0, 1e-2], &mut st, &cfg).unwrap();
        for (v, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 1e-3).abs() < 1e-8, "{v}");
        }
        assert_eq!(st.step, 1);
        assert!(adam_step(&mut p, &[1.0], &mut st, &cfg).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = blobs(12, 5, 1.0, 3);
        let head = Linear::init(9, "head.fc", 5, 2);
        let (_, grad) = head_loss_and_grad(&head, &data).unwrap();
        let base = head_params(&head);
        let h = 1e-5;
        for i in 0..base.len() {
            let mut plus = head.clone();
            let mut minus = head.clone();
            let mut p = base.clone();
            p[i] += h;
            set_head_params(&mut plus, &p).unwrap();
            p[i] -= 2.0 * h;
            set_head_params(&mut minus, &p).unwrap();
            let fd = (head_loss(&plus, &data).unwrap() - head_loss(&minus, &data).unwrap()) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn split_is_stratified_and_total() {
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i % 5 == 0)).collect();
        let (tr, va) = stratified_split(&labels, 0.7, 4);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(tr.iter().filter(|&&i| labels[i] == 1).count(), 7);
        assert_eq!(tr.len(), 35);
        assert_eq!(stratified_split(&labels, 0.7, 4), (tr, va));
    }

    #[test]
    fn separable_blobs_converge() {
        let data = blobs(60, 8, 1.0, 1);
        let cfg = TrainConfig::default();
        let out = train_head(&data, &cfg, &Linear::init(2, "head.fc", 8, 2)).unwrap();
        assert_eq!(out.train_accuracy, 1.0);
        assert_eq!(out.curve.len(), 200);
        for w in out.curve.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = blobs(20, 4, 1.0, 2);
        let init = Linear::init(3, "head.fc", 4, 2);
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 5, ..TrainConfig::default() };
        let out = train_head(&data, &cfg, &init).unwrap();
        assert_eq!(out.head, init);
        assert!(out.curve.iter().all(|e| e.train_loss == out.curve[0].train_loss));
    }

    #[test]
    fn single_class_is_refused() {
        let data: Vec<_> = (0..10).map(|_| LabeledFeature::new(vec![1.0, 2.0], 0).unwrap()).collect();
        let err = train_head(&data, &TrainConfig::default(), &Linear::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }

    #[test]
    fn random_labels_stay_near_chance() {
        let mut rng = keyed_rng(8, "noise");
        let data: Vec<_> = (0..400)
            .map(|_| {
                let f = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
                LabeledFeature::new(f, rng.gen_range(0..2)).unwrap()
            })
            .collect();
        let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
        let out = train_head(&data, &cfg, &Linear::init(1, "head.fc", 6, 2)).unwrap();
        let acc = out.curve.last().unwrap().val_accuracy.unwrap();
        assert!((acc - 0.5).abs() <= 0.1, "{acc}");
    }

    #[test]
    fn curve_csv_layout() {
        let curve = [EpochStats { epoch: 1, train_loss: 0.5, val_loss: None, val_accuracy: None }];
        let mut buf = Vec::new();
        write_loss_curve_csv(&mut buf, &curve).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss,val_accuracy\n1,0.5,,\n");
    }
}
