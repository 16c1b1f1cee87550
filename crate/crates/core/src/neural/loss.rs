//! Least-squares GAN objectives and softmax cross-entropy, with gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A scalar loss and its gradients with respect to each tensor argument, in order.
#[derive(Debug, Clone)]
pub struct Loss {
    pub value: f64,
    pub grads: Vec<Tensor>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            layer: what.to_string(),
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    if a.numel() == 0 {
        return Err(Error::Data(format!("{what}: empty batch")));
    }
    Ok(())
}

/// Discriminator loss: mean of `½(d_real − 1)² + ½ d_fake²`.
pub fn lsgan_d_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Loss> {
    same_shape(d_real, d_fake, "lsgan_d_loss")?;
    let n = d_real.numel() as f64;
    let mut value = 0.0;
    let mut gr = Vec::with_capacity(d_real.numel());
    let mut gf = Vec::with_capacity(d_real.numel());
    for (r, f) in d_real.data().iter().zip(d_fake.data()) {
        value += 0.5 * (r - 1.0).powi(2) + 0.5 * f * f;
        gr.push((r - 1.0) / n);
        gf.push(f / n);
    }
    Ok(Loss {
        value: value / n,
        grads: vec![
            Tensor::new(d_real.shape().to_vec(), gr)?,
            Tensor::new(d_fake.shape().to_vec(), gf)?,
        ],
    })
}

/// Generator loss: mean `(d_fake − 1)²` plus `λ` times mean `|ŷ − y|`.
/// Gradients are returned for `d_fake` and `y_hat`.
pub fn lsgan_g_loss(d_fake: &Tensor, y_hat: &Tensor, y: &Tensor, lambda: f64) -> Result<Loss> {
    same_shape(y_hat, y, "lsgan_g_loss")?;
    if d_fake.numel() == 0 {
        return Err(Error::Data(
            "lsgan_g_loss: empty discriminator batch".into(),
        ));
    }
    let nd = d_fake.numel() as f64;
    let ny = y.numel() as f64;
    let adv: f64 = d_fake.data().iter().map(|d| (d - 1.0).powi(2)).sum::<f64>() / nd;
    let l1: f64 = y_hat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / ny;
    let gd = d_fake.data().iter().map(|d| 2.0 * (d - 1.0) / nd).collect();
    let gy = y_hat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| lambda * (a - b).signum() * f64::from(a != b) / ny)
        .collect();
    Ok(Loss {
        value: adv + lambda * l1,
        grads: vec![
            Tensor::new(d_fake.shape().to_vec(), gd)?,
            Tensor::new(y_hat.shape().to_vec(), gy)?,
        ],
    })
}

/// Mean cross-entropy of `[B, C]` logits against class indices.
pub fn softmax_ce_loss(logits: &Tensor, labels: &[usize]) -> Result<Loss> {
    if logits.shape().len() != 2 || logits.batch() != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            layer: "softmax_ce_loss".into(),
            detail: format!("logits {:?} with {} labels", logits.shape(), labels.len()),
        });
    }
    let c = logits.shape()[1];
    let b = labels.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.numel());
    for (row, &l) in logits.data().chunks(c).zip(labels) {
        if l >= c {
            return Err(Error::Data(format!(
                "label {l} out of range for {c} classes"
            )));
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        value += lse - row[l];
        for (k, v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad.push((p - f64::from(k == l)) / b);
        }
    }
    Ok(Loss {
        value: value / b,
        grads: vec![Tensor::new(logits.shape().to_vec(), grad)?],
    })
}
