//! Feed-forward kernels with exact hand-written reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `y = x W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !x.is_matrix() || !w.is_matrix() {
        return Err(Error::Dimension(format!(
            "dense_forward needs matrices, got x {:?}, W {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (batch, d_in) = (x.rows(), x.cols());
    let (w_in, d_out) = (w.rows(), w.cols());
    if d_in != w_in || b.len() != d_out {
        return Err(Error::Dimension(format!(
            "dense_forward shapes do not conform: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut y = Tensor::zeros(vec![batch, d_out]);
    for r in 0..batch {
        let out = y.row_mut(r);
        out.copy_from_slice(b.data());
        let xr = &x.data()[r * d_in..(r + 1) * d_in];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w.data()[k * d_out..(k + 1) * d_out];
            for (o, &wv) in wrow.iter().enumerate() {
                out[o] += xv * wv;
            }
        }
    }
    Ok(y)
}

/// Gradients of the affine map given the cached input `x`.
///
/// Returns `(grad_x, grad_w, grad_b)` for upstream `grad_out: [batch, out]`.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (batch, d_in) = (x.rows(), x.cols());
    let d_out = w.cols();
    if grad_out.rows() != batch || grad_out.cols() != d_out || w.rows() != d_in {
        return Err(Error::Usage(format!(
            "dense_backward trace mismatch: x {:?}, W {:?}, grad_out {:?}",
            x.shape(),
            w.shape(),
            grad_out.shape()
        )));
    }
    let mut grad_x = Tensor::zeros(vec![batch, d_in]);
    let mut grad_w = Tensor::zeros(vec![d_in, d_out]);
    let mut grad_b = Tensor::zeros(vec![d_out]);
    for r in 0..batch {
        let g = grad_out.row(r);
        for (o, &gv) in g.iter().enumerate() {
            grad_b.data_mut()[o] += gv;
        }
        let xr = x.row(r);
        for k in 0..d_in {
            let xv = xr[k];
            let wrow = &w.data()[k * d_out..(k + 1) * d_out];
            let mut acc = 0.0;
            let gw = &mut grad_w.data_mut()[k * d_out..(k + 1) * d_out];
            for (o, &gv) in g.iter().enumerate() {
                acc += gv * wrow[o];
                gw[o] += xv * gv;
            }
            grad_x.data_mut()[r * d_in + k] = acc;
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Backward of ReLU given the cached pre-activation; the subgradient at
/// exactly 0 is 0.
pub fn relu_backward(pre: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if pre.shape() != grad_out.shape() {
        return Err(Error::Usage(format!(
            "relu_backward trace mismatch: pre {:?}, grad_out {:?}",
            pre.shape(),
            grad_out.shape()
        )));
    }
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(pre.data().iter()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Mean categorical cross-entropy over the batch and its logit gradient.
///
/// `loss = mean_r(-log softmax(logits_r)[label_r])`,
/// `grad = (softmax - onehot) / batch`.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if !logits.is_matrix() {
        return Err(Error::Dimension(format!(
            "softmax_xent needs a [batch, classes] matrix, got {:?}",
            logits.shape()
        )));
    }
    let (batch, classes) = (logits.rows(), logits.cols());
    if batch == 0 {
        return Err(Error::Usage("softmax_xent on an empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::Usage(format!(
            "softmax_xent got {} labels for batch {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = Tensor::zeros(vec![batch, classes]);
    let inv_batch = 1.0 / batch as f64;
    let mut loss = 0.0;
    for r in 0..batch {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss += -(row[labels[r]] - max - log_denom);
        let g = grad.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            g[c] = ((v - max).exp() / denom) * inv_batch;
        }
        g[labels[r]] -= inv_batch;
    }
    Ok((loss * inv_batch, grad))
}

/// Fraction of frames whose argmax class differs from the label.
/// Argmax ties break toward the lowest class index.
pub fn frame_error_rate(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rows() == 0 {
        return Err(Error::Usage("frame_error_rate on an empty batch".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Usage(format!(
            "frame_error_rate got {} labels for batch {}",
            labels.len(),
            logits.rows()
        )));
    }
    let mut wrong = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        if argmax(logits.row(r)) != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / labels.len() as f64)
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
