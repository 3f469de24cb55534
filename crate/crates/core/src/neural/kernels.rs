use super::{Batch, Dense};

/// `x * W + b`. Each output element is accumulated over the input index in
/// ascending order, independent of the number of rows.
pub(super) fn affine(x: &Batch, layer: &Dense) -> Batch {
    let n_out = layer.fan_out;
    let mut out = Batch::zeros(x.rows, n_out);
    for (xr, yr) in x.iter_rows().zip(out.data.chunks_exact_mut(n_out.max(1))) {
        yr.copy_from_slice(&layer.bias);
        for (&xk, wk) in xr.iter().zip(layer.weight.chunks_exact(n_out)) {
            axpy(xk, wk, yr);
        }
    }
    out
}

/// Adds `x^T * delta` to the weight gradient and column sums of `delta` to the
/// bias gradient.
pub(super) fn accumulate_grads(x: &Batch, delta: &Batch, grad: &mut Dense) {
    let n_out = grad.fan_out;
    for (xr, dr) in x.iter_rows().zip(delta.iter_rows()) {
        for (&xk, gk) in xr.iter().zip(grad.weight.chunks_exact_mut(n_out)) {
            if xk != 0.0 {
                axpy(xk, dr, gk);
            }
        }
        axpy(1.0, dr, &mut grad.bias);
    }
}

/// `delta * W^T`.
pub(super) fn backprop_input(delta: &Batch, layer: &Dense) -> Batch {
    let mut out = Batch::zeros(delta.rows, layer.fan_in);
    for (dr, or) in delta
        .iter_rows()
        .zip(out.data.chunks_exact_mut(layer.fan_in.max(1)))
    {
        for (o, wk) in or.iter_mut().zip(layer.weight.chunks_exact(layer.fan_out)) {
            *o = dot(dr, wk);
        }
    }
    out
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
