//! Raw numeric kernels shared by the forward and backward passes.

use crate::tensor::split_axis;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` expressed in the index space of `out`; broadcast axes get 0.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - src.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    strides
}

fn for_each_offset(out: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let numel: usize = out.iter().product();
    let rank = out.len();
    let mut counters = vec![0usize; rank];
    let mut off = 0usize;
    for i in 0..numel {
        f(i, off);
        for d in (0..rank).rev() {
            counters[d] += 1;
            off += strides[d];
            if counters[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            counters[d] = 0;
        }
    }
}

fn is_suffix(src: &[usize], out: &[usize]) -> bool {
    src.len() <= out.len() && out[out.len() - src.len()..] == *src
}

/// Reads `src` (of shape `src_shape`) broadcast to `out` and returns it densely.
pub(crate) fn expand(src: &[f64], src_shape: &[usize], out: &[usize]) -> Vec<f64> {
    let numel: usize = out.iter().product();
    if src_shape == out {
        return src.to_vec();
    }
    if src.len() == 1 {
        return vec![src[0]; numel];
    }
    if is_suffix(src_shape, out) {
        return src.iter().copied().cycle().take(numel).collect();
    }
    let strides = broadcast_strides(src_shape, out);
    let mut v = vec![0.0; numel];
    for_each_offset(out, &strides, |i, o| v[i] = src[o]);
    v
}

/// Sums `grad` (shape `out`) down to `target` by accumulating over broadcast axes.
pub(crate) fn reduce_to(grad: &[f64], out: &[usize], target: &[usize]) -> Vec<f64> {
    if target == out {
        return grad.to_vec();
    }
    let tn: usize = target.iter().product();
    if tn == 1 {
        return vec![grad.iter().sum()];
    }
    let mut acc = vec![0.0; tn];
    if is_suffix(target, out) {
        for chunk in grad.chunks_exact(tn) {
            for (a, g) in acc.iter_mut().zip(chunk) {
                *a += g;
            }
        }
        return acc;
    }
    let strides = broadcast_strides(target, out);
    for_each_offset(out, &strides, |i, o| acc[o] += grad[i]);
    acc
}

pub(crate) fn binary(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a_shape == out && b_shape == out {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    if a_shape == out && is_suffix(b_shape, out) {
        let bn = b.len();
        return a
            .chunks_exact(bn)
            .flat_map(|chunk| chunk.iter().zip(b).map(|(&x, &y)| f(x, y)))
            .collect();
    }
    let ea = expand(a, a_shape, out);
    let eb = expand(b, b_shape, out);
    ea.iter().zip(&eb).map(|(&x, &y)| f(x, y)).collect()
}

/// `c (+)= op(a) · op(b)` for an `m × k` by `k × n` product.
///
/// `a_t` means `a` is stored as `k × m`; `b_t` means `b` is stored as `n × k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn transpose_last2(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x
        .chunks_exact(rows * cols)
        .zip(out.chunks_exact_mut(rows * cols))
    {
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    out
}

pub(crate) fn reduce_axis(
    x: &[f64],
    shape: &[usize],
    axis: usize,
    init: f64,
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![init; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                let slot = &mut out[o * inner + i];
                *slot = f(*slot, x[base + i]);
            }
        }
    }
    out
}

/// Broadcasts a keep-dim reduction result back along `axis`.
pub(crate) fn spread_axis(r: &[f64], shape: &[usize], axis: usize, scale: f64) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            out[base..base + inner].copy_from_slice(&r[o * inner..(o + 1) * inner]);
        }
    }
    if scale != 1.0 {
        out.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// First index of the maximum along `axis`, one per reduced slot.
pub(crate) fn argmax_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<usize> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut best = vec![0usize; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let mut bi = 0;
            let mut bv = x[o * len * inner + i];
            for l in 1..len {
                let v = x[(o * len + l) * inner + i];
                if v > bv {
                    bv = v;
                    bi = l;
                }
            }
            best[o * inner + i] = bi;
        }
    }
    best
}

pub(crate) fn softmax_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut m = f64::NEG_INFINITY;
            for l in 0..len {
                m = m.max(x[at(l)]);
            }
            let mut z = 0.0;
            for l in 0..len {
                let e = (x[at(l)] - m).exp();
                out[at(l)] = e;
                z += e;
            }
            for l in 0..len {
                out[at(l)] /= z;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f64], g: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let dot: f64 = (0..len).map(|l| y[at(l)] * g[at(l)]).sum();
            for l in 0..len {
                out[at(l)] = y[at(l)] * (g[at(l)] - dot);
            }
        }
    }
    out
}

pub(crate) fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let c = gamma.len();
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let mu = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..c {
            dst[j] = (row[j] - mu) * inv * gamma[j] + beta[j];
        }
    }
    out
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    x: &[f64],
    gamma: &[f64],
    g: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = gamma.len();
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut xhat = vec![0.0; c];
    let mut dxhat = vec![0.0; c];
    for ((row, grow), drow) in x
        .chunks_exact(c)
        .zip(g.chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        let mu = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..c {
            xhat[j] = (row[j] - mu) * inv;
            dxhat[j] = grow[j] * gamma[j];
            dgamma[j] += grow[j] * xhat[j];
            dbeta[j] += grow[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
        let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        for j in 0..c {
            drow[j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    (dx, dgamma, dbeta)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn concat_axis(parts: &[(&[f64], &[usize])], axis: usize) -> Vec<f64> {
    let (outer, _, inner) = split_axis(parts[0].1, axis);
    let total: usize = parts.iter().map(|(d, _)| d.len()).sum();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for (data, shape) in parts {
            let block = shape[axis] * inner;
            out.extend_from_slice(&data[o * block..(o + 1) * block]);
        }
    }
    out
}

pub(crate) fn slice_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<f64> {
    let (outer, full, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    out
}

pub(crate) fn unslice_axis(
    g: &[f64],
    shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
) -> Vec<f64> {
    let (outer, full, inner) = split_axis(shape, axis);
    let mut out = vec![0.0; outer * full * inner];
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    out
}
