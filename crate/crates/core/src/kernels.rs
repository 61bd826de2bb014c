//! Low-level numeric kernels shared by the autodiff tape and the inference
//! path. Keeping a single implementation per operator makes forward passes
//! bit-identical regardless of which path runs them.

use crate::real::Real;

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let c_row = &mut out[i * n..(i + 1) * n];
        c_row.fill(T::ZERO);
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * bv;
            }
        }
    }
}

/// C[m,n] = A[m,k] · B[n,k]ᵀ
pub fn matmul_transb<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
}

/// C[m,n] = A[k,m]ᵀ · B[k,n]
pub fn matmul_transa<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(T::ZERO);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a[p * m + i];
            let c_row = &mut out[i * n..(i + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c += a_pi * bv;
            }
        }
    }
}

/// y[m] = W[m,n] · x[n]
pub fn matvec<T: Real>(w: &[T], x: &[T], m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(w.len(), m * n);
    debug_assert_eq!(x.len(), n);
    for i in 0..m {
        let row = &w[i * n..(i + 1) * n];
        let mut acc = T::ZERO;
        for (&wv, &xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[i] = acc;
    }
}

/// y[m] = W[m,n] · x[n] + b[m]
pub fn matvec_bias<T: Real>(w: &[T], x: &[T], b: &[T], m: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(w.len(), m * n);
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(b.len(), m);
    for i in 0..m {
        let row = &w[i * n..(i + 1) * n];
        let mut acc = T::ZERO;
        for (&wv, &xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[i] = acc + b[i];
    }
}

/// out += alpha * x
pub fn axpy<T: Real>(alpha: T, x: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Valid-padding output extent: floor((in - k) / stride) + 1.
pub fn conv_out_extent(input: usize, k: usize, stride: usize) -> usize {
    (input - k) / stride + 1
}

/// Unroll conv input patches: input [C,H,W] -> cols [C*k*k, OH*OW].
pub fn im2col<T: Real>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    cols: &mut [T],
) {
    let oh = conv_out_extent(h, k, stride);
    let ow = conv_out_extent(w, k, stride);
    debug_assert_eq!(cols.len(), c * k * k * oh * ow);
    let patch = oh * ow;
    for ch in 0..c {
        for km in 0..k {
            for kn in 0..k {
                let row = ((ch * k + km) * k + kn) * patch;
                for oy in 0..oh {
                    let iy = oy * stride + km;
                    let src = (ch * h + iy) * w + kn;
                    let dst = row + oy * ow;
                    for ox in 0..ow {
                        cols[dst + ox] = input[src + ox * stride];
                    }
                }
            }
        }
    }
}

/// Scatter-add of column gradients back to the input layout.
pub fn col2im_add<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    input_grad: &mut [T],
) {
    let oh = conv_out_extent(h, k, stride);
    let ow = conv_out_extent(w, k, stride);
    let patch = oh * ow;
    for ch in 0..c {
        for km in 0..k {
            for kn in 0..k {
                let row = ((ch * k + km) * k + kn) * patch;
                for oy in 0..oh {
                    let iy = oy * stride + km;
                    let dst = (ch * h + iy) * w + kn;
                    let src = row + oy * ow;
                    for ox in 0..ow {
                        input_grad[dst + ox * stride] += cols[src + ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip), valid padding.
/// input [C,H,W], kernels [D,C,k,k], bias [D] -> out [D,OH,OW].
pub fn conv2d_forward<T: Real>(
    input: &[T],
    kernels: &[T],
    bias: &[T],
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    k: usize,
    stride: usize,
    out: &mut [T],
) {
    let oh = conv_out_extent(h, k, stride);
    let ow = conv_out_extent(w, k, stride);
    let patch = oh * ow;
    let ckk = c * k * k;
    let mut cols = vec![T::ZERO; ckk * patch];
    im2col(input, c, h, w, k, stride, &mut cols);
    matmul(kernels, &cols, d, ckk, patch, out);
    for dd in 0..d {
        let bv = bias[dd];
        for o in &mut out[dd * patch..(dd + 1) * patch] {
            *o += bv;
        }
    }
}

/// Gradients of `conv2d_forward` w.r.t. input (optional), kernels and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    input: &[T],
    kernels: &[T],
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    k: usize,
    stride: usize,
    dout: &[T],
    dinput: Option<&mut [T]>,
    dkernels: &mut [T],
    dbias: &mut [T],
) {
    let oh = conv_out_extent(h, k, stride);
    let ow = conv_out_extent(w, k, stride);
    let patch = oh * ow;
    let ckk = c * k * k;

    for dd in 0..d {
        let mut acc = T::ZERO;
        for &g in &dout[dd * patch..(dd + 1) * patch] {
            acc += g;
        }
        dbias[dd] += acc;
    }

    let mut cols = vec![T::ZERO; ckk * patch];
    im2col(input, c, h, w, k, stride, &mut cols);

    // dK = dOut[D,patch] · colsᵀ
    let mut dk = vec![T::ZERO; d * ckk];
    matmul_transb(dout, &cols, d, patch, ckk, &mut dk);
    axpy(T::ONE, &dk, dkernels);

    // dcols = Kᵀ · dOut, scattered back to the input layout
    if let Some(dinput) = dinput {
        let mut dcols = vec![T::ZERO; ckk * patch];
        matmul_transa(kernels, dout, ckk, d, patch, &mut dcols);
        col2im_add(&dcols, c, h, w, k, stride, dinput);
    }
}

/// out = W[m,n]·x + b
pub fn fc_forward<T: Real>(x: &[T], w: &[T], b: &[T], m: usize, n: usize, out: &mut [T]) {
    matvec_bias(w, x, b, m, n, out);
}

pub fn fc_backward<T: Real>(
    x: &[T],
    w: &[T],
    m: usize,
    n: usize,
    dout: &[T],
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    for i in 0..m {
        let g = dout[i];
        db[i] += g;
        axpy(g, x, &mut dw[i * n..(i + 1) * n]);
        axpy(g, &w[i * n..(i + 1) * n], dx);
    }
}

pub fn relu_forward<T: Real>(x: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > T::ZERO { v } else { T::ZERO };
    }
}

/// dx += dout ⊙ 1[x > 0]
pub fn relu_backward<T: Real>(x: &[T], dout: &[T], dx: &mut [T]) {
    for ((d, &g), &v) in dx.iter_mut().zip(dout).zip(x) {
        if v > T::ZERO {
            *d += g;
        }
    }
}

/// Single recurrence step: h = u + Whᵀ·relu(h_prev) + b,
/// where `u` is the input projection Wx·x for this step.
pub fn rnn_step<T: Real>(u: &[T], wh: &[T], b: &[T], h_prev: &[T], m: usize, h_out: &mut [T]) {
    for i in 0..m {
        h_out[i] = u[i] + b[i];
    }
    for j in 0..m {
        let s = if h_prev[j] > T::ZERO { h_prev[j] } else { T::ZERO };
        if s != T::ZERO {
            axpy(s, &wh[j * m..(j + 1) * m], h_out);
        }
    }
}

/// Softmax with max-subtraction.
pub fn softmax<T: Real>(logits: &[T], out: &mut [T]) {
    let mut max = logits[0];
    for &v in logits {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::ZERO;
    for (o, &v) in out.iter_mut().zip(logits) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Jacobian-vector product of softmax: dlogits += s ⊙ (dout − Σ dout·s)
pub fn softmax_backward<T: Real>(softmax_out: &[T], dout: &[T], dlogits: &mut [T]) {
    let mut dot = T::ZERO;
    for (&g, &s) in dout.iter().zip(softmax_out) {
        dot += g * s;
    }
    for ((d, &s), &g) in dlogits.iter_mut().zip(softmax_out).zip(dout) {
        *d += s * (g - dot);
    }
}

/// Probability floor before taking the log in cross-entropy.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;

/// H = −log(p_label), with p clamped at `CROSS_ENTROPY_EPS`.
pub fn cross_entropy<T: Real>(probs: &[T], label: usize) -> T {
    let eps = T::from_f64(CROSS_ENTROPY_EPS);
    let p = probs[label].max(eps);
    -p.ln()
}

pub fn cross_entropy_backward<T: Real>(probs: &[T], label: usize, dout: T, dprobs: &mut [T]) {
    let eps = T::from_f64(CROSS_ENTROPY_EPS);
    let p = probs[label].max(eps);
    dprobs[label] += -dout / p;
}

/// ½ Σ (pred − target)²
pub fn half_l2<T: Real>(pred: &[T], target: &[T]) -> T {
    let mut acc = T::ZERO;
    for (&p, &t) in pred.iter().zip(target) {
        let r = p - t;
        acc += r * r;
    }
    acc * T::from_f64(0.5)
}

pub fn half_l2_backward<T: Real>(pred: &[T], target: &[T], dout: T, dpred: &mut [T]) {
    for ((d, &p), &t) in dpred.iter_mut().zip(pred).zip(target) {
        *d += dout * (p - t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small_known() {
        // [1 2; 3 4] · [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        matmul(&a, &b, 2, 2, 2, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_matmuls_agree_with_plain() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3x4
        let mut c = vec![0.0; 8];
        matmul(&a, &b, 2, 3, 4, &mut c);

        // A·B == A·(Bᵀ)ᵀ
        let mut bt = vec![0.0; 12]; // 4x3
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        let mut c2 = vec![0.0; 8];
        matmul_transb(&a, &bt, 2, 3, 4, &mut c2);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut at = vec![0.0; 6]; // 3x2
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        let mut c3 = vec![0.0; 8];
        matmul_transa(&at, &b, 2, 3, 4, &mut c3);
        for (x, y) in c.iter().zip(&c3) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_identity_kernel_copies_input() {
        let input: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let mut cols = vec![0.0; 9];
        im2col(&input, 1, 3, 3, 1, 1, &mut cols);
        assert_eq!(cols, input);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let logits = [3.0f64; 5];
        let mut out = [0.0; 5];
        softmax(&logits, &mut out);
        for &p in &out {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }
}
