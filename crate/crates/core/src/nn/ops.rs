//! Layer forward and backward kernels.
//!
//! Convolutions use cross-correlation indexing (output(x,y) sums
//! input(x+p, y+q) over the kernel) and are lowered to GEMM through an
//! im2col patch matrix. All math is f64.

use super::{Activation, Padding};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2dSpec {
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: Padding,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv3dSpec {
    pub filters: usize,
    pub kernel_d: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: Padding,
    pub activation: Activation,
}

/// C[m,n] += A[m,k] * B[k,n], with optional logical transposes of the
/// row-major operands.
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
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
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn axis_geometry(extent: usize, kernel: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if extent < kernel {
                Err(Error::ShapeMismatch {
                    context: "valid convolution".into(),
                    expected: format!("input extent >= kernel {kernel}"),
                    got: format!("{extent}"),
                })
            } else {
                Ok((extent - kernel + 1, 0))
            }
        }
        Padding::Same => Ok((extent, (kernel - 1) / 2)),
    }
}

fn im2col2d(
    input: &[f64],
    (h, w, c): (usize, usize, usize),
    (p, q): (usize, usize),
    (pad_t, pad_l): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<f64> {
    let patch = p * q * c;
    let mut col = vec![0.0f64; out_h * out_w * patch];
    for y in 0..out_h {
        for x in 0..out_w {
            let base = (y * out_w + x) * patch;
            for pp in 0..p {
                let sy = y + pp;
                if sy < pad_t || sy - pad_t >= h {
                    continue;
                }
                let sy = sy - pad_t;
                for qq in 0..q {
                    let sx = x + qq;
                    if sx < pad_l || sx - pad_l >= w {
                        continue;
                    }
                    let sx = sx - pad_l;
                    let src = (sy * w + sx) * c;
                    let dst = base + (pp * q + qq) * c;
                    col[dst..dst + c].copy_from_slice(&input[src..src + c]);
                }
            }
        }
    }
    col
}

fn col2im2d(
    col: &[f64],
    (h, w, c): (usize, usize, usize),
    (p, q): (usize, usize),
    (pad_t, pad_l): (usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<f64> {
    let patch = p * q * c;
    let mut input = vec![0.0f64; h * w * c];
    for y in 0..out_h {
        for x in 0..out_w {
            let base = (y * out_w + x) * patch;
            for pp in 0..p {
                let sy = y + pp;
                if sy < pad_t || sy - pad_t >= h {
                    continue;
                }
                let sy = sy - pad_t;
                for qq in 0..q {
                    let sx = x + qq;
                    if sx < pad_l || sx - pad_l >= w {
                        continue;
                    }
                    let sx = sx - pad_l;
                    let dst = (sy * w + sx) * c;
                    let src = base + (pp * q + qq) * c;
                    for cc in 0..c {
                        input[dst + cc] += col[src + cc];
                    }
                }
            }
        }
    }
    input
}

fn check_conv2d_shapes(input: &Tensor, weights: &Tensor, bias: &[f64], spec: &Conv2dSpec) -> Result<()> {
    let bad = |expected: String, got: String| Error::ShapeMismatch {
        context: "conv2d".into(),
        expected,
        got,
    };
    if input.dims.len() != 3 {
        return Err(bad("3-d input H x W x C".into(), format!("{:?}", input.dims)));
    }
    let c = input.dims[2];
    let want = vec![spec.kernel_h, spec.kernel_w, c, spec.filters];
    if weights.dims != want {
        return Err(bad(format!("weights {want:?}"), format!("{:?}", weights.dims)));
    }
    if bias.len() != spec.filters {
        return Err(bad(format!("bias [{}]", spec.filters), format!("[{}]", bias.len())));
    }
    Ok(())
}

/// 2D convolution: out(x,y,f) = g(b_f + sum_{p,q,k} w(p,q,k,f) in(x+p,y+q,k)).
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    spec: &Conv2dSpec,
) -> Result<Tensor> {
    check_conv2d_shapes(input, weights, bias, spec)?;
    let (h, w, c) = (input.dims[0], input.dims[1], input.dims[2]);
    let (out_h, pad_t) = axis_geometry(h, spec.kernel_h, spec.padding)?;
    let (out_w, pad_l) = axis_geometry(w, spec.kernel_w, spec.padding)?;
    let f = spec.filters;

    let col = im2col2d(
        &input.data,
        (h, w, c),
        (spec.kernel_h, spec.kernel_w),
        (pad_t, pad_l),
        (out_h, out_w),
    );
    let mut out = vec![0.0f64; out_h * out_w * f];
    for chunk in out.chunks_exact_mut(f) {
        chunk.copy_from_slice(bias);
    }
    gemm_acc(
        out_h * out_w,
        spec.kernel_h * spec.kernel_w * c,
        f,
        &col,
        false,
        &weights.data,
        false,
        &mut out,
    );
    for v in out.iter_mut() {
        *v = spec.activation.apply(*v);
    }
    Tensor::from_vec(vec![out_h, out_w, f], out)
}

/// Gradients for conv2d. `d_output` is dL/d(activated output); weight and
/// bias gradients accumulate into the provided slices; the return value is
/// dL/d(input).
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    output: &Tensor,
    d_output: &[f64],
    spec: &Conv2dSpec,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Result<Tensor> {
    check_conv2d_shapes(input, weights, bias_like(d_bias, spec.filters)?, spec)?;
    let (h, w, c) = (input.dims[0], input.dims[1], input.dims[2]);
    let (out_h, pad_t) = axis_geometry(h, spec.kernel_h, spec.padding)?;
    let (out_w, pad_l) = axis_geometry(w, spec.kernel_w, spec.padding)?;
    let f = spec.filters;
    let patch = spec.kernel_h * spec.kernel_w * c;
    let m = out_h * out_w;

    let mut dz = vec![0.0f64; m * f];
    for (i, g) in dz.iter_mut().enumerate() {
        *g = d_output[i] * spec.activation.derivative_from_output(output.data[i]);
    }
    for row in dz.chunks_exact(f) {
        for (bf, &g) in d_bias.iter_mut().zip(row) {
            *bf += g;
        }
    }

    let col = im2col2d(
        &input.data,
        (h, w, c),
        (spec.kernel_h, spec.kernel_w),
        (pad_t, pad_l),
        (out_h, out_w),
    );
    // dW[patch, f] += col^T[patch, m] . dz[m, f]
    gemm_acc(patch, m, f, &col, true, &dz, false, d_weights);
    // dcol[m, patch] = dz[m, f] . W^T[f, patch]
    let mut dcol = vec![0.0f64; m * patch];
    gemm_acc(m, f, patch, &dz, false, &weights.data, true, &mut dcol);
    let d_input = col2im2d(
        &dcol,
        (h, w, c),
        (spec.kernel_h, spec.kernel_w),
        (pad_t, pad_l),
        (out_h, out_w),
    );
    Tensor::from_vec(vec![h, w, c], d_input)
}

fn bias_like(d_bias: &[f64], filters: usize) -> Result<&[f64]> {
    if d_bias.len() != filters {
        return Err(Error::ShapeMismatch {
            context: "conv bias gradient".into(),
            expected: format!("[{filters}]"),
            got: format!("[{}]", d_bias.len()),
        });
    }
    Ok(d_bias)
}

fn check_conv3d_shapes(input: &Tensor, weights: &Tensor, bias: &[f64], spec: &Conv3dSpec) -> Result<()> {
    let bad = |expected: String, got: String| Error::ShapeMismatch {
        context: "conv3d".into(),
        expected,
        got,
    };
    if input.dims.len() != 4 {
        return Err(bad("4-d input L x H x W x C".into(), format!("{:?}", input.dims)));
    }
    let c = input.dims[3];
    let want = vec![spec.kernel_d, spec.kernel_h, spec.kernel_w, c, spec.filters];
    if weights.dims != want {
        return Err(bad(format!("weights {want:?}"), format!("{:?}", weights.dims)));
    }
    if bias.len() != spec.filters {
        return Err(bad(format!("bias [{}]", spec.filters), format!("[{}]", bias.len())));
    }
    Ok(())
}

fn im2col3d(
    input: &[f64],
    (l, h, w, c): (usize, usize, usize, usize),
    (d, p, q): (usize, usize, usize),
    (pad_f, pad_t, pad_l): (usize, usize, usize),
    (out_l, out_h, out_w): (usize, usize, usize),
) -> Vec<f64> {
    let patch = d * p * q * c;
    let mut col = vec![0.0f64; out_l * out_h * out_w * patch];
    for z in 0..out_l {
        for y in 0..out_h {
            for x in 0..out_w {
                let base = ((z * out_h + y) * out_w + x) * patch;
                for dd in 0..d {
                    let sz = z + dd;
                    if sz < pad_f || sz - pad_f >= l {
                        continue;
                    }
                    let sz = sz - pad_f;
                    for pp in 0..p {
                        let sy = y + pp;
                        if sy < pad_t || sy - pad_t >= h {
                            continue;
                        }
                        let sy = sy - pad_t;
                        for qq in 0..q {
                            let sx = x + qq;
                            if sx < pad_l || sx - pad_l >= w {
                                continue;
                            }
                            let sx = sx - pad_l;
                            let src = ((sz * h + sy) * w + sx) * c;
                            let dst = base + ((dd * p + pp) * q + qq) * c;
                            col[dst..dst + c].copy_from_slice(&input[src..src + c]);
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im3d(
    col: &[f64],
    (l, h, w, c): (usize, usize, usize, usize),
    (d, p, q): (usize, usize, usize),
    (pad_f, pad_t, pad_l): (usize, usize, usize),
    (out_l, out_h, out_w): (usize, usize, usize),
) -> Vec<f64> {
    let patch = d * p * q * c;
    let mut input = vec![0.0f64; l * h * w * c];
    for z in 0..out_l {
        for y in 0..out_h {
            for x in 0..out_w {
                let base = ((z * out_h + y) * out_w + x) * patch;
                for dd in 0..d {
                    let sz = z + dd;
                    if sz < pad_f || sz - pad_f >= l {
                        continue;
                    }
                    let sz = sz - pad_f;
                    for pp in 0..p {
                        let sy = y + pp;
                        if sy < pad_t || sy - pad_t >= h {
                            continue;
                        }
                        let sy = sy - pad_t;
                        for qq in 0..q {
                            let sx = x + qq;
                            if sx < pad_l || sx - pad_l >= w {
                                continue;
                            }
                            let sx = sx - pad_l;
                            let dst = ((sz * h + sy) * w + sx) * c;
                            let src = base + ((dd * p + pp) * q + qq) * c;
                            for cc in 0..c {
                                input[dst + cc] += col[src + cc];
                            }
                        }
                    }
                }
            }
        }
    }
    input
}

/// 3D convolution over L x H x W x C with a D x P x Q kernel (temporal
/// extent first).
pub fn conv3d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    spec: &Conv3dSpec,
) -> Result<Tensor> {
    check_conv3d_shapes(input, weights, bias, spec)?;
    let (l, h, w, c) = (input.dims[0], input.dims[1], input.dims[2], input.dims[3]);
    let (out_l, pad_f) = axis_geometry(l, spec.kernel_d, spec.padding)?;
    let (out_h, pad_t) = axis_geometry(h, spec.kernel_h, spec.padding)?;
    let (out_w, pad_l) = axis_geometry(w, spec.kernel_w, spec.padding)?;
    let f = spec.filters;

    let col = im2col3d(
        &input.data,
        (l, h, w, c),
        (spec.kernel_d, spec.kernel_h, spec.kernel_w),
        (pad_f, pad_t, pad_l),
        (out_l, out_h, out_w),
    );
    let m = out_l * out_h * out_w;
    let mut out = vec![0.0f64; m * f];
    for chunk in out.chunks_exact_mut(f) {
        chunk.copy_from_slice(bias);
    }
    gemm_acc(
        m,
        spec.kernel_d * spec.kernel_h * spec.kernel_w * c,
        f,
        &col,
        false,
        &weights.data,
        false,
        &mut out,
    );
    for v in out.iter_mut() {
        *v = spec.activation.apply(*v);
    }
    Tensor::from_vec(vec![out_l, out_h, out_w, f], out)
}

/// Gradients for conv3d; mirrors [`conv2d_backward`].
pub fn conv3d_backward(
    input: &Tensor,
    weights: &Tensor,
    output: &Tensor,
    d_output: &[f64],
    spec: &Conv3dSpec,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Result<Tensor> {
    let (l, h, w, c) = (input.dims[0], input.dims[1], input.dims[2], input.dims[3]);
    let (out_l, pad_f) = axis_geometry(l, spec.kernel_d, spec.padding)?;
    let (out_h, pad_t) = axis_geometry(h, spec.kernel_h, spec.padding)?;
    let (out_w, pad_l) = axis_geometry(w, spec.kernel_w, spec.padding)?;
    let f = spec.filters;
    let patch = spec.kernel_d * spec.kernel_h * spec.kernel_w * c;
    let m = out_l * out_h * out_w;

    let mut dz = vec![0.0f64; m * f];
    for (i, g) in dz.iter_mut().enumerate() {
        *g = d_output[i] * spec.activation.derivative_from_output(output.data[i]);
    }
    for row in dz.chunks_exact(f) {
        for (bf, &g) in d_bias.iter_mut().zip(row) {
            *bf += g;
        }
    }
    let col = im2col3d(
        &input.data,
        (l, h, w, c),
        (spec.kernel_d, spec.kernel_h, spec.kernel_w),
        (pad_f, pad_t, pad_l),
        (out_l, out_h, out_w),
    );
    gemm_acc(patch, m, f, &col, true, &dz, false, d_weights);
    let mut dcol = vec![0.0f64; m * patch];
    gemm_acc(m, f, patch, &dz, false, &weights.data, true, &mut dcol);
    let d_input = col2im3d(
        &dcol,
        (l, h, w, c),
        (spec.kernel_d, spec.kernel_h, spec.kernel_w),
        (pad_f, pad_t, pad_l),
        (out_l, out_h, out_w),
    );
    Tensor::from_vec(vec![l, h, w, c], d_input)
}

/// 2x2-style max pooling with floor division of odd extents (21 -> 10).
/// Returns the pooled map and, per output element, the flat input index of
/// the winning sample (first maximum wins on ties).
pub fn maxpool2d(input: &Tensor, pool_h: usize, pool_w: usize) -> Result<(Tensor, Vec<usize>)> {
    if input.dims.len() != 3 {
        return Err(Error::ShapeMismatch {
            context: "maxpool2d".into(),
            expected: "3-d input H x W x C".into(),
            got: format!("{:?}", input.dims),
        });
    }
    let (h, w, c) = (input.dims[0], input.dims[1], input.dims[2]);
    let (out_h, out_w) = (h / pool_h, w / pool_w);
    let mut out = vec![0.0f64; out_h * out_w * c];
    let mut argmax = vec![0usize; out_h * out_w * c];
    for y in 0..out_h {
        for x in 0..out_w {
            for cc in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for py in 0..pool_h {
                    for px in 0..pool_w {
                        let idx = ((y * pool_h + py) * w + (x * pool_w + px)) * c + cc;
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (y * out_w + x) * c + cc;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(vec![out_h, out_w, c], out)?, argmax))
}

/// Routes pooled gradients back to the winning input positions.
pub fn maxpool2d_backward(argmax: &[usize], d_output: &[f64], input_dims: &[usize]) -> Tensor {
    let mut d_input = Tensor::zeros(input_dims.to_vec());
    for (o, &src) in argmax.iter().enumerate() {
        d_input.data[src] += d_output[o];
    }
    d_input
}

/// Fully connected layer: out_j = g(b_j + sum_k w[j,k] in_k).
pub fn dense_forward(
    input: &[f64],
    weights: &Tensor,
    bias: &[f64],
    activation: Activation,
) -> Result<Vec<f64>> {
    let (units, in_len) = (weights.dims[0], weights.dims[1]);
    if input.len() != in_len || bias.len() != units {
        return Err(Error::ShapeMismatch {
            context: "dense".into(),
            expected: format!("input [{in_len}], bias [{units}]"),
            got: format!("input [{}], bias [{}]", input.len(), bias.len()),
        });
    }
    let mut out = Vec::with_capacity(units);
    for j in 0..units {
        let row = &weights.data[j * in_len..(j + 1) * in_len];
        let z: f64 = bias[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        out.push(activation.apply(z));
    }
    Ok(out)
}

pub fn dense_backward(
    input: &[f64],
    weights: &Tensor,
    output: &[f64],
    d_output: &[f64],
    activation: Activation,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let (units, in_len) = (weights.dims[0], weights.dims[1]);
    let mut d_input = vec![0.0f64; in_len];
    for j in 0..units {
        let dz = d_output[j] * activation.derivative_from_output(output[j]);
        d_bias[j] += dz;
        let wrow = &weights.data[j * in_len..(j + 1) * in_len];
        let grad_row = &mut d_weights[j * in_len..(j + 1) * in_len];
        for k in 0..in_len {
            grad_row[k] += dz * input[k];
            d_input[k] += dz * wrow[k];
        }
    }
    d_input
}

/// Numerically stable softmax: exponentials of max-shifted scores.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
