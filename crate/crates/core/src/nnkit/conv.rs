//! 2D cross-correlation (im2col + GEMM) and 2x2 stride-2 transposed
//! convolution, with analytic backward passes.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2dSpec {
    /// Size-preserving 3x3 convolution at the given dilation.
    pub fn same(dilation: usize) -> Self {
        Self { stride: 1, padding: dilation, dilation }
    }

    pub fn pointwise() -> Self {
        Self { stride: 1, padding: 0, dilation: 1 }
    }

    /// 3x3 convolution halving even spatial sizes.
    pub fn strided() -> Self {
        Self { stride: 2, padding: 1, dilation: 1 }
    }

    fn out_size(&self, size: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = size + 2 * self.padding;
        (padded >= span && self.stride > 0).then(|| (padded - span) / self.stride + 1)
    }
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn geometry(x: &Tensor, weight: &Tensor, spec: Conv2dSpec) -> Result<Geometry> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(Error::Shape(format!("conv weight expects {wcin} input channels, input has {cin}")));
    }
    if spec.dilation == 0 || kh == 0 || kw == 0 {
        return Err(Error::Shape("degenerate convolution kernel".into()));
    }
    let (Some(oh), Some(ow)) = (spec.out_size(h, kh), spec.out_size(w, kw)) else {
        return Err(Error::Shape(format!("input {h}x{w} too small for kernel {kh}x{kw} with {spec:?}")));
    };
    Ok(Geometry { n, cin, h, w, cout, kh, kw, oh, ow })
}

/// Unfolds one sample into a `(cin*kh*kw) x (oh*ow)` column matrix.
fn im2col(x: &[f64], g: &Geometry, spec: Conv2dSpec, cols: &mut [f64]) {
    let p = g.oh * g.ow;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.padding as isize;
                    let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy as usize >= g.h {
                        dst_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kj * spec.dilation) as isize - spec.padding as isize;
                        *v = if ix < 0 || ix as usize >= g.w { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back, accumulating into the input gradient.
fn col2im(cols: &[f64], g: &Geometry, spec: Conv2dSpec, dx: &mut [f64]) {
    let p = g.oh * g.ow;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.padding as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * spec.stride + kj * spec.dilation) as isize - spec.padding as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c`, all row-major
/// unless the strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: slices are sized by the callers for the given strides; the
    // output does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of `x (n, cin, h, w)` with `weight (cout, cin, kh, kw)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
    let g = geometry(x, weight, spec)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(Error::Shape(format!("bias has {} entries for {} output channels", b.len(), g.cout)));
        }
    }
    let k = g.cin * g.kh * g.kw;
    let p = g.oh * g.ow;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let mut cols = vec![0.0; k * p];
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    for s in 0..g.n {
        im2col(&x.data()[s * in_stride..(s + 1) * in_stride], &g, spec, &mut cols);
        let dst = &mut out.data_mut()[s * out_stride..(s + 1) * out_stride];
        gemm(g.cout, k, p, weight.data(), (k, 1), &cols, (p, 1), 0.0, dst);
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(p).enumerate() {
                let bo = b.data()[o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, spec: Conv2dSpec, upstream: &Tensor) -> Result<Conv2dGrads> {
    let g = geometry(x, weight, spec)?;
    if upstream.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::Shape(format!("upstream gradient shape {:?} does not match conv output", upstream.shape())));
    }
    let k = g.cin * g.kh * g.kw;
    let p = g.oh * g.ow;
    let mut dx = Tensor::zeros_like(x);
    let mut dw = Tensor::zeros_like(weight);
    let mut db = Tensor::zeros(&[g.cout]);
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    for s in 0..g.n {
        let up = &upstream.data()[s * out_stride..(s + 1) * out_stride];
        for (o, chunk) in up.chunks(p).enumerate() {
            db.data_mut()[o] += chunk.iter().sum::<f64>();
        }
        im2col(&x.data()[s * in_stride..(s + 1) * in_stride], &g, spec, &mut cols);
        // dW += up (cout x p) * cols^T (p x k)
        gemm(g.cout, p, k, up, (p, 1), &cols, (1, p), 1.0, dw.data_mut());
        // dcols = W^T (k x cout) * up (cout x p)
        gemm(k, g.cout, p, weight.data(), (1, k), up, (p, 1), 0.0, &mut dcols);
        col2im(&dcols, &g, spec, &mut dx.data_mut()[s * in_stride..(s + 1) * in_stride]);
    }
    Ok(Conv2dGrads { input: dx, weight: dw, bias: db })
}

/// 2x2 stride-2 transposed convolution; `weight` is `(cin, cout, 2, 2)`.
///
/// `out[o, 2y+dy, 2x+dx] = b[o] + sum_i x[i, y, x] * w[i, o, dy, dx]`.
pub fn conv_transpose2x2(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, cin, h, w) = x.dims4()?;
    let (wcin, cout, kh, kw) = weight.dims4()?;
    if wcin != cin || kh != 2 || kw != 2 || bias.len() != cout {
        return Err(Error::Shape(format!(
            "transposed conv weight {:?} / bias {:?} incompatible with input {:?}",
            weight.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let hw = h * w;
    let m = cout * 4;
    let mut cols = vec![0.0; m * hw];
    let mut out = Tensor::zeros(&[n, cout, 2 * h, 2 * w]);
    let (oh, ow) = (2 * h, 2 * w);
    for s in 0..n {
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        // cols (m x hw) = W^T (m x cin) * X (cin x hw)
        gemm(m, cin, hw, weight.data(), (1, m), xs, (hw, 1), 0.0, &mut cols);
        let dst = &mut out.data_mut()[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        for o in 0..cout {
            let b = bias.data()[o];
            for dy in 0..2 {
                for dx in 0..2 {
                    let row = &cols[(o * 4 + dy * 2 + dx) * hw..(o * 4 + dy * 2 + dx + 1) * hw];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[o * oh * ow + (2 * y + dy) * ow + 2 * xx + dx] = row[y * w + xx] + b;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2x2_backward(x: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<Conv2dGrads> {
    let (n, cin, h, w) = x.dims4()?;
    let (_, cout, _, _) = weight.dims4()?;
    if upstream.shape() != [n, cout, 2 * h, 2 * w] {
        return Err(Error::Shape(format!("upstream gradient shape {:?} does not match transposed conv output", upstream.shape())));
    }
    let hw = h * w;
    let m = cout * 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut gcols = vec![0.0; m * hw];
    let mut dx = Tensor::zeros_like(x);
    let mut dw = Tensor::zeros_like(weight);
    let mut db = Tensor::zeros(&[cout]);
    for s in 0..n {
        let up = &upstream.data()[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        for o in 0..cout {
            db.data_mut()[o] += up[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
            for dy in 0..2 {
                for ddx in 0..2 {
                    let row = &mut gcols[(o * 4 + dy * 2 + ddx) * hw..(o * 4 + dy * 2 + ddx + 1) * hw];
                    for y in 0..h {
                        for xx in 0..w {
                            row[y * w + xx] = up[o * oh * ow + (2 * y + dy) * ow + 2 * xx + ddx];
                        }
                    }
                }
            }
        }
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        // dX (cin x hw) = W (cin x m) * gcols (m x hw)
        gemm(cin, m, hw, weight.data(), (m, 1), &gcols, (hw, 1), 0.0, &mut dx.data_mut()[s * cin * hw..(s + 1) * cin * hw]);
        // dW (cin x m) += X (cin x hw) * gcols^T (hw x m)
        gemm(cin, hw, m, xs, (hw, 1), &gcols, (1, hw), 1.0, dw.data_mut());
    }
    Ok(Conv2dGrads { input: dx, weight: dw, bias: db })
}
