//! 2D convolution (cross-correlation) with circular horizontal padding and
//! zero vertical padding.
//!
//! The range image is a 360-degree sweep, so the azimuth axis wraps; the
//! vertical axis does not. Stride-1 3x3 kernels (the only shape the
//! networks use) run through fused 9-tap row kernels over a horizontally
//! padded copy of the input, which keeps the inner loops contiguous and
//! autovectorizable; other shapes fall back to plain loops.

use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvDims {
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvDims {
    fn pad_v(&self) -> usize {
        (self.kh - 1) / 2
    }

    fn pad_h(&self) -> usize {
        (self.kw - 1) / 2
    }

    /// Width of a horizontally padded row.
    fn wp(&self) -> usize {
        self.w + 2 * self.pad_h()
    }
}

/// Copy one batch item into a circularly padded buffer
/// `(in_ch, h, w + 2*pad_h)` so kernel taps read contiguously.
fn pad_input(dims: &ConvDims, input: &[f64], out: &mut [f64]) {
    let (w, wp, ph) = (dims.w, dims.wp(), dims.pad_h());
    for c in 0..dims.in_ch {
        for y in 0..dims.h {
            let src = &input[(c * dims.h + y) * w..(c * dims.h + y + 1) * w];
            let dst = &mut out[(c * dims.h + y) * wp..(c * dims.h + y + 1) * wp];
            dst[..ph].copy_from_slice(&src[w - ph..]);
            dst[ph..ph + w].copy_from_slice(src);
            dst[ph + w..].copy_from_slice(&src[..ph]);
        }
    }
}

/// `acc[i] += sum_k w[k] * rows[k][i..]`, one pass, fixed tap count.
#[inline]
fn fma_taps(acc: &mut [f64], taps: &[(f64, &[f64])]) {
    let n = acc.len();
    match taps.len() {
        9 => {
            let (w0, r0) = taps[0];
            let (w1, r1) = taps[1];
            let (w2, r2) = taps[2];
            let (w3, r3) = taps[3];
            let (w4, r4) = taps[4];
            let (w5, r5) = taps[5];
            let (w6, r6) = taps[6];
            let (w7, r7) = taps[7];
            let (w8, r8) = taps[8];
            for i in 0..n {
                acc[i] += w0 * r0[i]
                    + w1 * r1[i]
                    + w2 * r2[i]
                    + w3 * r3[i]
                    + w4 * r4[i]
                    + w5 * r5[i]
                    + w6 * r6[i]
                    + w7 * r7[i]
                    + w8 * r8[i];
            }
        }
        6 => {
            let (w0, r0) = taps[0];
            let (w1, r1) = taps[1];
            let (w2, r2) = taps[2];
            let (w3, r3) = taps[3];
            let (w4, r4) = taps[4];
            let (w5, r5) = taps[5];
            for i in 0..n {
                acc[i] += w0 * r0[i] + w1 * r1[i] + w2 * r2[i] + w3 * r3[i] + w4 * r4[i] + w5 * r5[i];
            }
        }
        3 => {
            let (w0, r0) = taps[0];
            let (w1, r1) = taps[1];
            let (w2, r2) = taps[2];
            for i in 0..n {
                acc[i] += w0 * r0[i] + w1 * r1[i] + w2 * r2[i];
            }
        }
        _ => {
            for &(w, r) in taps {
                for i in 0..n {
                    acc[i] += w * r[i];
                }
            }
        }
    }
}

/// Stride-1 forward over the padded input.
fn forward_stride1(dims: &ConvDims, xpad: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let (h, w, wp) = (dims.h, dims.w, dims.wp());
    let (kh, kw) = (dims.kh, dims.kw);
    let pv = dims.pad_v();
    let ktaps = kh * kw;
    let mut taps: Vec<(f64, &[f64])> = Vec::with_capacity(ktaps);
    for co in 0..dims.out_ch {
        let out_plane = &mut out[co * h * w..(co + 1) * h * w];
        out_plane.fill(bias[co]);
        for ci in 0..dims.in_ch {
            let wbase = ((co * dims.in_ch + ci) * kh) * kw;
            let xplane = &xpad[ci * h * wp..(ci + 1) * h * wp];
            for oy in 0..h {
                taps.clear();
                for ky in 0..kh {
                    let iy = oy as isize + ky as isize - pv as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &xplane[iy as usize * wp..(iy as usize + 1) * wp];
                    for kx in 0..kw {
                        taps.push((weight[wbase + ky * kw + kx], &xrow[kx..kx + w]));
                    }
                }
                fma_taps(&mut out_plane[oy * w..(oy + 1) * w], &taps);
            }
        }
    }
}

/// Stride-1 input gradient: mirror of the forward with a zero-padded
/// output-gradient buffer, accumulated into a circularly folded input
/// gradient.
fn backward_input_stride1(
    dims: &ConvDims,
    grad_out: &[f64],
    weight: &[f64],
    grad_in: &mut [f64],
) {
    let (h, w, wp) = (dims.h, dims.w, dims.wp());
    let (kh, kw) = (dims.kh, dims.kw);
    let (pv, ph) = (dims.pad_v(), dims.pad_h());
    // pad grad_out rows with kw-1 zeros on each side so shifted reads stay
    // in bounds: gyp[j] corresponds to gy[j - (kw-1)]
    let gyp_w = w + 2 * (kw - 1);
    let mut gyp = vec![0.0; dims.out_ch * h * gyp_w];
    for co in 0..dims.out_ch {
        for y in 0..h {
            let src = &grad_out[(co * h + y) * w..(co * h + y + 1) * w];
            gyp[(co * h + y) * gyp_w + (kw - 1)..(co * h + y) * gyp_w + (kw - 1) + w]
                .copy_from_slice(src);
        }
    }

    let mut gxpad = vec![0.0; h * wp];
    let mut taps: Vec<(f64, &[f64])> = Vec::with_capacity(kh * kw);
    for ci in 0..dims.in_ch {
        gxpad.fill(0.0);
        for co in 0..dims.out_ch {
            let wbase = ((co * dims.in_ch + ci) * kh) * kw;
            let gplane = &gyp[co * h * gyp_w..(co + 1) * h * gyp_w];
            for iy in 0..h {
                taps.clear();
                for ky in 0..kh {
                    // forward read xpad row iy when oy = iy - ky + pv
                    let oy = iy as isize - ky as isize + pv as isize;
                    if oy < 0 || oy >= h as isize {
                        continue;
                    }
                    let gyrow = &gplane[oy as usize * gyp_w..(oy as usize + 1) * gyp_w];
                    for kx in 0..kw {
                        // gxpad[q] += w * gy[q - kx] = w * gyp[q + (kw-1) - kx]
                        taps.push((weight[wbase + ky * kw + kx], &gyrow[kw - 1 - kx..kw - 1 - kx + wp]));
                    }
                }
                fma_taps(&mut gxpad[iy * wp..(iy + 1) * wp], &taps);
            }
        }
        // fold the circular pad columns back onto the real row
        for y in 0..h {
            let row = &gxpad[y * wp..(y + 1) * wp];
            let dst = &mut grad_in[(ci * h + y) * w..(ci * h + y + 1) * w];
            for i in 0..w {
                dst[i] += row[ph + i];
            }
            for p in 0..ph {
                dst[w - ph + p] += row[p];
                dst[p] += row[w + ph + p];
            }
        }
    }
}

/// Stride-1 weight gradient: shifted dot products against the padded input.
fn backward_weight_stride1(
    dims: &ConvDims,
    grad_out: &[f64],
    xpad: &[f64],
    grad_w: &mut [f64],
) {
    let (h, w, wp) = (dims.h, dims.w, dims.wp());
    let (kh, kw) = (dims.kh, dims.kw);
    let pv = dims.pad_v();
    for co in 0..dims.out_ch {
        let gplane = &grad_out[co * h * w..(co + 1) * h * w];
        for ci in 0..dims.in_ch {
            let wbase = ((co * dims.in_ch + ci) * kh) * kw;
            let xplane = &xpad[ci * h * wp..(ci + 1) * h * wp];
            for ky in 0..kh {
                let mut sums = vec![0.0; kw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pv as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let gyrow = &gplane[oy * w..(oy + 1) * w];
                    let xrow = &xplane[iy as usize * wp..(iy as usize + 1) * wp];
                    match kw {
                        3 => {
                            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                            let (x0, x1, x2) = (&xrow[0..w], &xrow[1..1 + w], &xrow[2..2 + w]);
                            for i in 0..w {
                                let g = gyrow[i];
                                s0 += g * x0[i];
                                s1 += g * x1[i];
                                s2 += g * x2[i];
                            }
                            sums[0] += s0;
                            sums[1] += s1;
                            sums[2] += s2;
                        }
                        _ => {
                            for (kx, s) in sums.iter_mut().enumerate() {
                                let xs = &xrow[kx..kx + w];
                                let mut acc = 0.0;
                                for i in 0..w {
                                    acc += gyrow[i] * xs[i];
                                }
                                *s += acc;
                            }
                        }
                    }
                }
                for kx in 0..kw {
                    grad_w[wbase + ky * kw + kx] += sums[kx];
                }
            }
        }
    }
}

/// Reference-path forward for stride > 1; plain loops with explicit wrap.
fn forward_generic(dims: &ConvDims, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let (pv, ph) = (dims.pad_v() as isize, dims.pad_h() as isize);
    for co in 0..dims.out_ch {
        for oy in 0..dims.out_h {
            for ox in 0..dims.out_w {
                let mut acc = bias[co];
                for ci in 0..dims.in_ch {
                    for ky in 0..dims.kh {
                        let iy = (oy * dims.stride) as isize + ky as isize - pv;
                        if iy < 0 || iy >= dims.h as isize {
                            continue;
                        }
                        for kx in 0..dims.kw {
                            let ix = ((ox * dims.stride) as isize + kx as isize - ph)
                                .rem_euclid(dims.w as isize);
                            let wv = weight[((co * dims.in_ch + ci) * dims.kh + ky) * dims.kw + kx];
                            acc += wv * input[(ci * dims.h + iy as usize) * dims.w + ix as usize];
                        }
                    }
                }
                out[(co * dims.out_h + oy) * dims.out_w + ox] = acc;
            }
        }
    }
}

/// Reference-path backward for stride > 1.
#[allow(clippy::too_many_arguments)]
fn backward_generic(
    dims: &ConvDims,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_w: &mut [f64],
) {
    let (pv, ph) = (dims.pad_v() as isize, dims.pad_h() as isize);
    let mut gi = grad_in;
    for co in 0..dims.out_ch {
        for oy in 0..dims.out_h {
            for ox in 0..dims.out_w {
                let g = grad_out[(co * dims.out_h + oy) * dims.out_w + ox];
                for ci in 0..dims.in_ch {
                    for ky in 0..dims.kh {
                        let iy = (oy * dims.stride) as isize + ky as isize - pv;
                        if iy < 0 || iy >= dims.h as isize {
                            continue;
                        }
                        for kx in 0..dims.kw {
                            let ix = ((ox * dims.stride) as isize + kx as isize - ph)
                                .rem_euclid(dims.w as isize);
                            let widx = ((co * dims.in_ch + ci) * dims.kh + ky) * dims.kw + kx;
                            let xidx = (ci * dims.h + iy as usize) * dims.w + ix as usize;
                            grad_w[widx] += g * input[xidx];
                            if let Some(gi) = gi.as_deref_mut() {
                                gi[xidx] += g * weight[widx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution layer parameters. Kernel sides must be odd so the padded
/// output keeps the input size at stride 1.
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    in_ch: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
}

impl ConvLayer {
    /// Fan-in-scaled uniform initialization from the caller's RNG stream.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kh % 2 == 1 && kw % 2 == 1, "kernel sides must be odd");
        assert!(stride >= 1);
        use rand::Rng;
        let fan_in = in_ch * kh * kw;
        let bound = (3.0 / fan_in as f64).sqrt();
        let weight: Vec<f64> =
            (0..out_ch * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight: Tensor::param(&[out_ch, in_ch, kh, kw], weight),
            bias: Tensor::param(&[out_ch], vec![0.0; out_ch]),
            stride,
            in_ch,
            out_ch,
            kh,
            kw,
        }
    }

    /// Layer with explicit parameter values (tests, checkpoint loading).
    pub fn from_parts(weight: Tensor, bias: Tensor, stride: usize) -> Self {
        let ws = weight.shape();
        assert_eq!(ws.len(), 4);
        assert_eq!(bias.shape(), vec![ws[0]]);
        assert!(ws[2] % 2 == 1 && ws[3] % 2 == 1, "kernel sides must be odd");
        Self { out_ch: ws[0], in_ch: ws[1], kh: ws[2], kw: ws[3], weight, bias, stride }
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn dims_for(&self, input_shape: &[usize]) -> ConvDims {
        assert_eq!(input_shape.len(), 4, "conv input must be (B, C, H, W)");
        assert_eq!(input_shape[1], self.in_ch, "input channel mismatch");
        let (h, w) = (input_shape[2], input_shape[3]);
        assert!(w >= self.kw, "image narrower than the kernel");
        let pv = (self.kh - 1) / 2;
        let ph = (self.kw - 1) / 2;
        ConvDims {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kh: self.kh,
            kw: self.kw,
            stride: self.stride,
            h,
            w,
            out_h: (h + 2 * pv - self.kh) / self.stride + 1,
            out_w: (w + 2 * ph - self.kw) / self.stride + 1,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        let ishape = input.shape();
        let dims = self.dims_for(&ishape);
        let batch = ishape[0];
        let in_plane = dims.in_ch * dims.h * dims.w;
        let out_plane = dims.out_ch * dims.out_h * dims.out_w;

        let mut out = vec![0.0; batch * out_plane];
        input.with_values(|iv| {
            self.weight.with_values(|wv| {
                self.bias.with_values(|bv| {
                    if dims.stride == 1 {
                        let mut xpad = vec![0.0; dims.in_ch * dims.h * dims.wp()];
                        for b in 0..batch {
                            pad_input(&dims, &iv[b * in_plane..(b + 1) * in_plane], &mut xpad);
                            forward_stride1(
                                &dims,
                                &xpad,
                                wv,
                                bv,
                                &mut out[b * out_plane..(b + 1) * out_plane],
                            );
                        }
                    } else {
                        for b in 0..batch {
                            forward_generic(
                                &dims,
                                &iv[b * in_plane..(b + 1) * in_plane],
                                wv,
                                bv,
                                &mut out[b * out_plane..(b + 1) * out_plane],
                            );
                        }
                    }
                })
            })
        });

        let (p_in, p_w, p_b) = (input.clone(), self.weight.clone(), self.bias.clone());
        Tensor::from_op(
            vec![batch, dims.out_ch, dims.out_h, dims.out_w],
            out,
            "conv2d",
            vec![input.clone(), self.weight.clone(), self.bias.clone()],
            Box::new(move |_, g| {
                if p_b.requires_grad() {
                    p_b.with_grad_mut(|gb| {
                        for b in 0..batch {
                            for c in 0..dims.out_ch {
                                let n = dims.out_h * dims.out_w;
                                let base = b * out_plane + c * n;
                                gb[c] += g[base..base + n].iter().sum::<f64>();
                            }
                        }
                    });
                }
                let want_gi = p_in.requires_grad();
                let want_gw = p_w.requires_grad();
                if !want_gi && !want_gw {
                    return;
                }
                if dims.stride == 1 {
                    if want_gw {
                        // reads input values, writes weight grad: distinct nodes
                        p_in.with_values(|iv| {
                            p_w.with_grad_mut(|gw| {
                                let mut xpad = vec![0.0; dims.in_ch * dims.h * dims.wp()];
                                for b in 0..batch {
                                    pad_input(&dims, &iv[b * in_plane..(b + 1) * in_plane], &mut xpad);
                                    backward_weight_stride1(
                                        &dims,
                                        &g[b * out_plane..(b + 1) * out_plane],
                                        &xpad,
                                        gw,
                                    );
                                }
                            })
                        });
                    }
                    if want_gi {
                        // reads weight values, writes input grad: distinct nodes
                        p_w.with_values(|wv| {
                            p_in.with_grad_mut(|gi| {
                                for b in 0..batch {
                                    backward_input_stride1(
                                        &dims,
                                        &g[b * out_plane..(b + 1) * out_plane],
                                        wv,
                                        &mut gi[b * in_plane..(b + 1) * in_plane],
                                    );
                                }
                            })
                        });
                    }
                } else {
                    // reference path reads and writes the input node; copy
                    // the values out first
                    let iv = p_in.values();
                    p_w.with_values(|wv| {
                        p_w.with_grad_mut(|gw_unused| {
                            let _ = gw_unused;
                        });
                        let run = |gi: Option<&mut [f64]>, gw: &mut [f64], b: usize| {
                            backward_generic(
                                &dims,
                                &iv[b * in_plane..(b + 1) * in_plane],
                                wv,
                                &g[b * out_plane..(b + 1) * out_plane],
                                gi,
                                gw,
                            )
                        };
                        if want_gi {
                            p_w.with_grad_mut(|gw| {
                                p_in.with_grad_mut(|gi| {
                                    for b in 0..batch {
                                        run(
                                            Some(&mut gi[b * in_plane..(b + 1) * in_plane]),
                                            gw,
                                            b,
                                        );
                                    }
                                })
                            });
                        } else {
                            p_w.with_grad_mut(|gw| {
                                for b in 0..batch {
                                    run(None, gw, b);
                                }
                            });
                        }
                    });
                }
            }),
        )
    }
}
