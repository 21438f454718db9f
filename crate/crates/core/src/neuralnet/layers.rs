use super::{ConvWeights, Layer, NetworkWeights, GEM_CLAMP};
use crate::par;
use crate::{Error, Result};

/// Channel-major activation map.
#[derive(Debug, Clone)]
pub(crate) struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn from_hwc(input: &[f64], h: usize, w: usize, c: usize) -> Self {
        let mut data = vec![0.0; c * h * w];
        for (p, px) in input.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + p] = v;
            }
        }
        Tensor { c, h, w, data }
    }

    fn to_hwc(&self) -> Vec<f64> {
        let hw = self.h * self.w;
        let mut out = vec![0.0; self.data.len()];
        for ch in 0..self.c {
            for p in 0..hw {
                out[p * self.c + ch] = self.data[ch * hw + p];
            }
        }
        out
    }
}

/// Everything the backward pass needs from a forward pass.
pub(crate) struct Tape {
    /// Input to every layer before pooling, in layer order.
    inputs: Vec<Tensor>,
    pooled: Vec<f64>,
    pub output: Vec<f64>,
}

/// Output rows `lo..hi` for which `o * stride + k - pad` stays inside `0..n`.
fn valid_range(out_len: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o * stride + k - pad <= n - 1  <=>  o <= (n - 1 + pad - k) / stride
    let hi = if n + pad > k {
        ((n - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_forward(cw: &ConvWeights, x: &Tensor) -> Tensor {
    let (k, s, p) = (cw.kernel, cw.stride, cw.padding);
    let oh = (x.h + 2 * p - k) / s + 1;
    let ow = (x.w + 2 * p - k) / s + 1;
    let mut out = vec![0.0; cw.out_channels * oh * ow];
    let plane = oh * ow;
    par::for_each_chunk_mut(&mut out, plane, |o, dst| {
        dst.fill(cw.bias[o]);
        for i in 0..cw.in_channels {
            let src = &x.data[i * x.h * x.w..(i + 1) * x.h * x.w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, x.h, ky, s, p);
                for kx in 0..k {
                    let wv = cw.weight[((o * cw.in_channels + i) * k + ky) * k + kx];
                    let (x_lo, x_hi) = valid_range(ow, x.w, kx, s, p);
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - p;
                        let row = &src[iy * x.w..(iy + 1) * x.w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for ox in x_lo..x_hi {
                            drow[ox] += wv * row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    });
    Tensor {
        c: cw.out_channels,
        h: oh,
        w: ow,
        data: out,
    }
}

/// Gradient with respect to the conv input given the gradient at its output.
fn conv_backward_input(cw: &ConvWeights, x: &Tensor, grad_out: &Tensor) -> Tensor {
    let (k, s, p) = (cw.kernel, cw.stride, cw.padding);
    let (oh, ow) = (grad_out.h, grad_out.w);
    let plane = x.h * x.w;
    let mut grad_in = vec![0.0; cw.in_channels * plane];
    par::for_each_chunk_mut(&mut grad_in, plane, |i, dst| {
        for o in 0..cw.out_channels {
            let g = &grad_out.data[o * oh * ow..(o + 1) * oh * ow];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(oh, x.h, ky, s, p);
                for kx in 0..k {
                    let wv = cw.weight[((o * cw.in_channels + i) * k + ky) * k + kx];
                    let (x_lo, x_hi) = valid_range(ow, x.w, kx, s, p);
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - p;
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        let drow = &mut dst[iy * x.w..(iy + 1) * x.w];
                        for ox in x_lo..x_hi {
                            drow[ox * s + kx - p] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });
    Tensor {
        c: x.c,
        h: x.h,
        w: x.w,
        data: grad_in,
    }
}

/// Generalized mean per channel over `n` spatial positions, with activations
/// floored at [`GEM_CLAMP`] before the power.
pub fn gem_pool(map: &[f64], channels: usize, n: usize, p: f64) -> Vec<f64> {
    (0..channels)
        .map(|c| {
            let mean = map[c * n..(c + 1) * n]
                .iter()
                .map(|&a| a.max(GEM_CLAMP).powf(p))
                .sum::<f64>()
                / n as f64;
            mean.powf(1.0 / p)
        })
        .collect()
}

fn check_finite(data: &[f64], layer: usize) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLayer { layer })
    }
}

impl NetworkWeights {
    pub(crate) fn run(&self, input: &[f64], h: usize, w: usize) -> Result<Tape> {
        let c = self.spec.input_channels;
        if input.len() != h * w * c {
            return Err(Error::mismatch(h * w * c, input.len()));
        }
        self.spec.output_shape(h, w)?;
        let mut x = Tensor::from_hwc(input, h, w, c);
        let offset = self.spec.input_offset;
        if offset != 0.0 {
            x.data.iter_mut().for_each(|v| *v -= offset);
        }
        check_finite(&x.data, 0)?;
        let mut inputs = Vec::with_capacity(self.spec.layers.len());
        let mut conv_idx = 0;
        let n_layers = self.spec.layers.len();
        for (li, layer) in self.spec.layers[..n_layers - 2].iter().enumerate() {
            let next = match layer {
                Layer::Conv { .. } => {
                    let y = conv_forward(&self.convs[conv_idx], &x);
                    conv_idx += 1;
                    y
                }
                Layer::Relu => Tensor {
                    data: x.data.iter().map(|v| v.max(0.0)).collect(),
                    ..x.clone()
                },
                _ => unreachable!("validated spec"),
            };
            check_finite(&next.data, li)?;
            inputs.push(std::mem::replace(&mut x, next));
        }
        let n = x.h * x.w;
        let pooled = gem_pool(&x.data, x.c, n, self.gem_p());
        check_finite(&pooled, n_layers - 2)?;
        let norm = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
        let output: Vec<f64> = pooled.iter().map(|v| v / norm).collect();
        check_finite(&output, n_layers - 1)?;
        inputs.push(x);
        Ok(Tape {
            inputs,
            pooled,
            output,
        })
    }

    /// Features of a raw interleaved buffer, without any clamping.
    pub fn forward_raw(&self, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        Ok(self.run(input, h, w)?.output)
    }

    /// Input gradient (interleaved like the input) of `grad_out · f(input)`.
    pub(crate) fn backward(&self, tape: &Tape, grad_out: &[f64]) -> Result<Vec<f64>> {
        let y = &tape.output;
        let g = &tape.pooled;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        // L2 normalisation: (I - y y^T) / |g|
        let dot: f64 = y.iter().zip(grad_out).map(|(a, b)| a * b).sum();
        let d_pooled: Vec<f64> = grad_out
            .iter()
            .zip(y)
            .map(|(go, yi)| (go - yi * dot) / norm)
            .collect();

        // generalized mean: d g_c / d a = g_c^(1-p) a^(p-1) / n above the floor
        let pooled_in = tape.inputs.last().expect("tape has pooled input");
        let p = self.gem_p();
        let n = pooled_in.h * pooled_in.w;
        let mut grad = Tensor {
            data: vec![0.0; pooled_in.data.len()],
            ..pooled_in.clone()
        };
        for c in 0..pooled_in.c {
            let scale = d_pooled[c] * g[c].powf(1.0 - p) / n as f64;
            let src = &pooled_in.data[c * n..(c + 1) * n];
            for (dst, &a) in grad.data[c * n..(c + 1) * n].iter_mut().zip(src) {
                if a > GEM_CLAMP {
                    *dst = scale * a.powf(p - 1.0);
                }
            }
        }

        let n_layers = self.spec.layers.len();
        let mut conv_idx = self.convs.len();
        for li in (0..n_layers - 2).rev() {
            let x = &tape.inputs[li];
            grad = match self.spec.layers[li] {
                Layer::Conv { .. } => {
                    conv_idx -= 1;
                    conv_backward_input(&self.convs[conv_idx], x, &grad)
                }
                Layer::Relu => Tensor {
                    data: grad
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
                        .collect(),
                    ..grad
                },
                _ => unreachable!("validated spec"),
            };
            check_finite(&grad.data, li)?;
        }
        Ok(grad.to_hwc())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gem_p1_with_clamped_zeros() {
        let g = gem_pool(&[4.0, 0.0, 0.0, 0.0], 1, 4, 1.0);
        assert!((g[0] - 1.0).abs() < 1e-5);
        assert!((g[0] - (4.0 + 3.0 * GEM_CLAMP) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn gem_large_p_approaches_max() {
        let g = gem_pool(&[0.1, 0.2, 0.9, 0.3], 1, 4, 60.0);
        assert!((g[0] - 0.9).abs() < 0.03);
    }

    #[test]
    fn conv_matches_naive_reference() {
        let cw = ConvWeights {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
            weight: (0..54).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect(),
            bias: vec![0.1, -0.2, 0.3],
        };
        let x = Tensor {
            c: 2,
            h: 5,
            w: 6,
            data: (0..60).map(|i| ((i * 13 % 17) as f64) / 17.0).collect(),
        };
        let y = conv_forward(&cw, &x);
        assert_eq!((y.h, y.w), (3, 3));
        for o in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = cw.bias[o];
                    for i in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                    acc += cw.weight[((o * 2 + i) * 3 + ky) * 3 + kx]
                                        * x.data[i * 30 + iy as usize * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data[o * 9 + oy * 3 + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x) - b, g> == <x, conv^T(g)>
        let cw = ConvWeights {
            in_channels: 2,
            out_channels: 2,
            kernel: 3,
            stride: 2,
            padding: 1,
            weight: (0..36).map(|i| ((i * 5 % 9) as f64 - 4.0) / 7.0).collect(),
            bias: vec![0.0, 0.0],
        };
        let x = Tensor {
            c: 2,
            h: 7,
            w: 4,
            data: (0..56).map(|i| ((i * 3 % 11) as f64) / 11.0).collect(),
        };
        let y = conv_forward(&cw, &x);
        let g = Tensor {
            data: (0..y.data.len()).map(|i| ((i * 5 % 7) as f64) - 3.0).collect(),
            ..y.clone()
        };
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let gi = conv_backward_input(&cw, &x, &g);
        let rhs: f64 = x.data.iter().zip(&gi.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn layout_round_trip() {
        let hwc: Vec<f64> = (0..24).map(f64::from).collect();
        let t = Tensor::from_hwc(&hwc, 2, 4, 3);
        assert_eq!(t.to_hwc(), hwc);
    }
}
