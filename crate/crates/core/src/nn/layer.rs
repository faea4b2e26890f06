use serde::{Deserialize, Serialize};

use super::NnError;

/// Standard deviation of freshly initialized weights when a layer does not override it.
pub const DEFAULT_INIT_STD: f64 = 0.005;

/// One stage of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 2D convolution over a channel-first `[C, H, W]` activation with zero padding.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_std: Option<f64>,
    },
    /// Fully connected layer; flattens whatever it receives.
    Dense {
        inputs: usize,
        outputs: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init_std: Option<f64>,
    },
    Relu,
    /// Inverted dropout, active only in training mode.
    Dropout { p: f64 },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: [kernel, kernel],
            stride: 1,
            padding: 0,
            init_std: None,
        }
    }

    /// 3×3 convolution with stride 2 and padding 1: halves the spatial extents.
    pub fn conv_down(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: [3, 3],
            stride: 2,
            padding: 1,
            init_std: None,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense {
            inputs,
            outputs,
            init_std: None,
        }
    }

    /// Override the initialization standard deviation of a parameterized layer.
    pub fn with_init_std(mut self, std: f64) -> Self {
        match &mut self {
            LayerSpec::Conv { init_std, .. } | LayerSpec::Dense { init_std, .. } => {
                *init_std = Some(std)
            }
            _ => {}
        }
        self
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    pub fn init_std(&self) -> Option<f64> {
        match self {
            LayerSpec::Conv { init_std, .. } | LayerSpec::Dense { init_std, .. } => {
                Some(init_std.unwrap_or(DEFAULT_INIT_STD))
            }
            _ => None,
        }
    }

    /// Weight and bias shapes for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel[0], kernel[1]],
                vec![out_channels],
            )),
            LayerSpec::Dense {
                inputs, outputs, ..
            } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let fail = |reason: String| NnError::Specification { index, reason };
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let [c, h, w] = input else {
                    return Err(fail(format!("conv needs a [C, H, W] input, got {input:?}")));
                };
                if *c != in_channels {
                    return Err(fail(format!("expects {in_channels} channels, got {c}")));
                }
                if stride == 0 {
                    return Err(fail("stride must be positive".into()));
                }
                if kernel[0] == 0 || kernel[1] == 0 || kernel[0] > *h || kernel[1] > *w {
                    return Err(fail(format!(
                        "kernel {kernel:?} does not fit input extents {h}x{w}"
                    )));
                }
                let oh = (h + 2 * padding - kernel[0]) / stride + 1;
                let ow = (w + 2 * padding - kernel[1]) / stride + 1;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                let flat: usize = input.iter().product();
                if flat != inputs {
                    return Err(fail(format!("expects {inputs} inputs, got {flat}")));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(fail(format!("dropout probability {p} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
        }
    }
}

pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(spec: &LayerSpec, input: &[usize], output: &[usize]) -> Self {
        let LayerSpec::Conv {
            kernel,
            stride,
            padding,
            ..
        } = *spec
        else {
            unreachable!("conv geometry requested for a non-conv layer")
        };
        ConvGeometry {
            in_c: input[0],
            in_h: input[1],
            in_w: input[2],
            out_c: output[0],
            out_h: output[1],
            out_w: output[2],
            kh: kernel[0],
            kw: kernel[1],
            stride,
            padding,
        }
    }

    /// Valid kernel offsets `(k0, k1)` along one axis for output coordinate `o`.
    #[inline]
    fn span(o: usize, stride: usize, padding: usize, k: usize, extent: usize) -> (usize, usize) {
        let origin = (o * stride) as isize - padding as isize;
        let lo = (-origin).max(0) as usize;
        let hi = ((extent as isize - origin).min(k as isize)).max(0) as usize;
        (lo, hi.max(lo))
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let plane = self.in_h * self.in_w;
        let ksize = self.kh * self.kw;
        for o in 0..self.out_c {
            let wo = &weight[o * self.in_c * ksize..(o + 1) * self.in_c * ksize];
            for oy in 0..self.out_h {
                let (ky0, ky1) = Self::span(oy, self.stride, self.padding, self.kh, self.in_h);
                let iy0 = (oy * self.stride) as isize - self.padding as isize;
                for ox in 0..self.out_w {
                    let (kx0, kx1) =
                        Self::span(ox, self.stride, self.padding, self.kw, self.in_w);
                    let ix0 = (ox * self.stride) as isize - self.padding as isize;
                    let mut acc = bias[o];
                    for c in 0..self.in_c {
                        let xc = &input[c * plane..(c + 1) * plane];
                        let wc = &wo[c * ksize..(c + 1) * ksize];
                        for ky in ky0..ky1 {
                            let row = (iy0 + ky as isize) as usize * self.in_w;
                            let wrow = &wc[ky * self.kw..(ky + 1) * self.kw];
                            for kx in kx0..kx1 {
                                acc += wrow[kx] * xc[row + (ix0 + kx as isize) as usize];
                            }
                        }
                    }
                    out[(o * self.out_h + oy) * self.out_w + ox] = acc;
                }
            }
        }
    }

    /// Accumulate weight/bias gradients and write the input gradient.
    pub fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
        mut grad_in: Option<&mut [f64]>,
    ) {
        let plane = self.in_h * self.in_w;
        let ksize = self.kh * self.kw;
        if let Some(gi) = grad_in.as_deref_mut() {
            gi.iter_mut().for_each(|v| *v = 0.0);
        }
        for o in 0..self.out_c {
            let base = o * self.in_c * ksize;
            for oy in 0..self.out_h {
                let (ky0, ky1) = Self::span(oy, self.stride, self.padding, self.kh, self.in_h);
                let iy0 = (oy * self.stride) as isize - self.padding as isize;
                for ox in 0..self.out_w {
                    let g = grad_out[(o * self.out_h + oy) * self.out_w + ox];
                    if g == 0.0 {
                        continue;
                    }
                    grad_bias[o] += g;
                    let (kx0, kx1) =
                        Self::span(ox, self.stride, self.padding, self.kw, self.in_w);
                    let ix0 = (ox * self.stride) as isize - self.padding as isize;
                    for c in 0..self.in_c {
                        let woff = base + c * ksize;
                        for ky in ky0..ky1 {
                            let row = c * plane + (iy0 + ky as isize) as usize * self.in_w;
                            let xs = row + ix0.wrapping_add(kx0 as isize) as usize;
                            let ws = woff + ky * self.kw + kx0;
                            let len = kx1 - kx0;
                            let gw = &mut grad_weight[ws..ws + len];
                            for (k, gwk) in gw.iter_mut().enumerate() {
                                *gwk += g * input[xs + k];
                            }
                            if let Some(gi) = grad_in.as_deref_mut() {
                                let wr = &weight[ws..ws + len];
                                for (k, wk) in wr.iter().enumerate() {
                                    gi[xs + k] += g * wk;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &weight[o * n_in..(o + 1) * n_in];
        *slot = bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub(crate) fn dense_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    grad_in: &mut [f64],
) {
    let n_in = input.len();
    grad_in.iter_mut().for_each(|v| *v = 0.0);
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &weight[o * n_in..(o + 1) * n_in];
        let grow = &mut grad_weight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * input[i];
            grad_in[i] += g * row[i];
        }
    }
}
