use rand::Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Fully connected layer, `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Spatial geometry shared by the two convolution kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// 2-D convolution over `[h, w, c]` activations. Weight layout is
/// `[kernel, kernel, in_channels, out_channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub geometry: ConvGeometry,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Transposed 2-D convolution (the adjoint of [`Conv2d`] with the same geometry).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub geometry: ConvGeometry,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    ConvTranspose2d(ConvTranspose2d),
    Relu,
    Sigmoid,
    Flatten,
    Reshape(Vec<usize>),
}

fn glorot<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape matches generated length")
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: glorot(rng, vec![outputs, inputs], inputs, outputs),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl ConvGeometry {
    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(NnError::InvalidLayer(format!("{self:?}")));
        }
        Ok(())
    }

    fn weight_shape(&self) -> Vec<usize> {
        vec![self.kernel, self.kernel, self.in_channels, self.out_channels]
    }

    fn conv_out(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    fn transpose_out(&self, size: usize) -> Option<usize> {
        ((size - 1) * self.stride + self.kernel).checked_sub(2 * self.padding)
            .filter(|&s| s > 0)
    }
}

impl Conv2d {
    pub fn new<R: Rng>(rng: &mut R, geometry: ConvGeometry) -> Result<Self> {
        geometry.validate()?;
        let k2 = geometry.kernel * geometry.kernel;
        Ok(Self {
            geometry,
            weight: glorot(
                rng,
                geometry.weight_shape(),
                k2 * geometry.in_channels,
                k2 * geometry.out_channels,
            ),
            bias: Tensor::zeros(vec![geometry.out_channels]),
        })
    }
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(rng: &mut R, geometry: ConvGeometry) -> Result<Self> {
        geometry.validate()?;
        let k2 = geometry.kernel * geometry.kernel;
        Ok(Self {
            geometry,
            weight: glorot(
                rng,
                geometry.weight_shape(),
                k2 * geometry.in_channels,
                k2 * geometry.out_channels,
            ),
            bias: Tensor::zeros(vec![geometry.out_channels]),
        })
    }
}

fn shape_error(layer: usize, expected: impl Into<String>, actual: &[usize]) -> NnError {
    NnError::Shape {
        layer,
        expected: expected.into(),
        actual: actual.to_vec(),
    }
}

fn image_dims(index: usize, shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    match shape {
        [h, w, c] if *c == channels && *h > 0 && *w > 0 => Ok((*h, *w)),
        _ => Err(shape_error(index, format!("[h, w, {channels}]"), shape)),
    }
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::ConvTranspose2d(_) => "conv_transpose2d",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Flatten => "flatten",
            Layer::Reshape(_) => "reshape",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::ConvTranspose2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::ConvTranspose2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    /// Output shape for a given input shape; `index` is only used for errors.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(shape_error(index, format!("[{}]", d.inputs()), input));
                }
                Ok(vec![d.outputs()])
            }
            Layer::Conv2d(c) => {
                let g = c.geometry;
                let (h, w) = image_dims(index, input, g.in_channels)?;
                match (g.conv_out(h), g.conv_out(w)) {
                    (Some(ho), Some(wo)) => Ok(vec![ho, wo, g.out_channels]),
                    _ => Err(shape_error(index, "image at least as large as the kernel", input)),
                }
            }
            Layer::ConvTranspose2d(c) => {
                let g = c.geometry;
                let (h, w) = image_dims(index, input, g.in_channels)?;
                match (g.transpose_out(h), g.transpose_out(w)) {
                    (Some(ho), Some(wo)) => Ok(vec![ho, wo, g.out_channels]),
                    _ => Err(shape_error(index, "positive transposed output size", input)),
                }
            }
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Reshape(shape) => {
                let want: usize = shape.iter().product();
                let have: usize = input.iter().product();
                if want != have {
                    return Err(shape_error(index, format!("{want} elements"), input));
                }
                Ok(shape.clone())
            }
        }
    }

    pub fn forward(&self, index: usize, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(index, input.shape())?;
        let x = input.data();
        let data = match self {
            Layer::Dense(d) => dense_forward(d, x),
            Layer::Conv2d(c) => conv_forward(c, input.shape(), &out_shape, x),
            Layer::ConvTranspose2d(c) => conv_t_forward(c, input.shape(), &out_shape, x),
            Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Layer::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Layer::Flatten | Layer::Reshape(_) => x.to_vec(),
        };
        Tensor::new(out_shape, data)
    }

    /// Propagates `grad_out` back through the layer. Parameter gradients are
    /// accumulated into the parameters' grad buffers; the input gradient is
    /// returned. `input`/`output` are the tensors seen in the forward pass.
    pub fn backward(&mut self, input: &Tensor, output: &Tensor, grad_out: &[f64]) -> Tensor {
        let x = input.data();
        let grad_in = match self {
            Layer::Dense(d) => dense_backward(d, x, grad_out),
            Layer::Conv2d(c) => conv_backward(c, input.shape(), output.shape(), x, grad_out),
            Layer::ConvTranspose2d(c) => {
                conv_t_backward(c, input.shape(), output.shape(), x, grad_out)
            }
            Layer::Relu => x
                .iter()
                .zip(grad_out)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::Sigmoid => output
                .data()
                .iter()
                .zip(grad_out)
                .map(|(&y, &g)| g * y * (1.0 - y))
                .collect(),
            Layer::Flatten | Layer::Reshape(_) => grad_out.to_vec(),
        };
        Tensor::new(input.shape().to_vec(), grad_in).expect("input gradient mirrors input")
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn dense_forward(d: &Dense, x: &[f64]) -> Vec<f64> {
    let n_in = d.inputs();
    let w = d.weight.data();
    d.bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn dense_backward(d: &mut Dense, x: &[f64], g: &[f64]) -> Vec<f64> {
    let n_in = d.inputs();
    let mut grad_in = vec![0.0; n_in];
    {
        let (w, gw) = d.weight.data_and_grad_mut();
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = &w[o * n_in..(o + 1) * n_in];
            let grow = &mut gw[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grow[i] += go * x[i];
                grad_in[i] += go * row[i];
            }
        }
    }
    let gb = d.bias.grad_mut();
    for (b, &go) in gb.iter_mut().zip(g) {
        *b += go;
    }
    grad_in
}

/// Visits every (output pixel, input pixel, kernel tap) triple of a strided
/// convolution. `out_dims` are the dims of the strided (output) side.
#[inline]
fn for_each_tap(
    g: &ConvGeometry,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    mut f: impl FnMut(usize, usize, usize),
) {
    let (h, w) = in_hw;
    let (ho, wo) = out_hw;
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    for oy in 0..ho {
        for ky in 0..k {
            let iy = (oy * s + ky) as isize - p;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for ox in 0..wo {
                for kx in 0..k {
                    let ix = (ox * s + kx) as isize - p;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    f(oy * wo + ox, iy as usize * w + ix as usize, ky * k + kx);
                }
            }
        }
    }
}

fn conv_forward(c: &Conv2d, in_shape: &[usize], out_shape: &[usize], x: &[f64]) -> Vec<f64> {
    let g = c.geometry;
    let (ci, co) = (g.in_channels, g.out_channels);
    let w = c.weight.data();
    let mut out = vec![0.0; out_shape.iter().product()];
    for px in out.chunks_mut(co) {
        px.copy_from_slice(c.bias.data());
    }
    for_each_tap(
        &g,
        (in_shape[0], in_shape[1]),
        (out_shape[0], out_shape[1]),
        |op, ip, tap| {
            let dst = &mut out[op * co..(op + 1) * co];
            for ch in 0..ci {
                let v = x[ip * ci + ch];
                if v == 0.0 {
                    continue;
                }
                let row = &w[(tap * ci + ch) * co..(tap * ci + ch + 1) * co];
                for (d, &wv) in dst.iter_mut().zip(row) {
                    *d += v * wv;
                }
            }
        },
    );
    out
}

fn conv_backward(
    c: &mut Conv2d,
    in_shape: &[usize],
    out_shape: &[usize],
    x: &[f64],
    grad_out: &[f64],
) -> Vec<f64> {
    let g = c.geometry;
    let (ci, co) = (g.in_channels, g.out_channels);
    let mut grad_in = vec![0.0; x.len()];
    {
        let (w, gw) = c.weight.data_and_grad_mut();
        for_each_tap(
            &g,
            (in_shape[0], in_shape[1]),
            (out_shape[0], out_shape[1]),
            |op, ip, tap| {
                let go = &grad_out[op * co..(op + 1) * co];
                for ch in 0..ci {
                    let base = (tap * ci + ch) * co;
                    let row = &w[base..base + co];
                    let grow = &mut gw[base..base + co];
                    let v = x[ip * ci + ch];
                    let mut acc = 0.0;
                    for o in 0..co {
                        acc += go[o] * row[o];
                        grow[o] += v * go[o];
                    }
                    grad_in[ip * ci + ch] += acc;
                }
            },
        );
    }
    let gb = c.bias.grad_mut();
    for px in grad_out.chunks(co) {
        for (b, &v) in gb.iter_mut().zip(px) {
            *b += v;
        }
    }
    grad_in
}

// The transposed convolution shares the tap structure of a convolution whose
// strided side is the *input*: input pixels play the role of `op` above.
fn conv_t_forward(
    c: &ConvTranspose2d,
    in_shape: &[usize],
    out_shape: &[usize],
    x: &[f64],
) -> Vec<f64> {
    let g = c.geometry;
    let (ci, co) = (g.in_channels, g.out_channels);
    let w = c.weight.data();
    let mut out = vec![0.0; out_shape.iter().product()];
    for px in out.chunks_mut(co) {
        px.copy_from_slice(c.bias.data());
    }
    for_each_tap(
        &g,
        (out_shape[0], out_shape[1]),
        (in_shape[0], in_shape[1]),
        |ip, op, tap| {
            let dst = &mut out[op * co..(op + 1) * co];
            for ch in 0..ci {
                let v = x[ip * ci + ch];
                if v == 0.0 {
                    continue;
                }
                let row = &w[(tap * ci + ch) * co..(tap * ci + ch + 1) * co];
                for (d, &wv) in dst.iter_mut().zip(row) {
                    *d += v * wv;
                }
            }
        },
    );
    out
}

fn conv_t_backward(
    c: &mut ConvTranspose2d,
    in_shape: &[usize],
    out_shape: &[usize],
    x: &[f64],
    grad_out: &[f64],
) -> Vec<f64> {
    let g = c.geometry;
    let (ci, co) = (g.in_channels, g.out_channels);
    let mut grad_in = vec![0.0; x.len()];
    {
        let (w, gw) = c.weight.data_and_grad_mut();
        for_each_tap(
            &g,
            (out_shape[0], out_shape[1]),
            (in_shape[0], in_shape[1]),
            |ip, op, tap| {
                let go = &grad_out[op * co..(op + 1) * co];
                for ch in 0..ci {
                    let base = (tap * ci + ch) * co;
                    let row = &w[base..base + co];
                    let grow = &mut gw[base..base + co];
                    let v = x[ip * ci + ch];
                    let mut acc = 0.0;
                    for o in 0..co {
                        acc += go[o] * row[o];
                        grow[o] += v * go[o];
                    }
                    grad_in[ip * ci + ch] += acc;
                }
            },
        );
    }
    let gb = c.bias.grad_mut();
    for px in grad_out.chunks(co) {
        for (b, &v) in gb.iter_mut().zip(px) {
            *b += v;
        }
    }
    grad_in
}
