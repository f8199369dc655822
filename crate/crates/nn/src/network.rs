use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layer::{Conv2d, ConvGeometry, ConvTranspose2d, Dense, Layer};
use crate::tensor::Tensor;

/// An ordered stack of layers evaluated one sample at a time.
///
/// `forward` is a pure function of the parameters. Training goes through
/// `forward_train`, which records the activations needed by `backward`;
/// parameter gradients accumulate in each parameter's grad buffer until
/// [`Network::zero_grad`].
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    rng_seed: u64,
    trace: Option<Vec<Tensor>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.rng_seed == other.rng_seed && self.layers == other.layers
    }
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>, rng_seed: u64) -> Self {
        Self {
            layers,
            rng_seed,
            trace: None,
        }
    }

    pub fn builder(seed: u64) -> NetworkBuilder {
        NetworkBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            layers: Vec::new(),
            error: None,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Checks that `input` flows through every layer and returns the output shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(i, &shape)?;
        }
        Ok(shape)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        x.clear_grad();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(i, &x)?;
        }
        Ok(x)
    }

    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut x = input.clone();
        x.clear_grad();
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.forward(i, &x)?;
            acts.push(x);
            x = next;
        }
        acts.push(x.clone());
        self.trace = Some(acts);
        Ok(x)
    }

    /// Back-propagates `loss_grad` (d loss / d output) from the last
    /// `forward_train` call and returns d loss / d input.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        let acts = self.trace.take().ok_or(NnError::NoForward)?;
        let out = acts.last().expect("trace holds the output");
        if loss_grad.shape() != out.shape() {
            return Err(NnError::Shape {
                layer: self.layers.len(),
                expected: format!("{:?}", out.shape()),
                actual: loss_grad.shape().to_vec(),
            });
        }
        let mut grad = loss_grad.data().to_vec();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            grad = layer.backward(&acts[i], &acts[i + 1], &grad).into_data();
        }
        Tensor::new(acts[0].shape().to_vec(), grad)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Multiplies every accumulated gradient by `factor` (batch averaging).
    pub fn scale_grad(&mut self, factor: f64) {
        for p in self.params_mut() {
            for g in p.grad_mut() {
                *g *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

pub struct NetworkBuilder {
    rng: ChaCha8Rng,
    seed: u64,
    layers: Vec<Layer>,
    error: Option<NnError>,
}

impl NetworkBuilder {
    pub fn dense(mut self, inputs: usize, outputs: usize) -> Self {
        self.layers
            .push(Layer::Dense(Dense::new(&mut self.rng, inputs, outputs)));
        self
    }

    pub fn conv2d(mut self, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let geometry = ConvGeometry {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        };
        match Conv2d::new(&mut self.rng, geometry) {
            Ok(c) => self.layers.push(Layer::Conv2d(c)),
            Err(e) => self.error = self.error.or(Some(e)),
        }
        self
    }

    pub fn conv_transpose2d(mut self, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let geometry = ConvGeometry {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        };
        match ConvTranspose2d::new(&mut self.rng, geometry) {
            Ok(c) => self.layers.push(Layer::ConvTranspose2d(c)),
            Err(e) => self.error = self.error.or(Some(e)),
        }
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn sigmoid(mut self) -> Self {
        self.layers.push(Layer::Sigmoid);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.layers.push(Layer::Flatten);
        self
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        self.layers.push(Layer::Reshape(shape));
        self
    }

    pub fn build(self) -> Result<Network> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(Network::from_layers(self.layers, self.seed)),
        }
    }

    /// Builds and checks that `input_shape` is accepted by every layer.
    pub fn build_for(self, input_shape: &[usize]) -> Result<Network> {
        let net = self.build()?;
        net.output_shape(input_shape)?;
        Ok(net)
    }
}
