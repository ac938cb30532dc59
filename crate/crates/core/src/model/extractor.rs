use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, RngStream, Scalar};

/// One affine layer `x·W + b`, `W` stored as `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: RealMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: RealMatrix::zeros(inputs, outputs),
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// Parameters of the feature extractor: affine layers with rectifier
/// activations between them and none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams<T> {
    layers: Vec<DenseLayer<T>>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input of every layer; entry 0 is the batch itself.
    inputs: Vec<RealMatrix<T>>,
    features: RealMatrix<T>,
}

impl<T> ForwardCache<T> {
    pub fn features(&self) -> &RealMatrix<T> {
        &self.features
    }
}

impl<T: Scalar> ExtractorParams<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("extractor needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape(
                    "ExtractorParams::new",
                    format!("bias of length {} in layer {i}", layer.outputs()),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].outputs() != layer.inputs() {
                return Err(Error::shape(
                    "ExtractorParams::new",
                    format!("layer {i} input width {}", layers[i - 1].outputs()),
                    layer.inputs(),
                ));
            }
            if !layer.is_finite() {
                return Err(Error::NonFinite(format!("extractor layer {i}")));
            }
        }
        Ok(Self { layers })
    }

    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with fan-in `n` is drawn from `U(-1/√n, 1/√n)`.
    ///
    /// `widths` lists every width from input to feature dimension, so
    /// `[m, h1, h2, d]` gives a two-hidden-layer network.
    pub fn init(widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract(format!(
                "extractor widths must list at least two positive widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || T::lit((2.0 * rng.uniform() - 1.0) * bound);
                let weight = RealMatrix::from_fn(fan_in, fan_out, |_, _| draw());
                let bias = (0..fan_out).map(|_| draw()).collect();
                DenseLayer { weight, bias }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Widths from input to feature dimension.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::outputs))
            .collect()
    }

    pub fn zeros_like(&self) -> Vec<DenseLayer<T>> {
        self.layers.iter().map(DenseLayer::zeros_like).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Stable 64-bit FNV-1a digest of shapes and parameter bits. Used to tag
    /// features with the extractor that produced them.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for layer in &self.layers {
            eat(layer.inputs() as u64);
            eat(layer.outputs() as u64);
            for &w in layer.weight.as_slice().iter().chain(&layer.bias) {
                eat(w.as_f64().to_bits());
            }
        }
        h
    }

    fn check_input(&self, x: &RealMatrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "extract_features",
                format!("{} input columns", self.input_dim()),
                x.cols(),
            ));
        }
        Ok(())
    }

    pub fn extract_features(&self, x: &RealMatrix<T>) -> Result<RealMatrix<T>> {
        Ok(self.forward(x)?.features)
    }

    pub fn forward(&self, x: &RealMatrix<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.matmul(&layer.weight)?;
            for r in 0..z.rows() {
                for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if i < last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        Ok(ForwardCache {
            inputs,
            features: current,
        })
    }

    /// Parameter gradients given `∂L/∂features` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_features: &RealMatrix<T>) -> Result<Vec<DenseLayer<T>>> {
        grad_features.expect_shape(
            "ExtractorParams::backward",
            cache.features.rows(),
            cache.features.cols(),
        )?;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_features.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weight = input.t_matmul(&delta)?;
            let bias = delta.column_sums();
            if i > 0 {
                let mut next = delta.matmul_t(&layer.weight)?;
                // rectifier mask: hidden activations are zero exactly where inactive
                for (g, &a) in next.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                }
                delta = next;
            }
            grads.push(DenseLayer { weight, bias });
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Forward pass of `params` on the batch `x` (`B × m`), giving `B × d` features.
pub fn extract_features<T: Scalar>(params: &ExtractorParams<T>, x: &RealMatrix<T>) -> Result<RealMatrix<T>> {
    params.extract_features(x)
}
