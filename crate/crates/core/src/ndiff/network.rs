use super::layers::{Cache, Layer};
use super::{NdiffError, Tensor};

/// A sequential stack of layers.
///
/// [`Network::infer`] and [`Network::trace`]/[`Network::gradients`] take
/// `&self` and may run concurrently on shared parameters. [`Session`] wraps the
/// stateful forward/backward protocol that writes into gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Intermediate state recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
    output: Tensor,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Gradients for every parameter block (in layer order) and for the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    /// Zero gradients shaped like `net`'s parameters and an input of `input_len`.
    pub fn zeros_like(net: &Network, input_len: usize) -> Self {
        Self {
            blocks: net.parameters().map(|p| vec![0.0; p.len()]).collect(),
            input: vec![0.0; input_len],
        }
    }

    /// Adds parameter gradients of `other`; the input gradient is left alone.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (acc, g) in self.blocks.iter_mut().zip(&other.blocks) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in &mut self.blocks {
            block.iter_mut().for_each(|v| *v *= factor);
        }
        self.input.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Parameter tensors in layer order.
    pub fn parameters(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().filter_map(Layer::weight)
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().filter_map(Layer::weight_mut)
    }

    /// Human-readable names of the parameter blocks, e.g. `layer2.conv2d`.
    pub fn parameter_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.weight().is_some())
            .map(|(i, l)| format!("layer{i}.{}", l.kind().name()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().map(Tensor::len).sum()
    }

    /// Output shape for `input_shape`, validating every layer.
    pub fn output_shape(&self, input_shape: &[usize]) -> Result<Vec<usize>, NdiffError> {
        self.layers
            .iter()
            .enumerate()
            .try_fold(input_shape.to_vec(), |shape, (i, l)| l.output_shape(i, &shape))
    }

    /// Forward pass without retaining intermediates.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, NdiffError> {
        self.infer_prefix(input, self.layers.len())
    }

    /// Runs only the first `n_layers` layers.
    pub fn infer_prefix(&self, input: &Tensor, n_layers: usize) -> Result<Tensor, NdiffError> {
        self.output_shape(input.shape())?;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().take(n_layers).enumerate() {
            x = layer.forward(i, &x)?.0;
        }
        Ok(x)
    }

    /// Forward pass retaining what [`Network::gradients`] needs.
    pub fn trace(&self, input: &Tensor) -> Result<Trace, NdiffError> {
        self.trace_prefix(input, self.layers.len())
    }

    /// Traces only the first `n_layers` layers; [`Network::gradients`] then
    /// back-propagates from that layer's output.
    pub fn trace_prefix(&self, input: &Tensor, n_layers: usize) -> Result<Trace, NdiffError> {
        self.output_shape(input.shape())?;
        let mut caches = Vec::with_capacity(n_layers);
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().take(n_layers).enumerate() {
            let (y, cache) = layer.forward(i, &x)?;
            caches.push(cache);
            x = y;
        }
        Ok(Trace { caches, output: x })
    }

    /// Reverse-mode pass for a trace produced by this network.
    pub fn gradients(&self, trace: &Trace, output_grad: &[f64]) -> Result<Gradients, NdiffError> {
        if output_grad.len() != trace.output.len() {
            return Err(NdiffError::ShapeMismatch {
                layer: self.layers.len(),
                kind: "output_grad",
                expected: trace.output.shape().to_vec(),
                actual: vec![output_grad.len()],
            });
        }
        let mut grad = output_grad.to_vec();
        let mut blocks = Vec::new();
        let traced = &self.layers[..trace.caches.len()];
        // parameters of untraced layers get zero gradient
        for layer in self.layers[trace.caches.len()..].iter().rev() {
            if let Some(w) = layer.weight() {
                blocks.push(vec![0.0; w.len()]);
            }
        }
        for (layer, cache) in traced.iter().zip(&trace.caches).rev() {
            let (gx, gw) = layer.backward(cache, &grad);
            if let Some(gw) = gw {
                blocks.push(gw);
            }
            grad = gx;
        }
        blocks.reverse();
        Ok(Gradients {
            blocks,
            input: grad,
        })
    }

    /// Overwrites parameter data with `blocks`, e.g. from a finite-difference probe.
    pub fn set_parameters(&mut self, blocks: &[Vec<f64>]) {
        for (param, block) in self.parameters_mut().zip(blocks) {
            param.data_mut().copy_from_slice(block);
        }
    }

    /// Rounds every parameter to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for param in self.parameters_mut() {
            param
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = f64::from(*v as f32));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(Tensor::is_finite)
    }
}

/// Stateful forward/backward over an exclusively borrowed network.
///
/// `backward` stores parameter gradients in each weight tensor's grad buffer
/// and returns the input gradient.
pub struct Session<'a> {
    net: &'a mut Network,
    trace: Option<Trace>,
}

impl<'a> Session<'a> {
    pub fn new(net: &'a mut Network) -> Self {
        Self { net, trace: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, NdiffError> {
        let trace = self.net.trace(input)?;
        let out = trace.output.clone();
        self.trace = Some(trace);
        Ok(out)
    }

    pub fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor, NdiffError> {
        let trace = self.trace.as_ref().ok_or(NdiffError::BackwardBeforeForward)?;
        if output_grad.shape() != trace.output.shape() {
            return Err(NdiffError::ShapeMismatch {
                layer: self.net.layers.len(),
                kind: "output_grad",
                expected: trace.output.shape().to_vec(),
                actual: output_grad.shape().to_vec(),
            });
        }
        let grads = self.net.gradients(trace, output_grad.data())?;
        let input_shape = match trace.caches.first() {
            Some(Cache::Input(x)) => x.shape().to_vec(),
            Some(Cache::Pool { shape, .. }) => shape.clone(),
            Some(Cache::Normalize { input, .. }) => vec![input.len()],
            None => output_grad.shape().to_vec(),
        };
        for (param, g) in self.net.parameters_mut().zip(grads.blocks) {
            param.set_grad(g)?;
        }
        Tensor::new(input_shape, grads.input)
    }

    pub fn network(&self) -> &Network {
        self.net
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Network::new(vec![
            Layer::conv2d(&mut rng, 3, 4, 2),
            Layer::Relu,
            Layer::GlobalMaxPool,
            Layer::dense(&mut rng, 4, 5),
            Layer::L2Normalize,
        ])
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut net = small_net();
        let mut session = Session::new(&mut net);
        let g = Tensor::from_vec(vec![0.0; 5]);
        assert!(matches!(
            session.backward(&g),
            Err(NdiffError::BackwardBeforeForward)
        ));
    }

    #[test]
    fn session_fills_grad_buffers() {
        let mut net = small_net();
        let x = Tensor::new(vec![3, 6, 6], (0..108).map(|v| (v as f64).cos()).collect()).unwrap();
        let mut session = Session::new(&mut net);
        let y = session.forward(&x).unwrap();
        let gx = session.backward(&Tensor::from_vec(vec![1.0; y.len()])).unwrap();
        assert_eq!(gx.shape(), &[3, 6, 6]);
        assert!(net.parameters().all(|p| p.grad().is_some()));
    }

    #[test]
    fn backward_is_deterministic() {
        let net = small_net();
        let x = Tensor::new(vec![3, 5, 5], (0..75).map(|v| (v as f64 * 0.3).sin()).collect()).unwrap();
        let g = vec![0.3, -0.1, 0.2, 0.5, -0.7];
        let a = net.gradients(&net.trace(&x).unwrap(), &g).unwrap();
        let b = net.gradients(&net.trace(&x).unwrap(), &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_input_channels_rejected_up_front() {
        let net = small_net();
        let x = Tensor::zeros(vec![1, 6, 6]).unwrap();
        assert!(matches!(
            net.infer(&x),
            Err(NdiffError::ShapeMismatch { layer: 0, .. })
        ));
    }
}
