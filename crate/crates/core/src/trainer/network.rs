use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{self, Variable};
use crate::tensor::{Tensor, TensorError};

use super::arch::{ArchSpec, Layer};

/// Name and shape of a network parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

/// Parameter layout of an architecture: a weight and a bias per conv or
/// linear layer. Conv weights are `K×Cin×Cout`, linear weights `in×out`.
pub fn parameter_specs(arch: &ArchSpec) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for (i, layer) in arch.layers.iter().enumerate() {
        let (weight, width, fan_in) = match *layer {
            Layer::Conv { input, output, kernel, .. } => (vec![kernel, input, output], output, kernel * input),
            Layer::Linear { input, output } => (vec![input, output], output, input),
            Layer::Relu | Layer::LogSoftmax => continue,
        };
        out.push(ParamSpec { name: format!("layer{i}.weight"), shape: weight, fan_in });
        out.push(ParamSpec { name: format!("layer{i}.bias"), shape: vec![width], fan_in });
    }
    out
}

/// Uniform ±1/√fan_in initialization, drawn in parameter order from a
/// ChaCha8 stream seeded with `seed`.
pub fn init_parameters(arch: &ArchSpec, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    parameter_specs(arch)
        .into_iter()
        .map(|p| {
            let bound = 1.0 / (p.fan_in as f32).sqrt();
            let n: usize = p.shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
            Tensor::new(p.shape, data).expect("parameter shape")
        })
        .collect()
}

/// Map `T×D` features to `T'×N` emissions. `params` follow
/// [`parameter_specs`] order.
pub fn forward(arch: &ArchSpec, params: &[Variable], input: &Variable) -> Result<Variable, TensorError> {
    let mut x = input.clone();
    let mut p = params.iter();
    let mut next =
        || p.next().ok_or_else(|| TensorError::Contract("fewer parameters than the architecture needs".into()));
    for layer in &arch.layers {
        x = match *layer {
            Layer::Conv { stride, padding, .. } => {
                let (w, b) = (next()?, next()?);
                autograd::add_row(&autograd::conv1d(&x, w, stride, padding)?, b)?
            }
            Layer::Linear { .. } => {
                let (w, b) = (next()?, next()?);
                autograd::add_row(&autograd::matmul(&x, w)?, b)?
            }
            Layer::Relu => autograd::relu(&x),
            Layer::LogSoftmax => autograd::log_softmax(&x)?,
        };
    }
    Ok(x)
}
