//! Dense multilayer perceptrons in 64-bit floats with exact reverse-mode gradients.
//!
//! Forward passes accumulate every output element in a fixed order that does not
//! depend on batch size, so a row evaluated alone is bit-identical to the same row
//! evaluated inside a batch.

mod adam;
mod io;
mod kernels;

pub use adam::{AdamConfig, AdamState};
pub use io::{paths, Bundle, Manifest, NamedArray};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputActivation {
    #[default]
    None,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub input_activation: InputActivation,
}

impl MlpSpec {
    /// `hidden` layers with `hidden_act`, then optional linear layers, then an
    /// identity output layer.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        hidden_act: Activation,
        linear: &[usize],
        output: usize,
    ) -> Self {
        let layers = hidden
            .iter()
            .map(|&width| LayerSpec {
                width,
                activation: hidden_act,
            })
            .chain(linear.iter().chain([&output]).map(|&width| LayerSpec {
                width,
                activation: Activation::Identity,
            }))
            .collect();
        Self {
            input_dim,
            layers,
            input_activation: InputActivation::None,
        }
    }

    pub fn with_input_activation(mut self, act: InputActivation) -> Self {
        self.input_activation = act;
        self
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    pub fn validate(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::InvalidInput("MLP needs at least one layer".into()))?;
        if last.activation != Activation::Identity {
            return Err(Error::InvalidInput("last MLP layer must be identity".into()));
        }
        if self.input_dim == 0 || self.layers.iter().any(|l| l.width == 0) {
            return Err(Error::InvalidInput("MLP widths must be positive".into()));
        }
        Ok(())
    }

    fn fan_ins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(|l| l.width))
            .zip(self.layers.iter().map(|l| l.width))
    }
}

/// One affine layer. `weight` is row-major `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }
}

/// Parameters (or a gradient of the same shape) for an [`MlpSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            layers: spec.fan_ins().map(|(i, o)| Dense::zeros(i, o)).collect(),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        params
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        self.layers.len() == spec.layers.len()
            && self
                .layers
                .iter()
                .zip(spec.fan_ins())
                .all(|(l, (i, o))| l.fan_in == i && l.fan_out == o)
    }

    /// Tensors in the order weight0, bias0, weight1, bias1, ...
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().flatten().all(|v| v.is_finite())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Row-major batch of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "batch row",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

/// Intermediate values retained for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer (post input-activation for layer 0).
    inputs: Vec<Batch>,
    /// Pre-activation of each layer.
    pre: Vec<Batch>,
    output: Batch,
}

impl ForwardCache {
    pub fn output(&self) -> &Batch {
        &self.output
    }
}

/// Single-vector forward pass.
pub fn forward(params: &MlpParams, spec: &MlpSpec, input: &[f64]) -> Result<Vec<f64>> {
    let batch = Batch {
        rows: 1,
        cols: input.len(),
        data: input.to_vec(),
    };
    Ok(forward_batch(params, spec, &batch)?.data)
}

pub fn forward_batch(params: &MlpParams, spec: &MlpSpec, input: &Batch) -> Result<Batch> {
    check_input(params, spec, input)?;
    let mut x = apply_input_activation(spec, input);
    for (layer, ls) in params.layers.iter().zip(&spec.layers) {
        let mut z = kernels::affine(&x, layer);
        if ls.activation != Activation::Identity {
            z.data.iter_mut().for_each(|v| *v = ls.activation.apply(*v));
        }
        x = z;
    }
    Ok(x)
}

pub fn forward_cached(params: &MlpParams, spec: &MlpSpec, input: &Batch) -> Result<ForwardCache> {
    check_input(params, spec, input)?;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut x = apply_input_activation(spec, input);
    for (layer, ls) in params.layers.iter().zip(&spec.layers) {
        let z = kernels::affine(&x, layer);
        let mut y = z.clone();
        if ls.activation != Activation::Identity {
            y.data.iter_mut().for_each(|v| *v = ls.activation.apply(*v));
        }
        inputs.push(x);
        pre.push(z);
        x = y;
    }
    Ok(ForwardCache {
        inputs,
        pre,
        output: x,
    })
}

/// Gradient of a scalar loss with respect to all parameters, given the loss
/// gradient with respect to the network output.
pub fn backward(
    params: &MlpParams,
    spec: &MlpSpec,
    cache: &ForwardCache,
    d_output: &Batch,
) -> Result<MlpParams> {
    if d_output.rows != cache.output.rows || d_output.cols != cache.output.cols {
        return Err(Error::DimensionMismatch {
            context: "backward output gradient",
            expected: cache.output.rows * cache.output.cols,
            actual: d_output.rows * d_output.cols,
        });
    }
    let mut grads = MlpParams::zeros(spec);
    let mut delta = d_output.clone();
    for li in (0..params.layers.len()).rev() {
        let act = spec.layers[li].activation;
        if act != Activation::Identity {
            // output of layer li is the input of li + 1, or the network output
            let y = cache.inputs.get(li + 1).unwrap_or(&cache.output);
            for ((d, &z), &yv) in delta.data.iter_mut().zip(&cache.pre[li].data).zip(&y.data) {
                *d *= act.derivative(z, yv);
            }
        }
        kernels::accumulate_grads(&cache.inputs[li], &delta, &mut grads.layers[li]);
        if li > 0 {
            delta = kernels::backprop_input(&delta, &params.layers[li]);
        }
    }
    Ok(grads)
}

/// Sum-of-squared-errors loss and its exact gradient.
pub fn loss_and_grad(
    params: &MlpParams,
    spec: &MlpSpec,
    inputs: &Batch,
    targets: &Batch,
) -> Result<(f64, MlpParams)> {
    let cache = forward_cached(params, spec, inputs)?;
    let out = cache.output();
    if targets.rows != out.rows || targets.cols != out.cols {
        return Err(Error::DimensionMismatch {
            context: "loss targets",
            expected: out.rows * out.cols,
            actual: targets.rows * targets.cols,
        });
    }
    let mut d = Batch::zeros(out.rows, out.cols);
    let mut loss = 0.0;
    for ((g, &y), &t) in d.data.iter_mut().zip(&out.data).zip(&targets.data) {
        let e = y - t;
        loss += e * e;
        *g = 2.0 * e;
    }
    let grads = backward(params, spec, &cache, &d)?;
    Ok((loss, grads))
}

fn check_input(params: &MlpParams, spec: &MlpSpec, input: &Batch) -> Result<()> {
    if input.cols != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "mlp input",
            expected: spec.input_dim,
            actual: input.cols,
        });
    }
    if !params.matches(spec) {
        return Err(Error::InvalidInput("parameters do not match MLP spec".into()));
    }
    Ok(())
}

fn apply_input_activation(spec: &MlpSpec, input: &Batch) -> Batch {
    match spec.input_activation {
        InputActivation::None => input.clone(),
        InputActivation::Tanh => Batch {
            rows: input.rows,
            cols: input.cols,
            data: input.data.iter().map(|v| v.tanh()).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_two_one() -> (MlpSpec, MlpParams) {
        let spec = MlpSpec::new(2, &[2], Activation::Tanh, &[], 1);
        let mut p = MlpParams::zeros(&spec);
        // w[k][j] with k = input, j = output
        p.layers[0].weight = vec![0.5, -1.0, 0.25, 2.0];
        p.layers[0].bias = vec![0.1, -0.2];
        p.layers[1].weight = vec![1.5, -0.5];
        p.layers[1].bias = vec![0.3];
        (spec, p)
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(3, &[4, 4], Activation::Elu, &[], 2);
        let p = MlpParams::zeros(&spec);
        assert_eq!(forward(&p, &spec, &[0.3, -0.7, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(3, &[], Activation::Elu, &[], 3);
        let mut p = MlpParams::zeros(&spec);
        for i in 0..3 {
            p.layers[0].weight[i * 3 + i] = 1.0;
        }
        let x = [0.25, -4.0, 9.5];
        assert_eq!(forward(&p, &spec, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn hand_computed_two_two_one() {
        let (spec, p) = two_two_one();
        let x = [0.4, -0.6];
        let h0 = (0.4 * 0.5 + -0.6 * 0.25 + 0.1f64).tanh();
        let h1 = (0.4 * -1.0 + -0.6 * 2.0 - 0.2f64).tanh();
        let expected = 1.5 * h0 - 0.5 * h1 + 0.3;
        let got = forward(&p, &spec, &x).unwrap()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn leading_tanh_squashes_input() {
        let spec = MlpSpec::new(1, &[], Activation::Elu, &[], 1)
            .with_input_activation(InputActivation::Tanh);
        let mut p = MlpParams::zeros(&spec);
        p.layers[0].weight[0] = 1.0;
        assert_eq!(forward(&p, &spec, &[50.0]).unwrap(), vec![50f64.tanh()]);
    }

    #[test]
    fn elu_negative_branch() {
        let spec = MlpSpec::new(1, &[1], Activation::Elu, &[], 1);
        let mut p = MlpParams::zeros(&spec);
        p.layers[0].weight[0] = 1.0;
        p.layers[1].weight[0] = 1.0;
        assert_eq!(forward(&p, &spec, &[-2.0]).unwrap(), vec![(-2f64).exp() - 1.0]);
        assert_eq!(forward(&p, &spec, &[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let spec = MlpSpec::new(3, &[4], Activation::Elu, &[], 2);
        let p = MlpParams::zeros(&spec);
        assert!(forward(&p, &spec, &[1.0, 2.0]).is_err());
        let other = MlpSpec::new(3, &[5], Activation::Elu, &[], 2);
        assert!(forward(&p, &other, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = MlpSpec::new(100, &[30], Activation::Elu, &[], 4);
        let a = MlpParams::init(&spec, 42);
        assert_eq!(a, MlpParams::init(&spec, 42));
        assert_ne!(a, MlpParams::init(&spec, 43));
        assert!(a.layers[0].weight.iter().all(|w| w.abs() <= 0.1));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let bound = 1.0 / 30f64.sqrt();
        assert!(a.layers[1].weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn validate_requires_identity_output() {
        let mut spec = MlpSpec::new(2, &[3], Activation::Elu, &[], 1);
        assert!(spec.validate().is_ok());
        spec.layers[1].activation = Activation::Tanh;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn perfect_targets_give_zero_loss_and_grad() {
        let spec = MlpSpec::new(3, &[5, 5], Activation::Elu, &[], 2);
        let p = MlpParams::init(&spec, 1);
        let x = Batch::from_rows(&[[0.1, 0.2, 0.3], [-0.5, 0.0, 0.9]], 3).unwrap();
        let y = forward_batch(&p, &spec, &x).unwrap();
        let (loss, g) = loss_and_grad(&p, &spec, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_doubles_loss_and_grad() {
        let spec = MlpSpec::new(2, &[4], Activation::Tanh, &[3], 2);
        let p = MlpParams::init(&spec, 9);
        let rows = [[0.3, -0.1], [0.8, 0.5]];
        let t_rows = [[1.0, 0.0], [-0.5, 0.2]];
        let x = Batch::from_rows(&rows, 2).unwrap();
        let t = Batch::from_rows(&t_rows, 2).unwrap();
        let x2 = Batch::from_rows(&[rows[0], rows[1], rows[0], rows[1]], 2).unwrap();
        let t2 = Batch::from_rows(&[t_rows[0], t_rows[1], t_rows[0], t_rows[1]], 2).unwrap();
        let (l1, g1) = loss_and_grad(&p, &spec, &x, &t).unwrap();
        let (l2, g2) = loss_and_grad(&p, &spec, &x2, &t2).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (a, b) in g1.tensors().flatten().zip(g2.tensors().flatten()) {
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn row_result_independent_of_batch() {
        let spec = MlpSpec::new(6, &[33, 17], Activation::Elu, &[9], 5);
        let p = MlpParams::init(&spec, 5);
        let rows: Vec<Vec<f64>> = (0..13)
            .map(|i| (0..6).map(|j| ((i * 7 + j * 3) as f64).sin()).collect())
            .collect();
        let batch = forward_batch(&p, &spec, &Batch::from_rows(&rows, 6).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(forward(&p, &spec, r).unwrap(), batch.row(i));
        }
    }
}
