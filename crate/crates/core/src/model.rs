//! Fully connected networks with cached forward passes and reverse-mode
//! gradients.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{self, Purpose};

const CHECKPOINT_MAGIC: &[u8; 4] = b"RLPM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "none",
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return None,
        })
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// The ReLU subgradient at zero is zero.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

/// Which of the supported network shapes to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Regression { hidden: usize },
    Autoencoder { latent: usize },
    MoonsClassifier { sigmoid_head: bool },
}

impl Architecture {
    pub fn build(self, d: usize, seed: u64) -> ModelParams {
        match self {
            Architecture::Regression { hidden } => build_regression_net(d, hidden, seed),
            Architecture::Autoencoder { latent } => build_autoencoder(d, latent, seed),
            Architecture::MoonsClassifier { sigmoid_head } => {
                build_moons_classifier(sigmoid_head, seed)
            }
        }
    }
}

impl ModelParams {
    /// Layers with weights and biases drawn uniformly from
    /// `[-1/√fan_in, 1/√fan_in]`, layer by layer, weights before biases.
    pub fn init_uniform(dims: &[usize], activations: &[Activation], seed: u64) -> Self {
        assert_eq!(dims.len(), activations.len() + 1, "one activation per layer");
        let mut rng = rng::stream(seed, Purpose::Init);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut weight = DenseMatrix::zeros(fan_out, fan_in);
                for v in weight.data_mut() {
                    *v = rng.gen_range(-bound..=bound);
                }
                let bias = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                Layer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("ModelParams::from_layers", "no layers"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::shape(
                    "ModelParams::from_layers",
                    format!("layer {k}: bias length {} vs {} outputs", l.bias.len(), l.output_dim()),
                ));
            }
            if k > 0 && layers[k - 1].output_dim() != l.input_dim() {
                return Err(Error::shape(
                    "ModelParams::from_layers",
                    format!(
                        "layer {k} takes {} inputs but layer {} emits {}",
                        l.input_dim(),
                        k - 1,
                        layers[k - 1].output_dim()
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// All parameters in layer order, each layer's weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Overwrites all parameters from the [`flatten`](Self::flatten) layout.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(
                "ModelParams::set_flat",
                format!("{} values for {} parameters", values.len(), self.param_count()),
            ));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weight.data_mut();
            w.copy_from_slice(&values[at..at + w.len()]);
            at += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Appends a sigmoid to the last layer if it is linear.
    pub fn with_sigmoid_head(mut self) -> Self {
        let last = self.layers.len() - 1;
        if self.layers[last].activation == Activation::Identity {
            self.layers[last].activation = Activation::Sigmoid;
        }
        self
    }

    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .layers
            .iter()
            .map(|l| format!("{}->{} {}", l.input_dim(), l.output_dim(), l.activation.name()))
            .collect();
        parts.join(", ")
    }
}

/// `d → hidden (relu) → 1`.
pub fn build_regression_net(d: usize, hidden: usize, seed: u64) -> ModelParams {
    ModelParams::init_uniform(
        &[d, hidden, 1],
        &[Activation::Relu, Activation::Identity],
        seed,
    )
}

/// `d → latent (relu) → d (sigmoid)`.
pub fn build_autoencoder(d: usize, latent: usize, seed: u64) -> ModelParams {
    ModelParams::init_uniform(
        &[d, latent, d],
        &[Activation::Relu, Activation::Sigmoid],
        seed,
    )
}

/// `2 → 50 (relu) → 50 (relu) → 2`, optionally sigmoid-terminated.
pub fn build_moons_classifier(sigmoid_head: bool, seed: u64) -> ModelParams {
    let head = if sigmoid_head {
        Activation::Sigmoid
    } else {
        Activation::Identity
    };
    ModelParams::init_uniform(
        &[2, 50, 50, 2],
        &[Activation::Relu, Activation::Relu, head],
        seed,
    )
}

/// Per-layer inputs and pre-activations saved by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DenseMatrix>,
    pre_activations: Vec<DenseMatrix>,
    output: DenseMatrix,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseMatrix {
        &self.output
    }

    pub fn into_output(self) -> DenseMatrix {
        self.output
    }
}

fn affine(layer: &Layer, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut z = x.matmul_t(&layer.weight)?;
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

fn check_input(params: &ModelParams, x: &DenseMatrix) -> Result<()> {
    if x.cols() != params.input_dim() {
        return Err(Error::shape(
            "forward",
            format!("input has {} columns, model expects {}", x.cols(), params.input_dim()),
        ));
    }
    Ok(())
}

/// Row-wise evaluation of the network on `x` (n × d), keeping what
/// [`backward`] needs.
pub fn forward(params: &ModelParams, x: &DenseMatrix) -> Result<ForwardCache> {
    check_input(params, x)?;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut current = x.clone();
    for layer in &params.layers {
        let z = affine(layer, &current)?;
        let a = z.map(|v| layer.activation.apply(v));
        inputs.push(current);
        pre_activations.push(z);
        current = a;
    }
    Ok(ForwardCache {
        inputs,
        pre_activations,
        output: current,
    })
}

/// Forward pass without the cache.
pub fn predict(params: &ModelParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    check_input(params, x)?;
    let mut current = x.clone();
    for layer in &params.layers {
        current = affine(layer, &current)?.map(|v| layer.activation.apply(v));
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGradient>,
    pub loss: f64,
}

impl GradientBundle {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weight: DenseMatrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
            loss: 0.0,
        }
    }

    /// `self += other`, including the loss.
    pub fn accumulate(&mut self, other: &GradientBundle) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("GradientBundle::accumulate", "layer count differs"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled_assign(1.0, &b.weight)?;
            if a.bias.len() != b.bias.len() {
                return Err(Error::shape("GradientBundle::accumulate", "bias length differs"));
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        self.loss += other.loss;
        Ok(())
    }

    /// Multiplies every gradient entry and the loss by `s`.
    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
        self.loss *= s;
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Gradients of a scalar loss whose derivative with respect to the network
/// output is `dl_dh`. The returned bundle's `loss` is zero; callers set it.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    dl_dh: &DenseMatrix,
) -> Result<GradientBundle> {
    if dl_dh.shape() != cache.output.shape() {
        return Err(Error::shape(
            "backward",
            format!("sensitivity {:?} vs output {:?}", dl_dh.shape(), cache.output.shape()),
        ));
    }
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::shape("backward", "cache does not match model depth"));
    }
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut upstream = dl_dh.clone();
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let z = &cache.pre_activations[k];
        let a = if k + 1 < params.layers.len() {
            &cache.inputs[k + 1]
        } else {
            &cache.output
        };
        let mut delta = upstream;
        for ((d, zv), av) in delta.data_mut().iter_mut().zip(z.data()).zip(a.data()) {
            *d *= layer.activation.derivative(*zv, *av);
        }
        let weight = delta.t_matmul(&cache.inputs[k])?;
        let mut bias = vec![0.0; layer.output_dim()];
        for r in 0..delta.rows() {
            for (b, v) in bias.iter_mut().zip(delta.row(r)) {
                *b += v;
            }
        }
        upstream = if k > 0 {
            delta.matmul(&layer.weight)?
        } else {
            DenseMatrix::zeros(0, 0)
        };
        grads.push(LayerGradient { weight, bias });
    }
    grads.reverse();
    Ok(GradientBundle {
        layers: grads,
        loss: 0.0,
    })
}

fn checkpoint_manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Writes `RLPM`, a version word, the layer count and per-layer
/// `(out, in, activation)` header, then every parameter as little-endian
/// f64 in [`ModelParams::flatten`] order. A `<path>.manifest` text file
/// describing the layers is written next to it.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes()).map_err(io)?;
    for l in &params.layers {
        w.write_all(&(l.output_dim() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(l.input_dim() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&[l.activation.code()]).map_err(io)?;
    }
    for v in params.flatten() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let manifest = checkpoint_manifest_path(path);
    let mut text = format!(
        "format = \"rlpm\"\nversion = {CHECKPOINT_VERSION}\nparameters = {}\nlayers = [\n",
        params.param_count()
    );
    for l in &params.layers {
        text.push_str(&format!(
            "  {{ inputs = {}, outputs = {}, activation = \"{}\" }},\n",
            l.input_dim(),
            l.output_dim(),
            l.activation.name()
        ));
    }
    text.push_str("]\n");
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let io = |e| Error::io(path, e);
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut bytes)
        .map_err(io)?;
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated checkpoint"))?;
        at += n;
        Ok(s)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let word = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]);
    let version = word(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let count = word(take(4)?) as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let out = word(take(4)?) as usize;
        let inp = word(take(4)?) as usize;
        let act = Activation::from_code(take(1)?[0]).ok_or_else(|| bad("unknown activation"))?;
        shapes.push((out, inp, act));
    }
    let mut layers = Vec::with_capacity(count);
    for (out, inp, activation) in shapes {
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let raw = take(n * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let weight = DenseMatrix::from_vec(out, inp, read(out * inp)?)?;
        let bias = read(out)?;
        layers.push(Layer {
            weight,
            bias,
            activation,
        });
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    ModelParams::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = rng::stream(seed, Purpose::Dataset);
        let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(n, d, data).unwrap()
    }

    /// Per-row, per-unit evaluation with plain loops.
    #[allow(clippy::needless_range_loop)]
    fn scalar_forward(params: &ModelParams, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &params.layers {
            let mut next = Vec::with_capacity(l.output_dim());
            for o in 0..l.output_dim() {
                let mut s = l.bias[o];
                for i in 0..l.input_dim() {
                    s += l.weight.get(o, i) * cur[i];
                }
                next.push(match l.activation {
                    Activation::Relu => if s > 0.0 { s } else { 0.0 },
                    Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                });
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn regression_net_shape_and_count() {
        let p = build_regression_net(8, 32, 1);
        assert_eq!(p.param_count(), 321);
        let out = predict(&p, &random_input(10, 8, 0)).unwrap();
        assert_eq!(out.shape(), (10, 1));
        assert_eq!(p, build_regression_net(8, 32, 1));
        assert_ne!(p, build_regression_net(8, 32, 2));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let p = build_autoencoder(100, 32, 3);
        let first = &p.layers[0];
        assert!(first.weight.data().iter().all(|v| v.abs() <= 0.1));
        let second = &p.layers[1];
        let bound = 1.0 / 32f64.sqrt();
        assert!(second.bias.iter().all(|v| v.abs() <= bound));
        assert_eq!(p.describe(), "100->32 relu, 32->100 sigmoid");
    }

    #[test]
    fn moons_head() {
        let p = build_moons_classifier(false, 0);
        assert_eq!(p.layers.len(), 3);
        assert_eq!(p.layers[2].activation, Activation::Identity);
        assert_eq!(p.clone().with_sigmoid_head(), build_moons_classifier(true, 0));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = build_regression_net(3, 4, 0);
        let zeros = vec![0.0; p.param_count()];
        p.set_flat(&zeros).unwrap();
        let out = predict(&p, &random_input(5, 3, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_of_zero() {
        let p = ModelParams::from_layers(vec![Layer {
            weight: DenseMatrix::zeros(1, 1),
            bias: vec![0.0],
            activation: Activation::Sigmoid,
        }])
        .unwrap();
        let out = predict(&p, &DenseMatrix::from_rows(&[vec![3.0]]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn matches_scalar_loop_evaluator() {
        for (p, d) in [
            (build_regression_net(6, 9, 4), 6),
            (build_autoencoder(5, 3, 5), 5),
            (build_moons_classifier(true, 6), 2),
        ] {
            let x = random_input(7, d, 9);
            let out = forward(&p, &x).unwrap().into_output();
            for r in 0..7 {
                let want = scalar_forward(&p, x.row(r));
                for (a, b) in out.row(r).iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn forward_shape_error() {
        let p = build_regression_net(3, 4, 0);
        assert!(matches!(
            forward(&p, &DenseMatrix::zeros(2, 4)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_sensitivity_zero_gradient() {
        let p = build_moons_classifier(false, 1);
        let cache = forward(&p, &random_input(4, 2, 2)).unwrap();
        let g = backward(&p, &cache, &DenseMatrix::zeros(4, 2)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_mse_closed_form() {
        let (n, d, c) = (9, 4, 2);
        let x = random_input(n, d, 3);
        let y = random_input(n, c, 4);
        let p = ModelParams::init_uniform(&[d, c], &[Activation::Identity], 5);
        let cache = forward(&p, &x).unwrap();
        let h = cache.output().clone();
        let sens = h.sub(&y).unwrap().scale(2.0 / n as f64);
        let g = backward(&p, &cache, &sens).unwrap();
        // dL/dW (c × d) = 2 (XW + b − Y)ᵀ X / n
        let expected = h.sub(&y).unwrap().t_matmul(&x).unwrap().scale(2.0 / n as f64);
        assert!(g.layers[0].weight.sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn final_layer_homogeneity() {
        let p = build_regression_net(4, 8, 7);
        let mut q = p.clone();
        let last = q.layers.last_mut().unwrap();
        last.weight = last.weight.scale(2.0);
        last.bias.iter_mut().for_each(|b| *b *= 2.0);
        let x = random_input(6, 4, 8);
        let a = predict(&p, &x).unwrap().scale(2.0);
        let b = predict(&q, &x).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn sigmoid_outputs_in_open_interval() {
        let p = build_autoencoder(6, 4, 1);
        let out = predict(&p, &random_input(20, 6, 2).scale(50.0)).unwrap();
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn finite_difference_on_weighted_sum() {
        // Loss = Σ G ⊙ H for a fixed G, so dL/dH = G.
        for seed in 0..3 {
            for p in [
                build_regression_net(3, 5, seed),
                build_autoencoder(4, 3, seed),
                build_moons_classifier(true, seed),
            ] {
                let d = p.input_dim();
                let x = random_input(5, d, seed + 10);
                let weights = random_input(5, p.output_dim(), seed + 20);
                let loss = |q: &ModelParams| {
                    let h = predict(q, &x).unwrap();
                    h.hadamard(&weights).unwrap().data().iter().sum::<f64>()
                };
                let cache = forward(&p, &x).unwrap();
                let g = backward(&p, &cache, &weights).unwrap().flatten();
                let theta = p.flatten();
                let mut q = p.clone();
                for i in 0..theta.len() {
                    let mut t = theta.clone();
                    t[i] += 1e-5;
                    q.set_flat(&t).unwrap();
                    let up = loss(&q);
                    t[i] -= 2e-5;
                    q.set_flat(&t).unwrap();
                    let down = loss(&q);
                    let numeric = (up - down) / 2e-5;
                    let err = (g[i] - numeric).abs() / numeric.abs().max(1.0);
                    assert!(err < 1e-5, "seed {seed} param {i}: {} vs {numeric}", g[i]);
                }
            }
        }
    }

    #[test]
    fn bundle_arithmetic() {
        let p = build_regression_net(2, 3, 0);
        let cache = forward(&p, &random_input(4, 2, 1)).unwrap();
        let mut g = backward(&p, &cache, &random_input(4, 1, 2)).unwrap();
        g.loss = 1.5;
        let mut acc = GradientBundle::zeros_like(&p);
        acc.accumulate(&g).unwrap();
        acc.accumulate(&g).unwrap();
        acc.scale(0.5);
        assert_eq!(acc, g);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let p = build_moons_classifier(true, 3);
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        let size = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(size, 12 + 3 * 9 + 8 * p.param_count());
        let manifest = std::fs::read_to_string(dir.path().join("model.bin.manifest")).unwrap();
        assert!(manifest.contains("parameters = 2802"));

        std::fs::write(&path, b"RLPX").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
