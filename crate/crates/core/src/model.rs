//! Featurizer, linear predictor and discriminator networks, plus SGD.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Matrix, Tape, Var};
use crate::rng::Rng;

/// Fully connected layer `x W + b` with `W` stored input-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Dense {
            weight: rng.uniform_matrix(input, output, -bound, bound),
            bias: rng.uniform_matrix(1, output, -bound, bound),
        }
    }
}

/// Stack of [`Dense`] layers with ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weight: Matrix::zeros(w[0], w[1]),
                bias: Matrix::zeros(1, w[1]),
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("Mlp", "no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::shape("Mlp", format!("layer {i}: bias does not match weight")));
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::shape("Mlp", format!("layer {i}: input width mismatch")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.rows()];
        w.extend(self.layers.iter().map(|l| l.weight.cols()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Places the parameters on `tape`, trainable or frozen.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let put = |m: &Matrix| if trainable { tape.var(m.clone()) } else { tape.constant(m.clone()) };
        BoundMlp {
            layers: self.layers.iter().map(|l| (put(&l.weight), put(&l.bias))).collect(),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        Ok(bound.forward(tape.constant(x.clone()))?.value())
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(vec![format!("invalid layer widths {widths:?}")]));
    }
    Ok(())
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let expected = self.layers[0].0.rows();
        if x.cols() != expected {
            return Err(Error::shape("mlp forward", format!("input width {} != {expected}", x.cols())));
        }
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(*w)?.add_row(*b)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }

    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.params().into_iter().map(|p| grads.wrt(p)).collect()
    }
}

/// Featurizer φ: raw inputs to the feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Featurizer(pub Mlp);

/// Predictor w: a single affine layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor(pub Mlp);

/// Discriminator projection η used to build the propagation graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator(pub Mlp);

impl Featurizer {
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        Ok(Featurizer(Mlp::new(widths, rng)?))
    }

    pub fn feature_width(&self) -> usize {
        self.0.output_width()
    }
}

impl LinearPredictor {
    pub fn new(features: usize, outputs: usize, rng: &mut Rng) -> Result<Self> {
        Ok(LinearPredictor(Mlp::new(&[features, outputs], rng)?))
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.layers().len() != 1 {
            return Err(Error::shape("LinearPredictor", "predictor must have exactly one layer"));
        }
        Ok(LinearPredictor(mlp))
    }
}

impl Discriminator {
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        Ok(Discriminator(Mlp::new(widths, rng)?))
    }
}

/// `H = φ(X)` on a tape.
pub fn featurize<'t>(featurizer: &BoundMlp<'t>, inputs: Var<'t>) -> Result<Var<'t>> {
    featurizer.forward(inputs)
}

/// Task outputs `w ∘ h`.
pub fn predict<'t>(predictor: &BoundMlp<'t>, features: Var<'t>) -> Result<Var<'t>> {
    predictor.forward(features)
}

/// `g_i = η(h_i)`.
pub fn project<'t>(discriminator: &BoundMlp<'t>, features: Var<'t>) -> Result<Var<'t>> {
    discriminator.forward(features)
}

/// Stochastic gradient descent with optional momentum and weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescales the gradients to this global L2 norm when they exceed it.
    pub clip_norm: Option<f64>,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            clip_norm: None,
            velocity: Vec::new(),
        }
    }

    pub fn with_clip_norm(mut self, clip_norm: Option<f64>) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    /// `v ← μ v + (g + λ p)`, `p ← p − lr v`. With `μ = 0` this is
    /// `p ← p − lr (g + λ p)`.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("sgd", format!("{} params, {} grads", params.len(), grads.len())));
        }
        let norm = grads.iter().map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let clipped;
        let grads = match self.clip_norm {
            Some(max) if norm > max => {
                clipped = grads.iter().map(|g| g.scale(max / norm)).collect::<Vec<_>>();
                &clipped[..]
            }
            _ => grads,
        };
        if self.velocity.is_empty() && self.momentum != 0.0 {
            self.velocity = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        }
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("sgd", format!("parameter {k}: {:?} vs {:?}", p.shape(), g.shape())));
            }
            if self.momentum != 0.0 {
                let v = &mut self.velocity[k];
                for ((vi, gi), pi) in v.as_mut_slice().iter_mut().zip(g.as_slice()).zip(p.as_slice()) {
                    *vi = self.momentum * *vi + (gi + self.weight_decay * pi);
                }
                p.axpy(-self.lr, v);
            } else {
                let wd = self.weight_decay;
                let lr = self.lr;
                for (pi, gi) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *pi -= lr * (gi + wd * *pi);
                }
            }
        }
        Ok(())
    }
}

/// One named parameter matrix in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// On-disk form of one network: layer widths plus tensors named
/// `layer{i}.weight` (input x output, row-major) and `layer{i}.bias` (1 x output).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub role: String,
    pub widths: Vec<usize>,
    pub tensors: Vec<NamedTensor>,
}

pub const CHECKPOINT_FORMAT: &str = "ladg-mlp/1";

impl MlpCheckpoint {
    pub fn from_mlp(role: &str, mlp: &Mlp) -> Self {
        let tensors = mlp
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [("weight", &l.weight), ("bias", &l.bias)].map(|(kind, m)| NamedTensor {
                    name: format!("layer{i}.{kind}"),
                    shape: [m.rows(), m.cols()],
                    data: m.as_slice().to_vec(),
                })
            })
            .collect();
        MlpCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            role: role.into(),
            widths: mlp.widths(),
            tensors,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema(format!("unknown checkpoint format {:?}", self.format)));
        }
        let find = |name: &str| -> Result<Matrix> {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Schema(format!("checkpoint {} lacks tensor {name}", self.role)))?;
            Matrix::new(t.shape[0], t.shape[1], t.data.clone())
        };
        let layers = (0..self.widths.len().saturating_sub(1))
            .map(|i| {
                Ok(Dense {
                    weight: find(&format!("layer{i}.weight"))?,
                    bias: find(&format!("layer{i}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::from_layers(layers)?;
        if mlp.widths() != self.widths {
            return Err(Error::Schema(format!("checkpoint {} widths disagree with tensors", self.role)));
        }
        Ok(mlp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })
    }
}
