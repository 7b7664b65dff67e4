//! Fully-connected inference network with the `amc 1` text weight format.
//!
//! The format is deliberately plain so fixtures stay diff-able:
//!
//! ```text
//! amc 1
//! layers <n>
//! dims <in> <out>
//! act tanh|relu|linear
//! <out*in weights, row-major> <out biases>
//! ... repeated per layer ...
//! ```
//!
//! Numbers are whitespace-separated shortest round-trip decimals, so a
//! save/load round trip reproduces inference outputs exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("unsupported weight format version `{0}` (expected 1)")]
    UnsupportedVersion(String),
    #[error("layer {layer}: input dim {got} does not chain from previous output {expected}")]
    DimChain {
        layer: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite weight in layer {0}")]
    NonFiniteWeight(usize),
    #[error("network shape {got_in}->{got_out} does not match required {want_in}->{want_out}")]
    ShapeMismatch {
        got_in: usize,
        got_out: usize,
        want_in: usize,
        want_out: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Row-major: weights[out * input_dim + in].
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Immutable feedforward network. Inference is deterministic and the
/// struct is `Sync`, so batched callers may share it across threads.
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    layers: Vec<MlpLayer>,
}

impl MlpNetwork {
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self, MlpError> {
        if layers.is_empty() {
            return Err(MlpError::Malformed("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.input_dim * l.output_dim || l.biases.len() != l.output_dim {
                return Err(MlpError::Malformed(format!(
                    "layer {i}: weight/bias count does not match dims"
                )));
            }
            if l.weights.iter().chain(&l.biases).any(|w| !w.is_finite()) {
                return Err(MlpError::NonFiniteWeight(i));
            }
            if i > 0 && l.input_dim != layers[i - 1].output_dim {
                return Err(MlpError::DimChain {
                    layer: i,
                    got: l.input_dim,
                    expected: layers[i - 1].output_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn require_shape(&self, want_in: usize, want_out: usize) -> Result<(), MlpError> {
        if self.input_dim() != want_in || self.output_dim() != want_out {
            return Err(MlpError::ShapeMismatch {
                got_in: self.input_dim(),
                got_out: self.output_dim(),
                want_in,
                want_out,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input dimension mismatch");
        let mut x = input.to_vec();
        let mut y = Vec::new();
        for layer in &self.layers {
            y.clear();
            y.reserve(layer.output_dim);
            for o in 0..layer.output_dim {
                let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                let mut acc = layer.biases[o];
                for (w, xi) in row.iter().zip(&x) {
                    acc += w * xi;
                }
                y.push(layer.activation.apply(acc));
            }
            std::mem::swap(&mut x, &mut y);
        }
        x
    }

    pub fn to_amc(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "amc 1");
        let _ = writeln!(s, "layers {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(s, "dims {} {}", l.input_dim, l.output_dim);
            let _ = writeln!(s, "act {}", l.activation.name());
            for o in 0..l.output_dim {
                let row = &l.weights[o * l.input_dim..(o + 1) * l.input_dim];
                let mut line = String::new();
                for (i, w) in row.iter().enumerate() {
                    if i > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{w}");
                }
                let _ = writeln!(s, "{line}");
            }
            let mut line = String::new();
            for (i, b) in l.biases.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{b}");
            }
            let _ = writeln!(s, "{line}");
        }
        s
    }

    pub fn from_amc(text: &str) -> Result<Self, MlpError> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| MlpError::Malformed(format!("unexpected end of file, expected {what}")))
        };
        match (next("magic")?, next("version")?) {
            ("amc", "1") => {}
            ("amc", v) => return Err(MlpError::UnsupportedVersion(v.to_string())),
            _ => return Err(MlpError::Malformed("missing `amc 1` header".into())),
        }
        if next("`layers`")? != "layers" {
            return Err(MlpError::Malformed("expected `layers <n>`".into()));
        }
        let n_layers: usize = next("layer count")?
            .parse()
            .map_err(|_| MlpError::Malformed("bad layer count".into()))?;
        let mut layers = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            if next("`dims`")? != "dims" {
                return Err(MlpError::Malformed(format!("layer {li}: expected `dims`")));
            }
            let input_dim: usize = next("input dim")?
                .parse()
                .map_err(|_| MlpError::Malformed(format!("layer {li}: bad input dim")))?;
            let output_dim: usize = next("output dim")?
                .parse()
                .map_err(|_| MlpError::Malformed(format!("layer {li}: bad output dim")))?;
            if input_dim == 0 || output_dim == 0 {
                return Err(MlpError::Malformed(format!("layer {li}: zero dimension")));
            }
            if next("`act`")? != "act" {
                return Err(MlpError::Malformed(format!("layer {li}: expected `act`")));
            }
            let activation = match next("activation")? {
                "tanh" => Activation::Tanh,
                "relu" => Activation::Relu,
                "linear" => Activation::Linear,
                other => {
                    return Err(MlpError::Malformed(format!(
                        "layer {li}: unknown activation `{other}`"
                    )))
                }
            };
            let mut weights = Vec::with_capacity(input_dim * output_dim);
            for _ in 0..input_dim * output_dim {
                let t = next("weight")?;
                weights.push(
                    t.parse::<f64>()
                        .map_err(|_| MlpError::Malformed(format!("bad weight `{t}`")))?,
                );
            }
            let mut biases = Vec::with_capacity(output_dim);
            for _ in 0..output_dim {
                let t = next("bias")?;
                biases.push(
                    t.parse::<f64>()
                        .map_err(|_| MlpError::Malformed(format!("bad bias `{t}`")))?,
                );
            }
            layers.push(MlpLayer {
                input_dim,
                output_dim,
                activation,
                weights,
                biases,
            });
        }
        if tokens.next().is_some() {
            return Err(MlpError::Malformed("trailing tokens after last layer".into()));
        }
        Self::new(layers)
    }

    pub fn save(&self, path: &Path) -> Result<(), MlpError> {
        fs::write(path, self.to_amc())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MlpError> {
        Self::from_amc(&fs::read_to_string(path)?)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable 1 / (1 + e^-x).
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
