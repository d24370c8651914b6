use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Layer widths `[d_in, h_1, ..., d_out]` with one activation for hidden
/// layers and one for the output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: &[usize], hidden: Activation, output: Activation) -> Self {
        MlpSpec {
            widths: widths.to_vec(),
            hidden,
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "an MLP needs at least one layer of positive widths, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers() {
            self.output
        } else {
            self.hidden
        }
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) weights of shape `[fan_in, fan_out]`.
pub fn init_weight(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    rng.uniform_tensor(&[fan_in, fan_out], -bound, bound)
}

/// Leaves (or constants) for a list of parameter tensors, in order.
pub fn bind_params(tape: &mut Tape, params: &[&Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| {
            if trainable {
                tape.leaf((*p).clone())
            } else {
                tape.constant((*p).clone())
            }
        })
        .collect()
}

/// Fully connected network acting on row batches: `h ← act(h W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.widths.windows(2) {
            weights.push(init_weight(w[0], w[1], rng));
            biases.push(Tensor::zeros(&[w[1]]));
        }
        Ok(Mlp {
            spec,
            weights,
            biases,
        })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec
            .widths
            .windows(2)
            .map(|w| Tensor::zeros(&[w[0], w[1]]))
            .collect();
        let biases = spec.widths[1..].iter().map(|&d| Tensor::zeros(&[d])).collect();
        Ok(Mlp {
            spec,
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.widths.last().expect("validated")
    }

    /// `w_0, b_0, w_1, b_1, ...`
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("{prefix}.{i}.weight"), w));
            out.push((format!("{prefix}.{i}.bias"), b));
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = bind_params(tape, &self.params(), trainable);
        BoundMlp {
            spec: self.spec.clone(),
            vars,
        }
    }

    /// Tape-free evaluation on a batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = bound.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    spec: MlpSpec,
    vars: Vec<Var>,
}

impl BoundMlp {
    /// Wraps already-bound parameters `w0, b0, w1, b1, …`.
    pub fn from_vars(spec: MlpSpec, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), 2 * spec.layers(), "one weight and one bias per layer");
        BoundMlp { spec, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn layer(&self, l: usize) -> (Var, Var) {
        (self.vars[2 * l], self.vars[2 * l + 1])
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.spec.layers() {
            let (w, b) = self.layer(l);
            let a = tape.matmul(h, w)?;
            let a = tape.add_bias(a, b)?;
            h = self.spec.activation(l).apply(tape, a)?;
        }
        Ok(h)
    }

    /// Forward pass that adds `z S_l` inside every layer after the first.
    pub(crate) fn forward_with_skips(&self, tape: &mut Tape, z: Var, skips: &[Var]) -> Result<Var> {
        let mut h = z;
        for l in 0..self.spec.layers() {
            let (w, b) = self.layer(l);
            let mut a = tape.matmul(h, w)?;
            if l > 0 {
                let s = tape.matmul(z, skips[l - 1])?;
                a = tape.add(a, s)?;
            }
            let a = tape.add_bias(a, b)?;
            h = self.spec.activation(l).apply(tape, a)?;
        }
        Ok(h)
    }
}

/// MLP whose hidden layers after the first also receive the latent input
/// through skip matrices `S_l` of shape `[d_z, width_l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipMlp {
    pub mlp: Mlp,
    pub skips: Vec<Tensor>,
}

impl SkipMlp {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        let mlp = Mlp::new(spec, rng)?;
        let dz = mlp.input_dim();
        let skips = mlp.spec.widths[2..]
            .iter()
            .map(|&w| init_weight(dz, w, rng))
            .collect();
        Ok(SkipMlp { mlp, skips })
    }

    /// Wraps an existing MLP with all-zero skip matrices.
    pub fn from_mlp(mlp: Mlp) -> Self {
        let dz = mlp.input_dim();
        let skips = mlp.spec.widths[2..]
            .iter()
            .map(|&w| Tensor::zeros(&[dz, w]))
            .collect();
        SkipMlp { mlp, skips }
    }

    /// MLP parameters followed by the skip matrices.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.mlp.params();
        p.extend(self.skips.iter());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.mlp.params_mut();
        p.extend(self.skips.iter_mut());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = self.mlp.named_params(prefix);
        for (i, s) in self.skips.iter().enumerate() {
            out.push((format!("{prefix}.{}.skip", i + 1), s));
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundSkip {
        let mlp = self.mlp.bind(tape, trainable);
        let refs: Vec<&Tensor> = self.skips.iter().collect();
        let skips = bind_params(tape, &refs, trainable);
        BoundSkip { mlp, skips }
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = bound.forward(&mut tape, zv)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Debug)]
pub struct BoundSkip {
    pub mlp: BoundMlp,
    pub skips: Vec<Var>,
}

impl BoundSkip {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.mlp.vars().to_vec();
        v.extend(&self.skips);
        v
    }

    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.mlp.forward_with_skips(tape, z, &self.skips)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_final_bias() {
        let spec = MlpSpec::new(&[3, 4, 2], Activation::Tanh, Activation::Identity);
        let mut mlp = Mlp::zeros(spec).unwrap();
        mlp.biases[1] = Tensor::vector(vec![0.5, -1.5]);
        let out = mlp.forward(&Tensor::ones(&[2, 3])).unwrap();
        assert_eq!(out.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = Rng::seed(0);
        let w = init_weight(16, 8, &mut rng);
        assert!(w.max_abs() <= 0.25);
    }

    #[test]
    fn bad_spec_is_a_config_error() {
        let spec = MlpSpec::new(&[3], Activation::Tanh, Activation::Identity);
        assert!(matches!(Mlp::zeros(spec), Err(Error::Config(_))));
    }

    #[test]
    fn pure_skip_path() {
        // W_h = 0 with identity activations leaves only the last skip term.
        let mut rng = Rng::seed(3);
        let spec = MlpSpec::new(&[2, 3, 3, 4], Activation::Identity, Activation::Identity);
        let mut net = SkipMlp::new(spec.clone(), &mut rng).unwrap();
        net.mlp = Mlp::zeros(spec).unwrap();
        let z = rng.normal_tensor(&[5, 2]);
        let out = net.forward(&z).unwrap();
        let expected = z.matmul(&net.skips[1]).unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
