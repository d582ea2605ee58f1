//! Feedforward guidance-and-control networks.
//!
//! A [`NetSpec`] maps a state to a control through an input affine map,
//! a stack of dense layers and an output affine map:
//!
//! ```text
//! L0 = (x - pre.shift) * pre.scale
//! L(i+1) = act_i(W_i L(i) + b_i)
//! N(x) = L(last) * post.scale + post.shift
//! ```
//!
//! Evaluation is generic over [`Scalar`], so the same network gives plain
//! values, Jacobians and high-order expansions.

mod equilibrium;
mod io;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dalgebra::{Algebra, Scalar, TPoly};

pub use equilibrium::{find_equilibrium, shift_axes, Equilibrium, EquilibriumOptions};

/// Version tag written into weight files.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("expected input of length {expected}, got {got}")]
    InputDimension { expected: usize, got: usize },
    #[error("malformed network: {0}")]
    Malformed(String),
    #[error("unsupported weight format {0}")]
    UnsupportedFormat(u32),
    #[error("weight file: {0}")]
    Io(#[from] std::io::Error),
    #[error("weight file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("singular closed-loop Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("no equilibrium after {iterations} iterations, residual {residual:e} at {last:?}")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply<S: Scalar>(&self, x: &S) -> S {
        match self {
            Activation::Softplus => x.softplus(),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x.clone(),
        }
    }

    /// Derivative as a function of the pre-activation `z`.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Softplus => crate::dalgebra::sigmoid(z),
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row `i` holds the incoming weights of output neuron `i`.
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }

    fn apply<S: Scalar>(&self, input: &[S]) -> Vec<S> {
        self.weights
            .iter()
            .zip(&self.b)
            .map(|(row, &bias)| {
                let mut z = input[0].constant_like(bias);
                for (w, x) in row.iter().zip(input) {
                    if *w != 0.0 {
                        z.add_scaled(*w, x);
                    }
                }
                self.act.apply(&z)
            })
            .collect()
    }
}

/// `(x - shift) * scale`, per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// `y * scale + shift`, per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMap {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl InputMap {
    pub fn identity(n: usize) -> Self {
        InputMap {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }
}

impl OutputMap {
    pub fn identity(n: usize) -> Self {
        OutputMap {
            scale: vec![1.0; n],
            shift: vec![0.0; n],
        }
    }

    /// Maps the `(-1, 1)` range of tanh onto the quadcopter control box:
    /// `u1 = 0.5 t + 0.5`, `u2 = t`.
    pub fn quad_controls() -> Self {
        OutputMap {
            scale: vec![0.5, 1.0],
            shift: vec![0.5, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub format: u32,
    pub pre: InputMap,
    pub post: OutputMap,
    pub layers: Vec<Layer>,
}

impl NetSpec {
    /// Assembles and validates a network.
    pub fn new(pre: InputMap, post: OutputMap, layers: Vec<Layer>) -> Result<Self, NetError> {
        let net = NetSpec {
            format: FORMAT_VERSION,
            pre,
            post,
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Randomly initialised `inputs → hidden... → outputs` network with
    /// softplus hidden layers and a tanh output layer. Weights are drawn
    /// uniformly with Glorot scaling.
    pub fn random(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        pre: InputMap,
        post: OutputMap,
        seed: u64,
    ) -> Result<Self, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![inputs];
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.gen_range(-limit..limit)).collect())
                    .collect();
                let act = if i + 2 == dims.len() {
                    Activation::Tanh
                } else {
                    Activation::Softplus
                };
                Layer {
                    weights,
                    b: vec![0.0; fan_out],
                    act,
                }
            })
            .collect();
        NetSpec::new(pre, post, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.pre.shift.len()
    }

    pub fn output_dim(&self) -> usize {
        self.post.shift.len()
    }

    /// Checks the dimension chain and that every number is finite.
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Malformed(m));
        if self.format != FORMAT_VERSION {
            return Err(NetError::UnsupportedFormat(self.format));
        }
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        let n_in = self.pre.shift.len();
        if n_in == 0 || self.pre.scale.len() != n_in {
            return bad("pre shift/scale lengths differ or are empty".into());
        }
        let n_out = self.post.shift.len();
        if n_out == 0 || self.post.scale.len() != n_out {
            return bad("post shift/scale lengths differ or are empty".into());
        }
        let mut width = n_in;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.outputs() == 0 {
                return bad(format!("layer {i} has no neurons"));
            }
            if let Some(r) = layer.weights.iter().position(|row| row.len() != width) {
                return bad(format!(
                    "layer {i} row {r} has {} weights, expected {width}",
                    layer.weights[r].len()
                ));
            }
            if layer.b.len() != layer.outputs() {
                return bad(format!(
                    "layer {i} has {} biases for {} neurons",
                    layer.b.len(),
                    layer.outputs()
                ));
            }
            width = layer.outputs();
        }
        if width != n_out {
            return bad(format!("last layer has {width} outputs, post map expects {n_out}"));
        }
        let all_finite = self
            .pre
            .shift
            .iter()
            .chain(&self.pre.scale)
            .chain(&self.post.scale)
            .chain(&self.post.shift)
            .chain(self.layers.iter().flat_map(|l| l.weights.iter().flatten().chain(&l.b)))
            .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.outputs() * (l.inputs() + 1))
            .sum()
    }

    /// Evaluates the network over any scalar algebra.
    pub fn forward<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::InputDimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut cur: Vec<S> = x
            .iter()
            .zip(self.pre.shift.iter().zip(&self.pre.scale))
            .map(|(xi, (&s, &c))| (xi.clone() - s) * c)
            .collect();
        for layer in &self.layers {
            cur = layer.apply(&cur);
        }
        cur.into_iter()
            .zip(self.post.scale.iter().zip(&self.post.shift))
            .map(|(y, (&c, &s))| y * c + s)
            .collect()
    }

    /// `∂N_k/∂x_j` at `x`, as rows of outputs.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, NetError> {
        let n = self.input_dim();
        if x.len() != n {
            return Err(NetError::InputDimension {
                expected: n,
                got: x.len(),
            });
        }
        let alg = Algebra::new(n, 1).expect("first-order algebra");
        let seeded: Vec<TPoly> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| TPoly::variable(&alg, i, xi).expect("index in range"))
            .collect();
        Ok(self
            .forward_unchecked(&seeded)
            .iter()
            .map(TPoly::gradient)
            .collect())
    }
}

/// A single tanh layer `N(x) = post(tanh(K x + b))`, useful for hand-designed
/// controllers.
pub fn saturated_linear(gains: Vec<Vec<f64>>, bias: Vec<f64>, post: OutputMap) -> Result<NetSpec, NetError> {
    let n_in = gains.first().map_or(0, Vec::len);
    NetSpec::new(
        InputMap::identity(n_in),
        post,
        vec![Layer {
            weights: gains,
            b: bias,
            act: Activation::Tanh,
        }],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net(n: usize) -> NetSpec {
        let w = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        NetSpec::new(
            InputMap::identity(n),
            OutputMap::identity(n),
            vec![Layer {
                weights: w,
                b: vec![0.0; n],
                act: Activation::Linear,
            }],
        )
        .unwrap()
    }

    #[test]
    fn identity_network() {
        let net = identity_net(3);
        let x = [0.3, -1.0, 2.5];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
        let j = net.input_jacobian(&x).unwrap();
        for (i, row) in j.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_weight_network_outputs_post_shift() {
        let zeros = |r: usize, c: usize| vec![vec![0.0; c]; r];
        let net = NetSpec::new(
            InputMap::identity(5),
            OutputMap::quad_controls(),
            vec![
                Layer {
                    weights: zeros(4, 5),
                    b: vec![0.0; 4],
                    act: Activation::Softplus,
                },
                Layer {
                    weights: zeros(2, 4),
                    b: vec![0.0; 2],
                    act: Activation::Tanh,
                },
            ],
        )
        .unwrap();
        let u = net.forward(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(u, vec![0.5, 0.0]);
        let j = net.input_jacobian(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(j.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let net = identity_net(2);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(NetError::InputDimension { expected: 2, got: 1 })
        ));
        let mut broken = net.clone();
        broken.layers[0].weights[1].push(0.0);
        assert!(broken.validate().is_err());
    }

    #[test]
    fn random_init_is_seeded() {
        let a = NetSpec::random(5, &[8, 8], 2, InputMap::identity(5), OutputMap::quad_controls(), 3)
            .unwrap();
        let b = NetSpec::random(5, &[8, 8], 2, InputMap::identity(5), OutputMap::quad_controls(), 3)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.parameter_count(), 8 * 6 + 8 * 9 + 2 * 9);
        assert_eq!(a.layers[2].act, Activation::Tanh);
    }
}
