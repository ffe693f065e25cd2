//! Two-stage convolutional reward network with hand-written backprop.
//!
//! ```text
//! env (4) -> conv1a 3x3 -> relu -> conv1b 3x3 -> relu -+
//!                                                       concat (21) -> conv2a 3x3 -> relu -> head 1x1 -> reward
//! kinematics (5) ---------------------------------------+
//! ```

mod adam;
mod checkpoint;
mod conv;

pub use adam::{apply_update, AdamW};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::Conv2d;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featurizer::{FeatureStack, N_CHANNELS, N_ENV_CHANNELS};
use crate::gridmdp::{GridMap, RewardMap};

pub const HIDDEN: usize = 16;
pub const N_KIN_CHANNELS: usize = N_CHANNELS - N_ENV_CHANNELS;
pub const N_TENSORS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub conv1a: Conv2d,
    pub conv1b: Conv2d,
    pub conv2a: Conv2d,
    pub head: Conv2d,
}

impl NetParams {
    pub fn zeros() -> Self {
        Self {
            conv1a: Conv2d::zeros(N_ENV_CHANNELS, HIDDEN, 3),
            conv1b: Conv2d::zeros(HIDDEN, HIDDEN, 3),
            conv2a: Conv2d::zeros(HIDDEN + N_KIN_CHANNELS, HIDDEN, 3),
            head: Conv2d::zeros(HIDDEN, 1, 1),
        }
    }

    fn layers(&self) -> [&Conv2d; 4] {
        [&self.conv1a, &self.conv1b, &self.conv2a, &self.head]
    }

    fn layers_mut(&mut self) -> [&mut Conv2d; 4] {
        [&mut self.conv1a, &mut self.conv1b, &mut self.conv2a, &mut self.head]
    }

    /// Parameter tensors in storage order: weight then bias of each layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn grads(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.grad_weight.as_slice(), l.grad_bias.as_slice()])
            .collect()
    }

    /// `(param, grad)` pairs in storage order.
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        let mut out = Vec::with_capacity(N_TENSORS);
        for l in self.layers_mut() {
            out.push((l.weight.as_mut_slice(), l.grad_weight.as_mut_slice()));
            out.push((l.bias.as_mut_slice(), l.grad_bias.as_mut_slice()));
        }
        out
    }

    /// Shape of each tensor: `[out, in, k, k]` for weights, `[out]` for biases.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.layers()
            .into_iter()
            .flat_map(|l| [vec![l.out_ch, l.in_ch, l.k, l.k], vec![l.out_ch]])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_mut() {
            l.zero_grad();
        }
    }

    pub fn add_grads(&mut self, other: &NetParams) {
        for ((_, g), o) in self.tensors_mut().into_iter().zip(other.grads()) {
            for (a, b) in g.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for (_, g) in self.tensors_mut() {
            g.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads().iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Value of the `i`-th scalar parameter in storage order.
    pub fn param(&self, i: usize) -> f64 {
        let (t, j) = self.locate(i);
        self.tensors()[t][j]
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let (t, j) = self.locate(i);
        self.tensors_mut()[t].0[j] = v;
    }

    pub fn grad(&self, i: usize) -> f64 {
        let (t, j) = self.locate(i);
        self.grads()[t][j]
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (t, ten) in self.tensors().iter().enumerate() {
            if i < ten.len() {
                return (t, i);
            }
            i -= ten.len();
        }
        panic!("parameter index out of range");
    }
}

/// Fan-in scaled uniform initialisation; biases zero.
pub fn init_params(seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetParams::zeros();
    for l in p.layers_mut() {
        l.init_uniform(&mut rng);
    }
    p
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    side: usize,
    env: Vec<f64>,
    z1a: Vec<f64>,
    a1a: Vec<f64>,
    z1b: Vec<f64>,
    /// `relu(z1b)` followed by the kinematic channels.
    fused: Vec<f64>,
    z2a: Vec<f64>,
    a2a: Vec<f64>,
}

impl ForwardCache {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Which ReLU units are active.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.z1a.iter().chain(&self.z1b).chain(&self.z2a).map(|&z| z > 0.0).collect()
    }

    /// Smallest |pre-activation| over all ReLU inputs.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.z1a
            .iter()
            .chain(&self.z1b)
            .chain(&self.z2a)
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

pub fn forward(params: &NetParams, features: &FeatureStack) -> Result<(RewardMap, ForwardCache)> {
    if features.channels() != N_CHANNELS {
        return Err(Error::ShapeMismatch(format!(
            "network expects {N_CHANNELS} input channels, got {}",
            features.channels()
        )));
    }
    let side = features.side();
    let hw = side * side;
    if hw == 0 {
        return Err(Error::ShapeMismatch("empty feature stack".into()));
    }
    let data = features.data();
    let env = data[..N_ENV_CHANNELS * hw].to_vec();
    let kin = &data[N_ENV_CHANNELS * hw..];

    let mut z1a = vec![0.0; HIDDEN * hw];
    params.conv1a.forward(&env, side, side, &mut z1a);
    let a1a = relu(&z1a);
    let mut z1b = vec![0.0; HIDDEN * hw];
    params.conv1b.forward(&a1a, side, side, &mut z1b);
    let mut fused = relu(&z1b);
    fused.extend_from_slice(kin);
    let mut z2a = vec![0.0; HIDDEN * hw];
    params.conv2a.forward(&fused, side, side, &mut z2a);
    let a2a = relu(&z2a);
    let mut out = vec![0.0; hw];
    params.head.forward(&a2a, side, side, &mut out);

    let reward = GridMap::from_vec(side, side, out)?;
    Ok((
        reward,
        ForwardCache {
            side,
            env,
            z1a,
            a1a,
            z1b,
            fused,
            z2a,
            a2a,
        },
    ))
}

fn mask_relu(d: &mut [f64], z: &[f64]) {
    for (g, &zv) in d.iter_mut().zip(z) {
        if zv <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Accumulates the gradients of `sum(d_reward * forward(features))` into the
/// parameter gradient buffers.
pub fn backward(params: &mut NetParams, cache: &ForwardCache, d_reward: &GridMap) -> Result<()> {
    let side = cache.side;
    if d_reward.rows() != side || d_reward.cols() != side {
        return Err(Error::ShapeMismatch(format!(
            "reward gradient is {}x{}, cached forward pass is {side}x{side}",
            d_reward.rows(),
            d_reward.cols()
        )));
    }
    let hw = side * side;
    if cache.z1a.len() != params.conv1a.out_ch * hw || cache.fused.len() != params.conv2a.in_ch * hw {
        return Err(Error::ShapeMismatch("cache does not match network".into()));
    }

    let mut d_a2a = vec![0.0; HIDDEN * hw];
    params.head.backward(&cache.a2a, side, side, d_reward.values(), Some(&mut d_a2a));
    mask_relu(&mut d_a2a, &cache.z2a);

    let mut d_fused = vec![0.0; params.conv2a.in_ch * hw];
    params.conv2a.backward(&cache.fused, side, side, &d_a2a, Some(&mut d_fused));
    let mut d_z1b = d_fused;
    d_z1b.truncate(HIDDEN * hw);
    mask_relu(&mut d_z1b, &cache.z1b);

    let mut d_a1a = vec![0.0; HIDDEN * hw];
    params.conv1b.backward(&cache.a1a, side, side, &d_z1b, Some(&mut d_a1a));
    mask_relu(&mut d_a1a, &cache.z1a);

    params.conv1a.backward(&cache.env, side, side, &d_a1a, None);
    Ok(())
}
