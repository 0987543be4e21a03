//! Minimal neural-network core: parameter registry, explicit forward caches
//! with hand-written backward passes, and an adaptive-moment optimizer.
//! Everything is generic over the float type so tests can run the exact same
//! graph in f64 for finite-difference verification.

mod attention;
mod conv;
mod layers;
mod optim;

pub use attention::{DecoderBlock, DecoderBlockCache, MultiHeadAttention};
pub use conv::{AvgPool2d, Conv2d, Conv2dCache, ConvEncoder, ConvEncoderCache, ConvEncoderConfig};
pub use layers::{
    gelu, gelu_backward, relu, relu_backward, sigmoid, sigmoid_backward, softmax_rows, LayerNorm,
    LayerNormCache, Linear,
};
pub use optim::{clip_global_norm, cosine_lr, Adam, AdamConfig};

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

pub trait Scalar:
    num_traits::Float
    + num_traits::NumCast
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub id: usize,
    pub name: String,
    pub value: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Gaussian with the given standard deviation.
    Normal(f64),
    /// Kaiming-style fan-in scaled Gaussian: std = sqrt(2 / fan_in).
    KaimingFanIn(usize),
}

/// Assigns parameter ids in construction order and draws all initial values
/// from one seeded stream, so a (seed, config) pair fully determines a model.
pub struct ParamBuilder<T> {
    rng: ChaCha8Rng,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> ParamBuilder<T> {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        ParamBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            names: Vec::new(),
            shapes: Vec::new(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Param<T> {
        use rand::Rng;
        let id = self.names.len();
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        let n: usize = shape.iter().product();
        let std = match init {
            Init::Zeros | Init::Ones => 0.0,
            Init::Normal(std) => std,
            Init::KaimingFanIn(fan_in) => (2.0 / fan_in as f64).sqrt(),
        };
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            _ => (0..n)
                .map(|_| {
                    // Box-Muller keeps the stream independent of the float type.
                    let u1: f64 = self.rng.random_range(1e-12..1.0);
                    let u2: f64 = self.rng.random_range(0.0..1.0);
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    T::from_f64(z * std)
                })
                .collect(),
        };
        Param {
            id,
            name: self.names[id].clone(),
            value: ArrayD::from_shape_vec(IxDyn(shape), data).unwrap(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn num_tensors(&self) -> usize {
        self.names.len()
    }
}

/// Gradient accumulator indexed by parameter id; allocated lazily so unused
/// parameters cost nothing.
pub struct GradStore<T> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn new(num_tensors: usize) -> Self {
        GradStore { grads: (0..num_tensors).map(|_| None).collect() }
    }

    pub fn accum(&mut self, param: &Param<T>, grad: &ArrayD<T>) {
        debug_assert_eq!(param.value.shape(), grad.shape(), "grad shape for {}", param.name);
        match &mut self.grads[param.id] {
            Some(slot) => *slot += grad,
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    pub fn get(&self, id: usize) -> Option<&ArrayD<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Sums another store into this one (deterministic fold over param ids).
    pub fn merge(&mut self, other: GradStore<T>) {
        for (slot, incoming) in self.grads.iter_mut().zip(other.grads) {
            match (slot.as_mut(), incoming) {
                (Some(a), Some(b)) => *a += &b,
                (None, Some(b)) => *slot = Some(b),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
