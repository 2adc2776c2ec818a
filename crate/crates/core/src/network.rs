//! The six-layer pyramidal network C1 -> S2 -> C3 -> S4 -> C5 -> F6.
//!
//! C3 and C5 are fully connected across their input maps. S2 and S4 are
//! parameter-free 2x2 max-pools followed by a linear transfer. F6 is a dense
//! layer over the 16 C5 outputs; it is stored as a `12 x 16 x 1 x 1`
//! [`KernelBank`], which is exactly a row-major `12 x 16` weight matrix.

use std::fmt;

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    activate, activate_backward, conv2d_input_grad, conv2d_param_grads, conv2d_valid, maxpool2x2,
    maxpool2x2_backward, ActivationKind, KernelBank, PoolCache, Shape, Tensor,
};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerConfig {
    pub maps: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub activation: ActivationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLayerConfig {
    /// Square window edge; only 2 is supported.
    pub window: usize,
    pub activation: ActivationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseLayerConfig {
    pub neurons: usize,
    pub activation: ActivationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyraNetConfig {
    pub input_maps: usize,
    pub input_rows: usize,
    pub input_cols: usize,
    pub c1: ConvLayerConfig,
    pub s2: PoolLayerConfig,
    pub c3: ConvLayerConfig,
    pub s4: PoolLayerConfig,
    pub c5: ConvLayerConfig,
    pub f6: DenseLayerConfig,
}

impl Default for PyraNetConfig {
    fn default() -> Self {
        let conv = |maps, k| ConvLayerConfig {
            maps,
            kernel_rows: k,
            kernel_cols: k,
            activation: ActivationKind::Tansig,
        };
        let pool = PoolLayerConfig {
            window: 2,
            activation: ActivationKind::Purelin,
        };
        PyraNetConfig {
            input_maps: 1,
            input_rows: 32,
            input_cols: 32,
            c1: conv(64, 5),
            s2: pool,
            c3: conv(32, 3),
            s4: pool,
            c5: conv(16, 6),
            f6: DenseLayerConfig {
                neurons: NUM_CLASSES,
                activation: ActivationKind::Tansig,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub name: &'static str,
    pub shape: Shape,
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<6}{}", self.name, self.shape)
    }
}

fn conv_out(layer: &'static str, input: Shape, cfg: &ConvLayerConfig) -> Result<Shape> {
    if cfg.maps == 0 || cfg.kernel_rows == 0 || cfg.kernel_cols == 0 {
        return Err(Error::Config {
            layer,
            reason: format!(
                "maps and kernel dimensions must be positive, got {} maps of {}x{}",
                cfg.maps, cfg.kernel_rows, cfg.kernel_cols
            ),
        });
    }
    if cfg.kernel_rows > input.rows || cfg.kernel_cols > input.cols {
        return Err(Error::Config {
            layer,
            reason: format!(
                "{}x{} kernel does not fit {}x{} input",
                cfg.kernel_rows, cfg.kernel_cols, input.rows, input.cols
            ),
        });
    }
    Ok(Shape::new(
        cfg.maps,
        input.rows - cfg.kernel_rows + 1,
        input.cols - cfg.kernel_cols + 1,
    ))
}

fn pool_out(layer: &'static str, input: Shape, cfg: &PoolLayerConfig) -> Result<Shape> {
    if cfg.window != 2 {
        return Err(Error::Config {
            layer,
            reason: format!("only 2x2 pooling is supported, got window {}", cfg.window),
        });
    }
    if !input.rows.is_multiple_of(2) || !input.cols.is_multiple_of(2) {
        return Err(Error::Config {
            layer,
            reason: format!("cannot pool odd {}x{} input", input.rows, input.cols),
        });
    }
    Ok(Shape::new(input.maps, input.rows / 2, input.cols / 2))
}

/// Layer-by-layer tensor shapes, starting with the input.
pub fn shape_plan(config: &PyraNetConfig) -> Result<Vec<LayerShape>> {
    if config.input_maps == 0 || config.input_rows == 0 || config.input_cols == 0 {
        return Err(Error::Config {
            layer: "input",
            reason: "input dimensions must be positive".into(),
        });
    }
    let input = Shape::new(config.input_maps, config.input_rows, config.input_cols);
    let c1 = conv_out("C1", input, &config.c1)?;
    let s2 = pool_out("S2", c1, &config.s2)?;
    let c3 = conv_out("C3", s2, &config.c3)?;
    let s4 = pool_out("S4", c3, &config.s4)?;
    let c5 = conv_out("C5", s4, &config.c5)?;
    if c5.rows != 1 || c5.cols != 1 {
        return Err(Error::Config {
            layer: "C5",
            reason: format!("output must be 1x1 spatially, got {}x{}", c5.rows, c5.cols),
        });
    }
    if config.f6.neurons != NUM_CLASSES {
        return Err(Error::Config {
            layer: "F6",
            reason: format!(
                "needs one neuron per class ({NUM_CLASSES}), got {}",
                config.f6.neurons
            ),
        });
    }
    let f6 = Shape::new(config.f6.neurons, 1, 1);
    Ok([
        ("input", input),
        ("C1", c1),
        ("S2", s2),
        ("C3", c3),
        ("S4", s4),
        ("C5", c5),
        ("F6", f6),
    ]
    .into_iter()
    .map(|(name, shape)| LayerShape { name, shape })
    .collect())
}

/// Trainable parameters of the four weighted layers, in canonical order.
///
/// The same layout carries gradients, so [`Network`] and [`GradientSet`] share it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBanks {
    pub c1: KernelBank,
    pub c3: KernelBank,
    pub c5: KernelBank,
    pub f6: KernelBank,
}

pub type GradientSet = ParamBanks;

impl ParamBanks {
    pub fn zeros(config: &PyraNetConfig) -> Result<Self> {
        shape_plan(config)?;
        let conv = |c: &ConvLayerConfig, in_maps| {
            KernelBank::zeros(c.maps, in_maps, c.kernel_rows, c.kernel_cols)
        };
        Ok(ParamBanks {
            c1: conv(&config.c1, config.input_maps),
            c3: conv(&config.c3, config.c1.maps),
            c5: conv(&config.c5, config.c3.maps),
            f6: KernelBank::zeros(config.f6.neurons, config.c5.maps, 1, 1),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ParamBanks {
            c1: self.c1.zeros_like(),
            c3: self.c3.zeros_like(),
            c5: self.c5.zeros_like(),
            f6: self.f6.zeros_like(),
        }
    }

    pub fn banks(&self) -> [&KernelBank; 4] {
        [&self.c1, &self.c3, &self.c5, &self.f6]
    }

    /// C1 weights, C1 biases, C3 weights, ... F6 biases.
    pub fn slices(&self) -> [&[f64]; 8] {
        [
            &self.c1.weights,
            &self.c1.biases,
            &self.c3.weights,
            &self.c3.biases,
            &self.c5.weights,
            &self.c5.biases,
            &self.f6.weights,
            &self.f6.biases,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.c1.weights,
            &mut self.c1.biases,
            &mut self.c3.weights,
            &mut self.c3.biases,
            &mut self.c5.weights,
            &mut self.c5.biases,
            &mut self.f6.weights,
            &mut self.f6.biases,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.banks().iter().map(|b| b.num_params()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.slices().into_iter().flat_map(|s| s.iter().copied())
    }

    /// Mutable access to the scalar at `index` in canonical order.
    pub fn get_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for s in self.slices_mut() {
            if index < s.len() {
                return Some(&mut s[index]);
            }
            index -= s.len();
        }
        None
    }

    pub fn get(&self, mut index: usize) -> Option<f64> {
        for s in self.slices() {
            if index < s.len() {
                return Some(s[index]);
            }
            index -= s.len();
        }
        None
    }

    /// `self += other`, elementwise in canonical order.
    pub fn add_assign(&mut self, other: &ParamBanks) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn same_layout(&self, other: &ParamBanks) -> bool {
        self.banks().iter().zip(other.banks()).all(|(a, b)| {
            (a.out_maps, a.in_maps, a.k_rows, a.k_cols)
                == (b.out_maps, b.in_maps, b.k_rows, b.k_cols)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: PyraNetConfig,
    pub params: ParamBanks,
}

/// Every intermediate of one forward pass, needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Tensor,
    pub c1_pre: Tensor,
    pub c1_out: Tensor,
    pub s2_pooled: Tensor,
    pub s2_out: Tensor,
    pub s2_pool: PoolCache,
    pub c3_pre: Tensor,
    pub c3_out: Tensor,
    pub s4_pooled: Tensor,
    pub s4_out: Tensor,
    pub s4_pool: PoolCache,
    pub c5_pre: Tensor,
    pub c5_out: Tensor,
    pub f6_pre: Tensor,
    pub f6_out: Tensor,
}

impl ForwardCache {
    /// Post-activation shapes in the same order as [`shape_plan`].
    pub fn layer_shapes(&self) -> [Shape; 7] {
        [
            self.input.shape(),
            self.c1_out.shape(),
            self.s2_out.shape(),
            self.c3_out.shape(),
            self.s4_out.shape(),
            self.c5_out.shape(),
            self.f6_out.shape(),
        ]
    }
}

/// Uniform in `[-bound, bound)` from the top 53 bits of one xoshiro256++ draw.
fn uniform_symmetric(rng: &mut Xoshiro256PlusPlus, bound: f64) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (2.0 * unit - 1.0) * bound
}

fn glorot_fill(rng: &mut Xoshiro256PlusPlus, bank: &mut KernelBank) {
    let taps = bank.kernel_len();
    let fan_in = bank.in_maps * taps;
    let fan_out = bank.out_maps * taps;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in &mut bank.weights {
        *w = uniform_symmetric(rng, bound);
    }
}

impl Network {
    /// All weights and biases zero.
    pub fn zeros(config: PyraNetConfig) -> Result<Self> {
        Ok(Network {
            params: ParamBanks::zeros(&config)?,
            config,
        })
    }

    /// Glorot-uniform weights, zero biases.
    ///
    /// The generator is xoshiro256++ seeded through SplitMix64
    /// (`Xoshiro256PlusPlus::seed_from_u64`). Weights are drawn layer by layer in
    /// canonical order; each draw maps the top 53 bits of a `u64` to `u` in
    /// `[0, 1)` and yields `(2u - 1) * sqrt(6 / (fan_in + fan_out))`, with
    /// `fan_in = in_maps * k_rows * k_cols` and `fan_out = out_maps * k_rows * k_cols`.
    pub fn init(config: PyraNetConfig, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(config)?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        glorot_fill(&mut rng, &mut net.params.c1);
        glorot_fill(&mut rng, &mut net.params.c3);
        glorot_fill(&mut rng, &mut net.params.c5);
        glorot_fill(&mut rng, &mut net.params.f6);
        Ok(net)
    }

    pub fn from_params(config: PyraNetConfig, params: ParamBanks) -> Result<Self> {
        let expected = ParamBanks::zeros(&config)?;
        if !expected.same_layout(&params) {
            return Err(Error::dimension(
                "Network::from_params",
                format!(
                    "{} parameters laid out for the config",
                    expected.num_params()
                ),
                params.num_params(),
            ));
        }
        Ok(Network { config, params })
    }

    pub fn config(&self) -> &PyraNetConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(
            self.config.input_maps,
            self.config.input_rows,
            self.config.input_cols,
        )
    }

    /// Output scores plus every intermediate tensor.
    pub fn forward(&self, image: &Tensor) -> Result<(Vec<f64>, ForwardCache)> {
        if image.shape() != self.input_shape() {
            return Err(Error::dimension(
                "forward",
                self.input_shape(),
                image.shape(),
            ));
        }
        let cfg = &self.config;
        let p = &self.params;

        let c1_pre = conv2d_valid(image, &p.c1)?;
        let c1_out = activate(&c1_pre, cfg.c1.activation);
        let (s2_pooled, s2_pool) = maxpool2x2(&c1_out)?;
        let s2_out = activate(&s2_pooled, cfg.s2.activation);
        let c3_pre = conv2d_valid(&s2_out, &p.c3)?;
        let c3_out = activate(&c3_pre, cfg.c3.activation);
        let (s4_pooled, s4_pool) = maxpool2x2(&c3_out)?;
        let s4_out = activate(&s4_pooled, cfg.s4.activation);
        let c5_pre = conv2d_valid(&s4_out, &p.c5)?;
        let c5_out = activate(&c5_pre, cfg.c5.activation);
        let f6_pre = conv2d_valid(&c5_out, &p.f6)?;
        let f6_out = activate(&f6_pre, cfg.f6.activation);

        let scores = f6_out.data().to_vec();
        Ok((
            scores,
            ForwardCache {
                input: image.clone(),
                c1_pre,
                c1_out,
                s2_pooled,
                s2_out,
                s2_pool,
                c3_pre,
                c3_out,
                s4_pooled,
                s4_out,
                s4_pool,
                c5_pre,
                c5_out,
                f6_pre,
                f6_out,
            },
        ))
    }

    pub fn scores(&self, image: &Tensor) -> Result<Vec<f64>> {
        self.forward(image).map(|(s, _)| s)
    }

    /// Parameter gradients of the scalar loss whose gradient wrt the scores is `grad_scores`.
    pub fn backward(&self, cache: &ForwardCache, grad_scores: &[f64]) -> Result<GradientSet> {
        let f6_shape = Shape::new(self.config.f6.neurons, 1, 1);
        if grad_scores.len() != f6_shape.maps {
            return Err(Error::dimension(
                "backward",
                f6_shape.maps,
                grad_scores.len(),
            ));
        }
        if cache.input.shape() != self.input_shape() || cache.f6_out.shape() != f6_shape {
            return Err(Error::dimension(
                "backward",
                format!("cache for input {}", self.input_shape()),
                format!("cache for input {}", cache.input.shape()),
            ));
        }
        let cfg = &self.config;
        let p = &self.params;

        let g = Tensor::from_vec(f6_shape, grad_scores.to_vec())?;
        let g = activate_backward(&cache.f6_out, &g, cfg.f6.activation)?;
        let f6 = conv2d_param_grads(&cache.c5_out, &p.f6, &g)?;
        let g = conv2d_input_grad(cache.c5_out.shape(), &p.f6, &g)?;

        let g = activate_backward(&cache.c5_out, &g, cfg.c5.activation)?;
        let c5 = conv2d_param_grads(&cache.s4_out, &p.c5, &g)?;
        let g = conv2d_input_grad(cache.s4_out.shape(), &p.c5, &g)?;

        let g = activate_backward(&cache.s4_out, &g, cfg.s4.activation)?;
        let g = maxpool2x2_backward(&cache.s4_pool, &g, cache.c3_out.shape())?;
        let g = activate_backward(&cache.c3_out, &g, cfg.c3.activation)?;
        let c3 = conv2d_param_grads(&cache.s2_out, &p.c3, &g)?;
        let g = conv2d_input_grad(cache.s2_out.shape(), &p.c3, &g)?;

        let g = activate_backward(&cache.s2_out, &g, cfg.s2.activation)?;
        let g = maxpool2x2_backward(&cache.s2_pool, &g, cache.c1_out.shape())?;
        let g = activate_backward(&cache.c1_out, &g, cfg.c1.activation)?;
        let c1 = conv2d_param_grads(&cache.input, &p.c1, &g)?;

        Ok(ParamBanks { c1, c3, c5, f6 })
    }
}
