//! U-Net encoder-decoder with three parallel quantile heads.
//!
//! The trunk is a classic U-Net (two 3x3 conv + ReLU per level, 2x2 max
//! pooling, 2x2 transposed-convolution upsampling, skip concatenation) up to
//! the top-level upsampling. There the concatenated features feed three
//! independent heads (lower, median, upper), each two 3x3 conv + ReLU and a
//! linear 1x1 projection to one channel.

pub mod checkpoint;
pub mod layers;

use ndarray::{Array2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::QuantileSpec;
use crate::raster::{BandStack, QuantileTriple};
use crate::scalar::Scalar;

use layers::{maxpool2, maxpool2_backward, reflect_pad, relu_backward_inplace, relu_inplace, Conv2d, Feat, UpConv};

pub const HEAD_NAMES: [&str; 3] = ["lower", "median", "upper"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of 2x downsampling steps.
    pub depth: usize,
    /// Channels at full resolution; doubled at every level.
    pub base_features: usize,
    pub kernel_size: usize,
    pub dropout_rate: f64,
    pub in_bands: usize,
    pub quantiles: QuantileSpec,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_features: 32,
            kernel_size: 3,
            dropout_rate: 0.5,
            in_bands: 10,
            quantiles: QuantileSpec::default(),
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_features == 0 {
            return Err(Error::Config("base_features must be at least 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        if self.in_bands == 0 {
            return Err(Error::Config("in_bands must be at least 1".into()));
        }
        self.quantiles.validate()
    }

    /// Side lengths must be multiples of this to avoid padding.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Gradient buffers parallel to a model's parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T>(pub Vec<Vec<T>>);

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        Grads(params.iter().map(|t| vec![T::zero(); t.data.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.0 {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active, masks drawn from this seed.
    Train {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Conv2d,
    conv2: Conv2d,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    conv1: Conv2d,
    conv2: Conv2d,
    out: Conv2d,
}

#[derive(Debug, Clone)]
struct Arch {
    down: Vec<Block>,
    bottom: Block,
    /// `ups[i]` upsamples level `i + 1` to level `i`.
    ups: Vec<UpConv>,
    /// Decoder blocks for levels `1..depth`; level 0 is handled by the heads.
    dec: Vec<Option<Block>>,
    heads: [Head; 3],
}

/// Trainable model state: configuration plus named parameter tensors.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: ModelConfig,
    params: Vec<Tensor<T>>,
    arch: Arch,
}

struct Builder<'a, T> {
    params: Vec<Tensor<T>>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn tensor(&mut self, name: String, shape: Vec<usize>, init: impl Fn(&mut ChaCha8Rng) -> f64) -> usize {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(init(self.rng))).collect();
        self.params.push(Tensor { name, shape, data });
        self.params.len() - 1
    }

    fn he(fan_in: usize) -> Normal<f64> {
        Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std")
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: f64) -> Conv2d {
        let dist = Self::he(cin * k * k);
        let weight = self.tensor(format!("{name}.weight"), vec![cout, cin, k, k], |r| dist.sample(r));
        let bias = self.tensor(format!("{name}.bias"), vec![cout], |_| bias);
        Conv2d { weight, bias, cin, cout, k }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Block {
        Block {
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, k, 0.0),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, k, 0.0),
        }
    }

    fn upconv(&mut self, name: &str, cin: usize, cout: usize) -> UpConv {
        let dist = Self::he(cin * 4);
        let weight = self.tensor(format!("{name}.weight"), vec![cin, cout, 2, 2], |r| dist.sample(r));
        let bias = self.tensor(format!("{name}.bias"), vec![cout], |_| 0.0);
        UpConv { weight, bias, cin, cout }
    }
}

fn build_arch<T: Scalar>(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> (Arch, Vec<Tensor<T>>) {
    let mut b = Builder { params: Vec::new(), rng };
    let k = cfg.kernel_size;
    let f = |level: usize| cfg.base_features << level;

    let mut down = Vec::with_capacity(cfg.depth);
    let mut cin = cfg.in_bands;
    for level in 0..cfg.depth {
        down.push(b.block(&format!("enc{level}"), cin, f(level), k));
        cin = f(level);
    }
    let bottom = b.block("bottleneck", cin, f(cfg.depth), k);

    let mut ups = vec![None; cfg.depth];
    let mut dec = vec![None; cfg.depth];
    for level in (0..cfg.depth).rev() {
        ups[level] = Some(b.upconv(&format!("up{level}"), f(level + 1), f(level)));
        if level > 0 {
            dec[level] = Some(b.block(&format!("dec{level}"), 2 * f(level), f(level), k));
        }
    }
    let levels = cfg.quantiles.levels();
    let heads = [0, 1, 2].map(|h| {
        let name = format!("head.{}", HEAD_NAMES[h]);
        Head {
            conv1: b.conv(&format!("{name}.conv1"), 2 * f(0), f(0), k, 0.0),
            conv2: b.conv(&format!("{name}.conv2"), f(0), f(0), k, 0.0),
            // Output biases start at the head's quantile level of the [0, 1] target range.
            out: b.conv(&format!("{name}.out"), f(0), 1, 1, levels[h]),
        }
    });
    let arch = Arch { down, bottom, ups: ups.into_iter().map(Option::unwrap).collect(), dec, heads };
    (arch, b.params)
}

struct BlockTape<T> {
    input: Feat<T>,
    a1: Feat<T>,
    a2: Feat<T>,
    keep: Option<Vec<T>>,
}

struct HeadTape<T> {
    z1: Feat<T>,
    z2: Feat<T>,
}

/// Activations retained from a forward pass for backpropagation.
pub struct Tape<T> {
    enc: Vec<BlockTape<T>>,
    pool_arg: Vec<Vec<u32>>,
    pooled_dims: Vec<(usize, usize, usize)>,
    bottom: BlockTape<T>,
    /// Per level: upconv input and post-ReLU output.
    up: Vec<(Feat<T>, Feat<T>)>,
    dec: Vec<Option<BlockTape<T>>>,
    top: Feat<T>,
    heads: Vec<HeadTape<T>>,
    pub outputs: [Feat<T>; 3],
}

impl<T: Scalar> UNet<T> {
    /// Builds a freshly initialised network; identical `(config, seed)` give identical parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (arch, params) = build_arch(config, &mut rng);
        Ok(Self { config: config.clone(), params, arch })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the dropout probability used in training mode.
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        let cfg = ModelConfig { dropout_rate: rate, ..self.config.clone() };
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|t| t.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|t| t.name == name)
    }

    /// Indices of the parameters owned exclusively by head `h` (0 lower, 1 median, 2 upper).
    pub fn head_param_indices(&self, h: usize) -> Vec<usize> {
        let prefix = format!("head.{}.", HEAD_NAMES[h]);
        (0..self.params.len()).filter(|&i| self.params[i].name.starts_with(&prefix)).collect()
    }

    /// Replaces all parameters; names and shapes must match this architecture.
    pub fn load_params(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (have, got) in self.params.iter().zip(&tensors) {
            if have.name != got.name || have.shape != got.shape || got.data.len() != have.data.len() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    got.name, got.shape, have.name, have.shape
                )));
            }
        }
        self.params = tensors;
        Ok(())
    }

    fn p(&self, idx: usize) -> &[T] {
        &self.params[idx].data
    }

    fn conv(&self, layer: &Conv2d, x: &Feat<T>, scratch: &mut Vec<T>) -> Feat<T> {
        layer.forward(x, self.p(layer.weight), self.p(layer.bias), scratch)
    }

    fn run_block(&self, block: &Block, input: Feat<T>, rng: &mut Option<ChaCha8Rng>, scratch: &mut Vec<T>) -> (Feat<T>, BlockTape<T>) {
        let mut a1 = self.conv(&block.conv1, &input, scratch);
        relu_inplace(&mut a1);
        let mut a2 = self.conv(&block.conv2, &a1, scratch);
        relu_inplace(&mut a2);
        let rate = self.config.dropout_rate;
        let (out, keep) = match rng {
            Some(r) if rate > 0.0 => {
                let scale = T::lit(1.0 / (1.0 - rate));
                let keep: Vec<T> = (0..a2.data.len()).map(|_| if r.random::<f64>() >= rate { scale } else { T::zero() }).collect();
                let mut out = a2.clone();
                for (v, k) in out.data.iter_mut().zip(&keep) {
                    *v *= *k;
                }
                (out, Some(keep))
            }
            _ => (a2.clone(), None),
        };
        (out, BlockTape { input, a1, a2, keep })
    }

    fn check_input_dims(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.config.in_bands {
            return Err(Error::Shape(format!("model expects {} input bands, got {c}", self.config.in_bands)));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not a multiple of {m}")));
        }
        Ok(())
    }

    /// Forward pass on an input whose sides are multiples of `2^depth`, keeping activations.
    pub fn forward_tape(&self, x: &Feat<T>, mode: Mode) -> Result<Tape<T>> {
        self.check_input_dims(x.c, x.h, x.w)?;
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Inference => None,
        };
        let mut scratch = Vec::new();
        let depth = self.config.depth;

        let mut enc = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        let mut pool_arg = Vec::with_capacity(depth);
        let mut pooled_dims = Vec::with_capacity(depth);
        let mut cur = x.clone();
        for block in &self.arch.down {
            let (out, tape) = self.run_block(block, cur, &mut rng, &mut scratch);
            let (pooled, arg) = maxpool2(&out);
            pooled_dims.push((out.c, out.h, out.w));
            enc.push(tape);
            skips.push(out);
            pool_arg.push(arg);
            cur = pooled;
        }
        let (mut cur, bottom) = self.run_block(&self.arch.bottom, cur, &mut rng, &mut scratch);

        let mut up = (0..depth).map(|_| None).collect::<Vec<_>>();
        let mut dec = (0..depth).map(|_| None).collect::<Vec<_>>();
        let mut top = None;
        for level in (0..depth).rev() {
            let layer = &self.arch.ups[level];
            let mut u = layer.forward(&cur, self.p(layer.weight), self.p(layer.bias));
            relu_inplace(&mut u);
            let cat = Feat::concat(&skips[level], &u);
            up[level] = Some((cur, u));
            match &self.arch.dec[level] {
                Some(block) => {
                    let (out, tape) = self.run_block(block, cat, &mut rng, &mut scratch);
                    dec[level] = Some(tape);
                    cur = out;
                }
                None => {
                    top = Some(cat);
                    cur = Feat::zeros(0, 0, 0);
                }
            }
        }
        let top = top.expect("level 0 has no decoder block");

        let mut heads = Vec::with_capacity(3);
        let mut outputs = Vec::with_capacity(3);
        for head in &self.arch.heads {
            let mut z1 = self.conv(&head.conv1, &top, &mut scratch);
            relu_inplace(&mut z1);
            let mut z2 = self.conv(&head.conv2, &z1, &mut scratch);
            relu_inplace(&mut z2);
            outputs.push(self.conv(&head.out, &z2, &mut scratch));
            heads.push(HeadTape { z1, z2 });
        }
        let outputs: [Feat<T>; 3] = outputs.try_into().ok().expect("three heads");
        Ok(Tape { enc, pool_arg, pooled_dims, bottom, up: up.into_iter().map(Option::unwrap).collect(), dec, top, heads, outputs })
    }

    fn block_backward(
        &self,
        block: &Block,
        tape: &BlockTape<T>,
        mut grad: Vec<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
        scratch: &mut Vec<T>,
    ) -> Option<Feat<T>> {
        if let Some(keep) = &tape.keep {
            for (g, k) in grad.iter_mut().zip(keep) {
                *g *= *k;
            }
        }
        relu_backward_inplace(&tape.a2, &mut grad);
        let mut da1 = self.conv_backward(&block.conv2, &tape.a1, &grad, grads, true, scratch).expect("dx requested");
        relu_backward_inplace(&tape.a1, &mut da1.data);
        self.conv_backward(&block.conv1, &tape.input, &da1.data, grads, need_dx, scratch)
    }

    fn conv_backward(
        &self,
        layer: &Conv2d,
        x: &Feat<T>,
        dout: &[T],
        grads: &mut Grads<T>,
        need_dx: bool,
        scratch: &mut Vec<T>,
    ) -> Option<Feat<T>> {
        let (dw, db) = two_mut(&mut grads.0, layer.weight, layer.bias);
        layer.backward(x, dout, self.p(layer.weight), dw, db, need_dx, scratch)
    }

    /// Accumulates into `grads` the gradient of `sum_h <dout[h], output_h>`.
    pub fn backward(&self, tape: &Tape<T>, douts: [&[T]; 3], grads: &mut Grads<T>) {
        let mut scratch = Vec::new();
        let depth = self.config.depth;

        let mut dtop = vec![T::zero(); tape.top.data.len()];
        for ((head, ht), dout) in self.arch.heads.iter().zip(&tape.heads).zip(douts) {
            let mut dz2 = self.conv_backward(&head.out, &ht.z2, dout, grads, true, &mut scratch).expect("dx");
            relu_backward_inplace(&ht.z2, &mut dz2.data);
            let mut dz1 = self.conv_backward(&head.conv2, &ht.z1, &dz2.data, grads, true, &mut scratch).expect("dx");
            relu_backward_inplace(&ht.z1, &mut dz1.data);
            let d = self.conv_backward(&head.conv1, &tape.top, &dz1.data, grads, true, &mut scratch).expect("dx");
            for (a, b) in dtop.iter_mut().zip(&d.data) {
                *a += *b;
            }
        }

        let mut dskips: Vec<Vec<T>> = Vec::with_capacity(depth);
        let mut dcat = dtop;
        for level in 0..depth {
            if level > 0 {
                let block = self.arch.dec[level].as_ref().expect("decoder block");
                let tape_b = tape.dec[level].as_ref().expect("decoder tape");
                dcat = self.block_backward(block, tape_b, dcat, grads, true, &mut scratch).expect("dx").data;
            }
            let (up_in, up_out) = &tape.up[level];
            let skip_len = tape.pooled_dims[level].0 * up_out.hw();
            let mut du = dcat.split_off(skip_len);
            dskips.push(dcat);
            relu_backward_inplace(up_out, &mut du);
            let layer = &self.arch.ups[level];
            let (dw, db) = two_mut(&mut grads.0, layer.weight, layer.bias);
            dcat = layer.backward(up_in, &du, self.p(layer.weight), dw, db).data;
        }

        let mut dx = self.block_backward(&self.arch.bottom, &tape.bottom, dcat, grads, true, &mut scratch).expect("dx");
        for level in (0..depth).rev() {
            let mut ds = std::mem::take(&mut dskips[level]);
            maxpool2_backward(&dx.data, &tape.pool_arg[level], &mut ds);
            let need_dx = level > 0;
            match self.block_backward(&self.arch.down[level], &tape.enc[level], ds, grads, need_dx, &mut scratch) {
                Some(d) => dx = d,
                None => break,
            }
        }
    }

    /// Inference or training-mode forward on a `bands x H x W` array of any size.
    ///
    /// Sides that are not multiples of `2^depth` are reflect-padded and the
    /// outputs cropped back to the input size.
    pub fn forward(&self, input: ArrayView3<T>, mode: Mode) -> Result<QuantileTriple<T>> {
        let (c, h, w) = input.dim();
        if c != self.config.in_bands {
            return Err(Error::Shape(format!("model expects {} input bands, got {c}", self.config.in_bands)));
        }
        if h == 0 || w == 0 {
            return Err(Error::Shape("empty input".into()));
        }
        let x = Feat::from_vec(c, h, w, input.iter().copied().collect());
        let m = self.config.size_multiple();
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = reflect_pad(&x, hp, wp);
        let tape = self.forward_tape(&padded, mode)?;
        let crop = |f: &Feat<T>| Array2::from_shape_fn((h, w), |(i, j)| f.data[i * wp + j]);
        let [lo, med, up] = &tape.outputs;
        QuantileTriple::new(crop(lo), crop(med), crop(up))
    }

    pub fn forward_stack(&self, stack: &BandStack<T>, mode: Mode) -> Result<QuantileTriple<T>> {
        let (h, w) = stack.grid.shape();
        let mut arr = ndarray::Array3::zeros((stack.bands.len(), h, w));
        for (i, band) in stack.bands.iter().enumerate() {
            arr.index_axis_mut(ndarray::Axis(0), i).assign(&band.values);
        }
        self.forward(arr.view(), mode)
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b, "weight index precedes bias index");
    let (left, right) = v.split_at_mut(b);
    (&mut left[a], &mut right[0])
}
