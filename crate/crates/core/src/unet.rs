//! Dense-block U-Net.
//!
//! Encoder: `depth` dense blocks; every block but the last is followed by
//! 2x2 average pooling and its pre-pool output is kept as a skip. Inside a
//! block the first conv reads the block input and each later conv reads
//! `concat(previous output, block input)`; the block output is the last
//! conv's output. The last block feeds a single 3x3 bottleneck conv.
//!
//! Decoder: `depth - 1` transpose convolutions, each doubling resolution.
//! The output of transpose conv `k` is concatenated with the skip of block
//! `depth - 2 - k` (same resolution), so the first block's skip meets the
//! last transpose conv. A linear 1x1 head maps to the 48 output channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::sample::{INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::roadmask::{apply_masks, RoadMasks};
use crate::scalar::Scalar;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    /// Number of dense blocks.
    pub depth: usize,
    pub layers_per_block: usize,
    /// Conv width of the first block.
    pub base_channels: usize,
    /// Width added per block.
    pub growth: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Frame extents the model is built for.
    pub height: usize,
    pub width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            layers_per_block: 4,
            base_channels: 16,
            growth: 16,
            in_channels: INPUT_CHANNELS,
            out_channels: OUTPUT_CHANNELS,
            height: 128,
            width: 128,
        }
    }
}

impl ArchConfig {
    /// Conv width of block `b`.
    pub fn block_width(&self, b: usize) -> usize {
        self.base_channels + b * self.growth
    }

    pub fn block_input_channels(&self, b: usize) -> usize {
        if b == 0 {
            self.in_channels
        } else {
            self.block_width(b - 1)
        }
    }

    /// Spatial alignment required by `depth - 1` poolings.
    pub fn alignment(&self) -> usize {
        1 << (self.depth - 1)
    }

    /// Extents after zero-padding up to the next multiple of [`alignment`](Self::alignment).
    pub fn padded_extent(&self) -> (usize, usize) {
        let a = self.alignment();
        (self.height.div_ceil(a) * a, self.width.div_ceil(a) * a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig(format!("depth {} < 2", self.depth)));
        }
        if self.depth > 16 {
            return Err(Error::InvalidConfig(format!("depth {} is unreasonably deep", self.depth)));
        }
        if self.layers_per_block == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig("layer counts and widths must be positive".into()));
        }
        let a = self.alignment();
        if self.height < a || self.width < a {
            return Err(Error::InvalidConfig(format!(
                "{}x{} frames cannot be halved {} times (need at least {} per side)",
                self.height,
                self.width,
                self.depth - 1,
                a
            )));
        }
        Ok(())
    }

    /// Static description of every stage.
    pub fn plan(&self) -> Result<ArchPlan> {
        self.validate()?;
        let (mut h, mut w) = self.padded_extent();
        let mut blocks = Vec::with_capacity(self.depth);
        for b in 0..self.depth {
            blocks.push(BlockPlan {
                in_channels: self.block_input_channels(b),
                width: self.block_width(b),
                extent: (h, w),
            });
            if b + 1 < self.depth {
                h /= 2;
                w /= 2;
            }
        }
        let last = self.block_width(self.depth - 1);
        let mut ups = Vec::with_capacity(self.depth - 1);
        let mut channels = last;
        for k in 0..self.depth - 1 {
            let skip_block = self.depth - 2 - k;
            let out = self.block_width(skip_block);
            ups.push(UpPlan {
                in_channels: channels,
                out_channels: out,
                in_extent: (h, w),
                out_extent: (2 * h, 2 * w),
                skip_block,
                fused_channels: out + blocks[skip_block].width,
            });
            channels = out + blocks[skip_block].width;
            h *= 2;
            w *= 2;
        }
        Ok(ArchPlan { blocks, bottleneck_channels: last, ups, head_in: channels })
    }

    /// Ordered `(name, shape)` of every parameter array.
    pub fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let plan = self.plan()?;
        let mut out = Vec::new();
        for (b, bp) in plan.blocks.iter().enumerate() {
            for l in 0..self.layers_per_block {
                let cin = if l == 0 { bp.in_channels } else { bp.width + bp.in_channels };
                out.push((format!("block{}.conv{}.weight", b, l), vec![bp.width, cin, 3, 3]));
                out.push((format!("block{}.conv{}.bias", b, l), vec![bp.width]));
            }
        }
        let c = plan.bottleneck_channels;
        out.push(("bottleneck.weight".into(), vec![c, c, 3, 3]));
        out.push(("bottleneck.bias".into(), vec![c]));
        for (k, up) in plan.ups.iter().enumerate() {
            out.push((format!("up{}.weight", k), vec![up.in_channels, up.out_channels, 2, 2]));
            out.push((format!("up{}.bias", k), vec![up.out_channels]));
        }
        out.push(("head.weight".into(), vec![self.out_channels, plan.head_in, 1, 1]));
        out.push(("head.bias".into(), vec![self.out_channels]));
        Ok(out)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.parameter_shapes()?.iter().map(|(_, s)| s.iter().product::<usize>()).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPlan {
    pub in_channels: usize,
    pub width: usize,
    pub extent: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpPlan {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_extent: (usize, usize),
    pub out_extent: (usize, usize),
    /// Block whose pre-pool output is concatenated onto this stage's output.
    pub skip_block: usize,
    /// Channels after that concatenation.
    pub fused_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchPlan {
    pub blocks: Vec<BlockPlan>,
    pub bottleneck_channels: usize,
    pub ups: Vec<UpPlan>,
    pub head_in: usize,
}

/// Named parameter arrays in [`ArchConfig::parameter_shapes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    config: ArchConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn named(&self) -> Vec<(String, Tensor<S>)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Rebuilds parameters from named arrays, checking names and shapes
    /// against `config`.
    pub fn from_named(config: ArchConfig, arrays: Vec<(String, Tensor<S>)>) -> Result<Self> {
        let shapes = config.parameter_shapes()?;
        if shapes.len() != arrays.len() {
            return Err(Error::Malformed(format!("expected {} arrays, found {}", shapes.len(), arrays.len())));
        }
        let mut names = Vec::with_capacity(shapes.len());
        let mut tensors = Vec::with_capacity(shapes.len());
        for ((name, shape), (found, t)) in shapes.into_iter().zip(arrays) {
            if name != found || shape != t.shape() {
                return Err(Error::Malformed(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    found,
                    t.shape(),
                    name,
                    shape
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { config, names, tensors })
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Fan-in scaled uniform initialization, deterministic in `seed`. Biases
/// start at zero.
pub fn build_model<S: Scalar>(config: &ArchConfig, seed: u64) -> Result<ModelParams<S>> {
    let shapes = config.parameter_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(shapes.len());
    let mut tensors = Vec::with_capacity(shapes.len());
    for (name, shape) in shapes {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(shape)
        } else {
            let fan_in = if name.starts_with("up") { shape[0] } else { shape[1] * shape[2] * shape[3] };
            let gain = if name.starts_with("head") { 1.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| S::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
            Tensor::new(shape, data)?
        };
        names.push(name);
        tensors.push(t);
    }
    Ok(ModelParams { config: config.clone(), names, tensors })
}

/// Handles of the parameters placed on a graph, in parameter order.
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn place<S: Scalar>(g: &mut Graph<S>, params: &ModelParams<S>, requires_grad: bool) -> Self {
        Self(params.tensors.iter().map(|t| g.leaf(t.clone().with_requires_grad(requires_grad))).collect())
    }

    /// Wraps leaves already on a graph, in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Shapes observed while running the network.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShapeTrace {
    /// Output extent of every block.
    pub blocks: Vec<(usize, usize, usize)>,
    /// `(channels in, channels out, extent out)` of every transpose conv.
    pub ups: Vec<(usize, usize, (usize, usize))>,
    /// `(stage, skip block, skip channels, fused channels)`.
    pub fusions: Vec<(usize, usize, usize, usize)>,
}

fn dims(g: &Graph<impl Scalar>, v: Var) -> (usize, usize, usize, usize) {
    let s = g.value(v).shape();
    (s[0], s[1], s[2], s[3])
}

/// One dense block: conv, then `concat(prev, block input)` convs, each with ReLU.
pub fn dense_block<S: Scalar>(g: &mut Graph<S>, input: Var, convs: &[(Var, Var)]) -> Result<Var> {
    let mut h = input;
    for (l, &(w, b)) in convs.iter().enumerate() {
        let x = if l == 0 { input } else { g.concat_channels(h, input)? };
        let c = g.conv2d(x, w, b, 1, 1)?;
        h = g.relu(c)?;
    }
    Ok(h)
}

/// Builds the network on `g` for a `[N, Cin, H, W]` input of the configured
/// extents and returns the `[N, out_channels, H, W]` output node.
pub fn forward_graph<S: Scalar>(
    g: &mut Graph<S>,
    config: &ArchConfig,
    params: &ParamVars,
    input: Var,
    trace: Option<&mut ShapeTrace>,
) -> Result<Var> {
    let plan = config.plan()?;
    let (n, c, h, w) = g.value(input).dims4("forward")?;
    if c != config.in_channels || (h, w) != (config.height, config.width) {
        return Err(Error::shape(
            "forward",
            format!("input {:?}, model expects {} channels at {}x{}", g.value(input).shape(), config.in_channels, config.height, config.width),
        ));
    }
    let mut local = ShapeTrace::default();
    let p = params.vars();
    let mut next = 0;
    let mut take = || {
        let pair = (p[next], p[next + 1]);
        next += 2;
        pair
    };

    let (ph, pw) = config.padded_extent();
    let mut x = if (ph, pw) == (h, w) {
        input
    } else {
        let src = g.value(input);
        let mut data = vec![S::zero(); n * c * ph * pw];
        for plane in 0..n * c {
            for y in 0..h {
                let s = (plane * h + y) * w;
                let d = (plane * ph + y) * pw;
                data[d..d + w].copy_from_slice(&src.data()[s..s + w]);
            }
        }
        g.leaf(Tensor::new(vec![n, c, ph, pw], data)?)
    };

    let mut skips = Vec::with_capacity(config.depth);
    for (b, bp) in plan.blocks.iter().enumerate() {
        let convs: Vec<(Var, Var)> = (0..config.layers_per_block).map(|_| take()).collect();
        let out = dense_block(g, x, &convs)?;
        let (_, oc, oh, ow) = dims(g, out);
        if (oc, (oh, ow)) != (bp.width, bp.extent) {
            return Err(Error::shape("forward", format!("block {} produced {}x{}x{}", b, oc, oh, ow)));
        }
        local.blocks.push((oc, oh, ow));
        if b + 1 < config.depth {
            skips.push(out);
            x = g.avg_pool2(out)?;
        } else {
            x = out;
        }
    }
    let (bw, bb) = take();
    let c = g.conv2d(x, bw, bb, 1, 1)?;
    x = g.relu(c)?;

    for (k, up) in plan.ups.iter().enumerate() {
        let (uw, ub) = take();
        let u = g.transpose_conv2d(x, uw, ub)?;
        let u = g.relu(u)?;
        let (_, uc, uh, uwid) = dims(g, u);
        local.ups.push((dims(g, x).1, uc, (uh, uwid)));
        let skip = skips[up.skip_block];
        let (_, sc, sh, sw) = dims(g, skip);
        if (sh, sw) != (uh, uwid) {
            return Err(Error::shape("forward", format!("skip {} at {}x{} meets stage {} at {}x{}", up.skip_block, sh, sw, k, uh, uwid)));
        }
        x = g.concat_channels(u, skip)?;
        local.fusions.push((k, up.skip_block, sc, dims(g, x).1));
    }
    let (hw, hb) = take();
    let mut out = g.conv2d(x, hw, hb, 0, 1)?;
    if (ph, pw) != (h, w) {
        out = g.crop(out, h, w)?;
    }
    debug_assert_eq!(next, p.len());
    if let Some(t) = trace {
        *t = local;
    }
    Ok(out)
}

/// Raw network output for a batch `[N, Cin, H, W]` or a single `[Cin, H, W]` input.
pub fn forward<S: Scalar>(params: &ModelParams<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    let single = input.rank() == 3;
    let batch = if single {
        let s = input.shape();
        input.clone().reshape(vec![1, s[0], s[1], s[2]])?
    } else {
        input.clone()
    };
    let mut g = Graph::new();
    let vars = ParamVars::place(&mut g, params, false);
    let x = g.leaf(batch);
    let out = forward_graph(&mut g, &params.config, &vars, x, None)?;
    let out = g.value(out).clone();
    if single {
        let s = out.shape().to_vec();
        out.reshape(vec![s[1], s[2], s[3]])
    } else {
        Ok(out)
    }
}

/// Forward pass clamped to `[0, 1]`, then masked when `masks` is given.
pub fn predict<S: Scalar>(params: &ModelParams<S>, input: &Tensor<S>, masks: Option<&RoadMasks>) -> Result<Tensor<S>> {
    let raw = forward(params, input)?;
    let clamped = raw.map(|v| v.max(S::zero()).min(S::one()));
    match masks {
        Some(m) => apply_masks(&clamped, m),
        None => Ok(clamped),
    }
}

/// MSE of a batch and the gradient of every parameter.
pub fn loss_and_gradients<S: Scalar>(
    params: &ModelParams<S>,
    inputs: Tensor<S>,
    targets: Tensor<S>,
) -> Result<(f64, Vec<Vec<S>>)> {
    let mut g = Graph::new();
    let vars = ParamVars::place(&mut g, params, true);
    let x = g.leaf(inputs);
    let y = g.leaf(targets);
    let out = forward_graph(&mut g, &params.config, &vars, x, None)?;
    let loss = g.mse_loss(out, y)?;
    let value = g.value(loss).item().to_f64_lossless();
    g.backward(loss)?;
    let grads = vars
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| vec![S::zero(); t.len()]))
        .collect();
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(depth: usize, h: usize) -> ArchConfig {
        ArchConfig { depth, base_channels: 3, growth: 2, in_channels: 5, out_channels: 4, height: h, width: h, ..ArchConfig::default() }
    }

    #[test]
    fn census_for_depth_eight() {
        let cfg = ArchConfig::default();
        let names: Vec<String> = cfg.parameter_shapes().unwrap().into_iter().map(|(n, _)| n).collect();
        let weights: Vec<&String> = names.iter().filter(|n| n.ends_with(".weight")).collect();
        let block_convs = weights.iter().filter(|n| n.starts_with("block")).count();
        let ups = weights.iter().filter(|n| n.starts_with("up")).count();
        assert_eq!(block_convs, 8 * 4);
        assert_eq!(ups, 7);
        assert_eq!(weights.iter().filter(|n| n.starts_with("bottleneck")).count(), 1);
        assert_eq!(weights.iter().filter(|n| n.starts_with("head")).count(), 1);
        assert_eq!(weights.len(), 32 + 1 + 7 + 1);
        assert_eq!(names.len(), 2 * weights.len());
    }

    #[test]
    fn divisibility_error() {
        let cfg = ArchConfig { height: 64, width: 64, ..ArchConfig::default() };
        // 64 / 2^7 < 1
        assert!(matches!(build_model::<f32>(&cfg, 0), Err(Error::InvalidConfig(_))));
        assert!(build_model::<f32>(&ArchConfig { depth: 1, ..tiny(2, 8) }, 0).is_err());
    }

    #[test]
    fn deterministic_initialization() {
        let cfg = tiny(3, 8);
        let a = build_model::<f32>(&cfg, 9).unwrap();
        let b = build_model::<f32>(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_model::<f32>(&cfg, 10).unwrap());
        assert_eq!(a.count(), cfg.parameter_count().unwrap());
    }

    #[test]
    fn dense_block_channels_and_extent() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![1, 5, 6, 6], 0.5));
        let growth = 4;
        let mut convs = Vec::new();
        for l in 0..4 {
            let cin = if l == 0 { 5 } else { growth + 5 };
            let w = g.leaf(Tensor::zeros(vec![growth, cin, 3, 3]));
            let b = g.leaf(Tensor::zeros(vec![growth]));
            convs.push((w, b));
        }
        // layer-2 input is concat(growth, block input)
        assert_eq!(g.value(convs[1].0).shape()[1], growth + 5);
        let out = dense_block(&mut g, x, &convs).unwrap();
        assert_eq!(g.value(out).shape(), &[1, growth, 6, 6]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depth_two_shape_chain() {
        let cfg = tiny(2, 4);
        let params = build_model::<f64>(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let vars = ParamVars::place(&mut g, &params, false);
        let x = g.leaf(Tensor::full(vec![1, 5, 4, 4], 0.3));
        let mut trace = ShapeTrace::default();
        let out = forward_graph(&mut g, &cfg, &vars, x, Some(&mut trace)).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 4, 4, 4]);
        assert_eq!(trace.blocks, vec![(3, 4, 4), (5, 2, 2)]);
        assert_eq!(trace.ups, vec![(5, 3, (4, 4))]);
        assert_eq!(trace.fusions, vec![(0, 0, 3, 6)]);
    }

    #[test]
    fn padding_handles_unaligned_frames() {
        let cfg = tiny(3, 10);
        assert_eq!(cfg.padded_extent(), (12, 12));
        let params = build_model::<f64>(&cfg, 2).unwrap();
        let out = forward(&params, &Tensor::full(vec![5, 10, 10], 0.2)).unwrap();
        assert_eq!(out.shape(), &[4, 10, 10]);
    }

    #[test]
    fn predict_clamps_and_masks() {
        let cfg = tiny(2, 4);
        let mut params = build_model::<f64>(&cfg, 3).unwrap();
        let last = params.tensors().len() - 1;
        params.tensors_mut()[last].data_mut().copy_from_slice(&[2.0, -2.0, 0.5, 0.5]);
        let x = Tensor::full(vec![5, 4, 4], 0.1);
        let raw = forward(&params, &x).unwrap();
        let p = predict(&params, &x, None).unwrap();
        assert_eq!(p, raw.map(|v| v.clamp(0.0, 1.0)));
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
