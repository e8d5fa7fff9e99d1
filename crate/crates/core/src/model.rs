//! Full network: convolutional stem, positional embedding, a stack of
//! Grapher + FFN blocks, node average pooling and a two-layer head.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::grapher::{ffn_forward, grapher_forward, FfnParams, GrapherParams};
use crate::layers::{avgpool_all_nodes, conv_out_size, init_tensor, BatchNorm2d, Conv2dLayer, InitScheme, Linear, INIT_STD};
use crate::lrgc::{edge_stats, AttentionMatrix};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StemLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl StemLayerSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        StemLayerSpec {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_classes: usize,
    pub update_heads: usize,
    /// The last layer must output `embed_dim` channels.
    pub stem: Vec<StemLayerSpec>,
}

impl ModelConfig {
    /// 32x32 input, three stride-2 convs, 16 nodes of width 32, 4 blocks.
    pub fn desk() -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            in_channels: 3,
            embed_dim: 32,
            num_blocks: 4,
            num_classes: 10,
            update_heads: 4,
            stem: vec![
                StemLayerSpec::new(8, 3, 2, 1),
                StemLayerSpec::new(16, 3, 2, 1),
                StemLayerSpec::new(32, 3, 2, 1),
            ],
        }
    }

    /// 224x224 input, 196 nodes of width 192, 12 blocks, 1000 classes.
    pub fn imagenet() -> Self {
        let d = 192;
        ModelConfig {
            height: 224,
            width: 224,
            in_channels: 3,
            embed_dim: d,
            num_blocks: 12,
            num_classes: 1000,
            update_heads: 4,
            stem: vec![
                StemLayerSpec::new(d / 8, 3, 2, 1),
                StemLayerSpec::new(d / 4, 3, 2, 1),
                StemLayerSpec::new(d / 2, 3, 2, 1),
                StemLayerSpec::new(d, 3, 2, 1),
                StemLayerSpec::new(d, 3, 1, 1),
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "imagenet" => Ok(Self::imagenet()),
            other => Err(Error::Config(format!("unknown model preset `{other}` (expected desk or imagenet)"))),
        }
    }

    pub fn total_stride(&self) -> usize {
        self.stem.iter().map(|s| s.stride).product()
    }

    /// Spatial extent after each stem layer, starting with the input.
    pub fn stem_extents(&self) -> Result<Vec<(usize, usize)>> {
        let mut hw = vec![(self.height, self.width)];
        for (i, s) in self.stem.iter().enumerate() {
            let (h, w) = *hw.last().unwrap();
            let next = conv_out_size(h, s.kernel, s.stride, s.padding).zip(conv_out_size(w, s.kernel, s.stride, s.padding));
            match next {
                Some(e) => hw.push(e),
                None => return Err(Error::Config(format!("stem layer {i} does not fit a {h}x{w} input"))),
            }
        }
        Ok(hw)
    }

    pub fn node_grid(&self) -> Result<(usize, usize)> {
        self.validate()?;
        Ok(*self.stem_extents()?.last().unwrap())
    }

    pub fn num_nodes(&self) -> Result<usize> {
        self.node_grid().map(|(h, w)| h * w)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("in_channels", self.in_channels),
            ("embed_dim", self.embed_dim),
            ("num_blocks", self.num_blocks),
            ("num_classes", self.num_classes),
            ("update_heads", self.update_heads),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{k} must be positive")));
        }
        if self.stem.is_empty() {
            return Err(Error::Config("model.stem needs at least one layer".into()));
        }
        if self.stem.iter().any(|s| s.out_channels == 0 || s.kernel == 0 || s.stride == 0) {
            return Err(Error::Config("stem channels, kernels and strides must be positive".into()));
        }
        let last = self.stem.last().unwrap().out_channels;
        if last != self.embed_dim {
            return Err(Error::Config(format!(
                "last stem layer outputs {last} channels but embed_dim is {}",
                self.embed_dim
            )));
        }
        let stride = self.total_stride();
        if !self.height.is_multiple_of(stride) || !self.width.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by the stem's total stride {stride}",
                self.height, self.width
            )));
        }
        let grid = *self.stem_extents()?.last().unwrap();
        if grid != (self.height / stride, self.width / stride) {
            return Err(Error::Config(format!(
                "stem padding yields a {}x{} grid instead of {}x{}",
                grid.0,
                grid.1,
                self.height / stride,
                self.width / stride
            )));
        }
        if !(2 * self.embed_dim).is_multiple_of(self.update_heads) {
            return Err(Error::Config(format!(
                "update_heads {} must divide 2 * embed_dim = {}",
                self.update_heads,
                2 * self.embed_dim
            )));
        }
        Ok(())
    }

    /// `channels:kernel:stride:padding` per layer, comma separated.
    pub fn stem_string(&self) -> String {
        let parts: Vec<String> = self
            .stem
            .iter()
            .map(|s| format!("{}:{}:{}:{}", s.out_channels, s.kernel, s.stride, s.padding))
            .collect();
        parts.join(",")
    }

    pub fn parse_stem(text: &str) -> Result<Vec<StemLayerSpec>> {
        text.split(',')
            .map(|layer| {
                let nums: Vec<usize> = layer
                    .trim()
                    .split(':')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad stem layer `{layer}`")))?;
                match nums[..] {
                    [c, k, s, p] => Ok(StemLayerSpec::new(c, k, s, p)),
                    _ => Err(Error::Config(format!(
                        "stem layer `{layer}` must be channels:kernel:stride:padding"
                    ))),
                }
            })
            .collect()
    }

    pub const KEYS: [&'static str; 8] = [
        "height",
        "width",
        "in_channels",
        "embed_dim",
        "num_blocks",
        "num_classes",
        "update_heads",
        "stem",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || {
            value
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("model.{key}: `{value}` is not a non-negative integer")))
        };
        match key {
            "height" => self.height = num()?,
            "width" => self.width = num()?,
            "in_channels" => self.in_channels = num()?,
            "embed_dim" => self.embed_dim = num()?,
            "num_blocks" => self.num_blocks = num()?,
            "num_classes" => self.num_classes = num()?,
            "update_heads" => self.update_heads = num()?,
            "stem" => self.stem = Self::parse_stem(value)?,
            other => return Err(Error::Config(format!("unknown key `model.{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "in_channels" => self.in_channels.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "num_blocks" => self.num_blocks.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "update_heads" => self.update_heads.to_string(),
            "stem" => self.stem_string(),
            _ => return None,
        })
    }

    /// `key=value` lines (without the `model.` prefix).
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).unwrap());
        }
        s
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct StemStage {
    pub conv: Conv2dLayer,
    pub bn: BatchNorm2d,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub grapher: GrapherParams,
    pub ffn: FfnParams,
}

/// Parameter layout of the network; the values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub stem: Vec<StemStage>,
    pub pos_embed: ParamId,
    pub blocks: Vec<Block>,
    pub head_hidden: Linear,
    pub head_out: Linear,
    pub num_nodes: usize,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub tokens: Var,
    pub pooled: Var,
    pub attention: Vec<AttentionMatrix>,
}

/// Graph telemetry of one Grapher layer for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    pub avg_neighbors: f64,
    pub tau: f64,
}

impl ModelParams {
    pub fn new<T: Element>(store: &mut ParamStore<T>, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stem = Vec::with_capacity(config.stem.len());
        let mut in_c = config.in_channels;
        for (i, s) in config.stem.iter().enumerate() {
            let conv = Conv2dLayer::new(
                store,
                &format!("stem.{i}.conv"),
                in_c,
                s.out_channels,
                s.kernel,
                s.stride,
                s.padding,
                &mut rng,
            );
            let bn = BatchNorm2d::new(store, &format!("stem.{i}.bn"), s.out_channels);
            stem.push(StemStage { conv, bn });
            in_c = s.out_channels;
        }
        let d = config.embed_dim;
        let n = config.num_nodes()?;
        let pos_embed = store.add(
            "pos_embed",
            ParamKind::NoDecay,
            init_tensor(&[n, d], InitScheme::TruncNormal { std: INIT_STD }, &mut rng),
        );
        let blocks = (0..config.num_blocks)
            .map(|l| {
                Ok(Block {
                    grapher: GrapherParams::with_heads(store, &format!("blocks.{l}.grapher"), d, config.update_heads, &mut rng)?,
                    ffn: FfnParams::new(store, &format!("blocks.{l}.ffn"), d, &mut rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head_hidden = Linear::new(store, "head.fc1", d, d, true, &mut rng);
        let head_out = Linear::new(store, "head.fc2", d, config.num_classes, true, &mut rng);
        Ok(ModelParams {
            stem,
            pos_embed,
            blocks,
            head_hidden,
            head_out,
            num_nodes: n,
            dim: d,
        })
    }

    /// `[B, C, H, W]` image batch to `[B, N, D]` node features.
    pub fn stem_forward<T: Element>(&self, g: &mut Graph<'_, T>, images: Var, training: bool) -> Result<Var> {
        let mut x = images;
        for (i, st) in self.stem.iter().enumerate() {
            x = g.scoped(&format!("stem.{i}"), |g| -> Result<Var> {
                let y = st.conv.forward(g, x)?;
                let y = st.bn.forward(g, y, training)?;
                g.gelu(y)
            })?;
        }
        let s = g.shape(x).to_vec();
        let (b, d, n) = (s[0], s[1], s[2] * s[3]);
        if d != self.dim || n != self.num_nodes {
            return Err(Error::ShapeMismatch {
                op: "stem_forward",
                lhs: s,
                rhs: vec![self.dim, self.num_nodes],
            });
        }
        let x = g.reshape(x, &[b, d, n])?;
        g.permute(x, &[0, 2, 1])
    }

    /// Blocks over `[B, N, D]` tokens (positional embedding already added).
    pub fn backbone_forward<T: Element>(&self, g: &mut Graph<'_, T>, tokens: Var) -> Result<(Var, Vec<AttentionMatrix>)> {
        let mut x = tokens;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for (l, blk) in self.blocks.iter().enumerate() {
            x = g.scoped(&format!("block{l}"), |g| -> Result<Var> {
                let out = grapher_forward(g, x, &blk.grapher)?;
                attention.push(out.attention);
                ffn_forward(g, out.out, &blk.ffn)
            })?;
        }
        Ok((x, attention))
    }

    pub fn head_forward<T: Element>(&self, g: &mut Graph<'_, T>, pooled: Var) -> Result<Var> {
        g.scoped("head", |g| {
            let h = self.head_hidden.forward(g, pooled)?;
            let h = g.gelu(h)?;
            self.head_out.forward(g, h)
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, images: Var, training: bool) -> Result<ForwardOutput> {
        let stem = self.stem_forward(g, images, training)?;
        let pos = g.param(self.pos_embed);
        let tokens = g.add(stem, pos)?;
        let (x, attention) = self.backbone_forward(g, tokens)?;
        let pooled = avgpool_all_nodes(g, x)?;
        let logits = self.head_forward(g, pooled)?;
        Ok(ForwardOutput {
            logits,
            tokens,
            pooled,
            attention,
        })
    }

    pub fn taus(&self) -> Vec<ParamId> {
        self.blocks.iter().map(|b| b.grapher.lrgc.tau).collect()
    }

    /// Selected-edge count and threshold of every layer for a finished forward pass.
    pub fn layer_stats<T: Element>(&self, g: &Graph<'_, T>, out: &ForwardOutput) -> Result<Vec<LayerStats>> {
        out.attention
            .iter()
            .zip(&self.blocks)
            .enumerate()
            .map(|(layer, (a, blk))| {
                Ok(LayerStats {
                    layer,
                    avg_neighbors: edge_stats(&g.tensor(a.scores))?.avg_neighbors,
                    tau: blk.grapher.lrgc.tau_value(g.store()),
                })
            })
            .collect()
    }
}

/// Configuration, layout and values bundled together.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub store: ParamStore<T>,
}

impl<T: Element> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let params = ModelParams::new(&mut store, &config, seed)?;
        Ok(Model { config, params, store })
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
            store: self.store.cast(),
        }
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let s = images.shape();
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.height || s[3] != c.width {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                lhs: s.to_vec(),
                rhs: vec![0, c.in_channels, c.height, c.width],
            });
        }
        Ok(())
    }

    /// Eval-mode logits `[B, num_classes]`.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone());
        let out = self.params.forward(&mut g, x, false)?;
        Ok(g.tensor(out.logits))
    }

    /// Eval-mode per-layer graph statistics and score matrices for one batch.
    pub fn inspect(&self, images: &Tensor<T>) -> Result<(Vec<LayerStats>, Vec<Tensor<T>>)> {
        self.check_images(images)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(images.clone());
        let out = self.params.forward(&mut g, x, false)?;
        let stats = self.params.layer_stats(&g, &out)?;
        let scores = out.attention.iter().map(|a| g.tensor(a.scores)).collect();
        Ok((stats, scores))
    }
}
