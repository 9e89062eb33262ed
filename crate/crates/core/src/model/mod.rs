//! The saliency network: shared patch embedding, a frozen three-stage
//! hierarchical encoder whose stages are each followed by a thermal-prompting
//! KAN adapter, a frozen top-down feature pyramid, and a tunable mask decoder.
//!
//! The encoder is randomly initialized. Freezing it is meaningful here only
//! as a mechanism: the frozen/tunable partition is enforced exactly, but the
//! trunk carries no pre-trained representation.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Precision, Var};
use crate::error::{Error, Result};
use crate::kan::{KanAdapter, SplineGrid};
use crate::masking::{apply_mask, sample_mask, MaskConfig};
use crate::params::{ParamId, ParamStore, Partition};
use crate::seed;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplineConfig {
    pub degree: usize,
    pub intervals: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig { degree: 3, intervals: 5, lo: -1.0, hi: 1.0 }
    }
}

impl SplineConfig {
    pub fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::new(self.degree, self.intervals, self.lo, self.hi)
    }
}

/// How the decoder doubles resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upsample {
    /// Nearest-neighbour x2 followed by a 1x1 convolution.
    Nearest,
    /// Learned 2x2 stride-2 transposed convolution, computed as a 1x1
    /// convolution to four sub-pixel outputs and a depth-to-space shuffle.
    #[default]
    SubPixel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub patch_size: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub fpn_dim: usize,
    /// Hidden widths of the decoder blocks before the one-channel head;
    /// one entry fewer than the number of x2 upsamplings.
    pub decoder_channels: Vec<usize>,
    pub decoder_upsample: Upsample,
    pub adapter_reduction: usize,
    /// Without adapters the thermal input is ignored entirely.
    pub use_adapters: bool,
    pub spline: SplineConfig,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            patch_size: 8,
            stage_channels: vec![32, 64, 128],
            blocks_per_stage: 2,
            fpn_dim: 64,
            decoder_channels: vec![32, 16],
            decoder_upsample: Upsample::default(),
            adapter_reduction: 4,
            use_adapters: true,
            spline: SplineConfig::default(),
            precision: Precision::F64,
        }
    }
}

impl ModelConfig {
    /// Default architecture at a 16x16 input (patch size 4, two decoder blocks).
    pub fn tiny() -> Self {
        ModelConfig { input_size: 16, patch_size: 4, decoder_channels: vec![32], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.stage_channels.len();
        if stages == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("stage_channels must list positive channel counts".into()));
        }
        if self.patch_size == 0 || !self.patch_size.is_power_of_two() || self.patch_size < 2 {
            return Err(Error::Config(format!("patch_size {} must be a power of two >= 2", self.patch_size)));
        }
        let stride = self.patch_size << (stages - 1);
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "input_size {} must be divisible by patch_size * 2^(stages-1) = {stride}",
                self.input_size
            )));
        }
        let ups = self.patch_size.trailing_zeros() as usize;
        if self.decoder_channels.len() + 1 != ups {
            return Err(Error::Config(format!(
                "patch_size {} needs {} decoder hidden widths, got {}",
                self.patch_size,
                ups - 1,
                self.decoder_channels.len()
            )));
        }
        if self.fpn_dim == 0 || self.decoder_channels.contains(&0) {
            return Err(Error::Config("fpn_dim and decoder widths must be positive".into()));
        }
        if self.use_adapters {
            for &c in &self.stage_channels {
                if self.adapter_reduction == 0 || c % self.adapter_reduction != 0 {
                    return Err(Error::Config(format!(
                        "adapter reduction {} does not divide stage width {c}",
                        self.adapter_reduction
                    )));
                }
            }
        }
        self.spline.grid()?;
        Ok(())
    }

    /// Token grid side length at each stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        let base = self.input_size / self.patch_size;
        (0..self.stage_channels.len()).map(|s| base >> s).collect()
    }
}

/// A predicted map in `[0, 1]`, shape `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub values: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
        partition: Partition,
        rng: &mut seed::Rng64,
    ) -> Self {
        let bound = 1.0 / (cin as f64).sqrt();
        let w = Tensor::from_fn(&[cin, cout], |_| rng.gen_range(-bound..=bound));
        let weight = store.add(format!("{name}.weight"), w, partition);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout]), partition));
        Linear { weight, bias }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ffn_in: Linear,
    ffn_out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    merge: Option<Linear>,
    blocks: Vec<Block>,
}

/// Output of one encoder block, with its attention matrix exposed.
pub struct BlockOutput {
    pub tokens: Var,
    pub attention: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyModel {
    config: ModelConfig,
    store: ParamStore,
    patch_embed: Linear,
    stages: Vec<Stage>,
    adapters: Vec<KanAdapter>,
    laterals: Vec<Linear>,
    decoder: Vec<Linear>,
}

impl SaliencyModel {
    /// Builds a model with weights drawn from `seed`. The trunk, neck and
    /// decoder draw from streams independent of the adapters, so models that
    /// differ only in `use_adapters` share every other weight.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut trunk_rng = seed::rng(seed::mix(seed, &[1]));
        let grid = config.spline.grid()?;
        let c0 = config.stage_channels[0];
        let ps = config.patch_size;

        let patch_embed =
            Linear::new(&mut store, "patch_embed", ps * ps * 3, c0, true, Partition::Frozen, &mut trunk_rng);

        let mut stages = Vec::new();
        for (s, &c) in config.stage_channels.iter().enumerate() {
            let merge = (s > 0).then(|| {
                let prev = config.stage_channels[s - 1];
                Linear::new(
                    &mut store,
                    &format!("stage{s}.merge"),
                    4 * prev,
                    c,
                    true,
                    Partition::Frozen,
                    &mut trunk_rng,
                )
            });
            let blocks = (0..config.blocks_per_stage)
                .map(|b| {
                    let n = format!("stage{s}.block{b}");
                    let mut lin = |part: &str, cin, cout, bias| {
                        Linear::new(
                            &mut store,
                            &format!("{n}.{part}"),
                            cin,
                            cout,
                            bias,
                            Partition::Frozen,
                            &mut trunk_rng,
                        )
                    };
                    Block {
                        q: lin("attn.q", c, c, false),
                        k: lin("attn.k", c, c, false),
                        v: lin("attn.v", c, c, false),
                        o: lin("attn.o", c, c, false),
                        ffn_in: lin("ffn.in", c, 2 * c, true),
                        ffn_out: lin("ffn.out", 2 * c, c, true),
                    }
                })
                .collect();
            stages.push(Stage { merge, blocks });
        }

        let laterals = config
            .stage_channels
            .iter()
            .enumerate()
            .map(|(s, &c)| {
                Linear::new(
                    &mut store,
                    &format!("fpn.lateral{s}"),
                    c,
                    config.fpn_dim,
                    true,
                    Partition::Frozen,
                    &mut trunk_rng,
                )
            })
            .collect();

        let mut adapters = Vec::new();
        if config.use_adapters {
            for (s, &c) in config.stage_channels.iter().enumerate() {
                let mut rng = seed::rng(seed::mix(seed, &[2, s as u64]));
                adapters.push(KanAdapter::new(
                    &mut store,
                    &format!("adapter{s}"),
                    c,
                    c0,
                    config.adapter_reduction,
                    &grid,
                    &mut rng,
                )?);
            }
        }

        let mut dec_rng = seed::rng(seed::mix(seed, &[3]));
        let mut widths = vec![config.fpn_dim];
        widths.extend(&config.decoder_channels);
        widths.push(1);
        let fan_out = match config.decoder_upsample {
            Upsample::Nearest => 1,
            Upsample::SubPixel => 4,
        };
        let decoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Linear::new(
                    &mut store,
                    &format!("decoder.block{i}"),
                    w[0],
                    fan_out * w[1],
                    true,
                    Partition::Tunable,
                    &mut dec_rng,
                )
            })
            .collect();

        Ok(SaliencyModel { config, store, patch_embed, stages, adapters, laterals, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn adapters(&self) -> &[KanAdapter] {
        &self.adapters
    }

    /// `(frozen, tunable)` parameter ids. Tunable is exactly the adapters
    /// and the mask decoder.
    pub fn partition_parameters(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        (self.store.ids_in(Partition::Frozen), self.store.ids_in(Partition::Tunable))
    }

    pub fn patch_embed_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.patch_embed.weight).chain(self.patch_embed.bias).collect()
    }

    pub fn decoder_ids(&self) -> Vec<ParamId> {
        self.decoder.iter().flat_map(|l| std::iter::once(l.weight).chain(l.bias)).collect()
    }

    fn check_pair(&self, rgb: &Tensor, thermal: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if rgb.shape() != [s, s, 3] {
            return Err(Error::dim("forward", format!("rgb image {:?}, expected [{s}, {s}, 3]", rgb.shape())));
        }
        if thermal.shape() != [s, s, 1] {
            return Err(Error::dim(
                "forward",
                format!("thermal image {:?} is not aligned with [{s}, {s}, 1]", thermal.shape()),
            ));
        }
        Ok(())
    }

    /// `[H, W, 3] -> [H/ps, W/ps, C0]`.
    pub fn patch_embed(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let s = g.shape(image).to_vec();
        let ps = self.config.patch_size;
        if s.len() != 3 || s[2] != 3 || !s[0].is_multiple_of(ps) || !s[1].is_multiple_of(ps) {
            return Err(Error::dim("patch_embed", format!("{s:?} is not [H, W, 3] divisible by {ps}")));
        }
        let patches = g.space_to_depth(image, ps)?;
        self.patch_embed.forward(g, &self.store, patches)
    }

    /// One pre-norm encoder block over an `[h, w, C]` token map.
    pub fn block_forward(&self, g: &mut Graph, stage: usize, block: usize, x: Var) -> Result<BlockOutput> {
        let b = &self.stages[stage].blocks[block];
        let shape = g.shape(x).to_vec();
        let c = shape[2];
        let n = shape[0] * shape[1];
        let tokens = g.reshape(x, &[n, c])?;

        let h = g.layer_norm(tokens)?;
        let q = b.q.forward(g, &self.store, h)?;
        let k = b.k.forward(g, &self.store, h)?;
        let v = b.v.forward(g, &self.store, h)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (c as f64).sqrt())?;
        let attention = g.softmax(scores)?;
        let mixed = g.matmul(attention, v)?;
        let out = b.o.forward(g, &self.store, mixed)?;
        let tokens = g.add(tokens, out)?;

        let h = g.layer_norm(tokens)?;
        let f = b.ffn_in.forward(g, &self.store, h)?;
        let f = g.silu(f)?;
        let f = b.ffn_out.forward(g, &self.store, f)?;
        let tokens = g.add(tokens, f)?;
        Ok(BlockOutput { tokens: g.reshape(tokens, &shape)?, attention })
    }

    /// Patch merge (for stages after the first) followed by the stage's blocks.
    pub fn encoder_stage(&self, g: &mut Graph, stage: usize, x: Var) -> Result<Var> {
        if stage >= self.stages.len() {
            return Err(Error::Config(format!("stage index {stage} out of range")));
        }
        let mut x = x;
        if let Some(merge) = &self.stages[stage].merge {
            let m = g.space_to_depth(x, 2)?;
            x = merge.forward(g, &self.store, m)?;
        }
        for b in 0..self.stages[stage].blocks.len() {
            x = self.block_forward(g, stage, b, x)?.tokens;
        }
        Ok(x)
    }

    /// Saliency map `[H, W]` for an aligned pair, without masking.
    pub fn forward(&self, g: &mut Graph, rgb: &Tensor, thermal: &Tensor) -> Result<Var> {
        self.check_pair(rgb, thermal)?;
        let rgb_v = g.constant(rgb.clone());
        let th_v = g.constant(thermal.clone());
        self.forward_vars(g, rgb_v, th_v)
    }

    /// As [`forward`](Self::forward), but first blanks pixels with a
    /// mutually exclusive mask drawn from `mask_seed`.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        rgb: &Tensor,
        thermal: &Tensor,
        mask: &MaskConfig,
        mask_seed: u64,
    ) -> Result<Var> {
        self.check_pair(rgb, thermal)?;
        if !mask.enabled {
            return self.forward(g, rgb, thermal);
        }
        let s = self.config.input_size;
        let pattern = sample_mask(s, s, mask, mask_seed);
        let (rgb, thermal) = apply_mask(rgb, thermal, &pattern, mask)?;
        self.forward(g, &rgb, &thermal)
    }

    /// Forward from graph nodes, so inputs can themselves be differentiated.
    pub fn forward_vars(&self, g: &mut Graph, rgb: Var, thermal: Var) -> Result<Var> {
        let size = self.config.input_size;
        let mut x = self.patch_embed(g, rgb)?;

        let thermal_tokens = if self.config.use_adapters {
            let replicate: std::rc::Rc<[usize]> = (0..size * size * 3).map(|i| i / 3).collect();
            let th3 = g.gather(thermal, replicate, &[size, size, 3])?;
            Some(self.patch_embed(g, th3)?)
        } else {
            None
        };

        let mut feats = Vec::with_capacity(self.stages.len());
        for s in 0..self.stages.len() {
            x = self.encoder_stage(g, s, x)?;
            if let Some(t) = thermal_tokens {
                x = self.adapters[s].forward(g, &self.store, x, t)?;
            }
            feats.push(x);
        }

        let last = feats.len() - 1;
        let mut p = self.laterals[last].forward(g, &self.store, feats[last])?;
        for s in (0..last).rev() {
            let lat = self.laterals[s].forward(g, &self.store, feats[s])?;
            let up = g.nearest_upsample(p, 2)?;
            p = g.add(lat, up)?;
        }

        let mut y = p;
        let n = self.decoder.len();
        for (i, layer) in self.decoder.iter().enumerate() {
            y = match self.config.decoder_upsample {
                Upsample::Nearest => {
                    let u = g.nearest_upsample(y, 2)?;
                    layer.forward(g, &self.store, u)?
                }
                Upsample::SubPixel => {
                    let z = layer.forward(g, &self.store, y)?;
                    g.depth_to_space(z, 2)?
                }
            };
            y = if i + 1 < n { g.silu(y)? } else { g.sigmoid(y)? };
        }
        g.reshape(y, &[size, size])
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, rgb: &Tensor, thermal: &Tensor) -> Result<SaliencyMap> {
        let mut g = Graph::with_precision(self.config.precision);
        let y = self.forward(&mut g, rgb, thermal)?;
        Ok(SaliencyMap { values: g.value(y).clone() })
    }
}
