use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, Partition};
use crate::seed::Rng64;
use crate::tensor::Tensor;

use super::{KanInit, KanLayer, SplineGrid};

/// `up(down(x))`: inner edge functions followed by outer ones.
pub fn kan_stack_forward(g: &mut Graph, store: &ParamStore, down: &KanLayer, up: &KanLayer, x: Var) -> Result<Var> {
    if up.n_in() != down.n_out() {
        return Err(Error::dim(
            "kan_stack",
            format!("down layer emits {} channels, up layer expects {}", down.n_out(), up.n_in()),
        ));
    }
    let h = down.forward(g, store, x)?;
    up.forward(g, store, h)
}

/// Thermal prompting adapter for one encoder stage.
///
/// The thermal map is resized to the RGB map's resolution and projected to
/// its channel count (`T'`). The prompt is added before the KAN stack and
/// again after it:
///
/// `F' = F + KAN(F + T') + T'`
#[derive(Clone, Debug, PartialEq)]
pub struct KanAdapter {
    channels: usize,
    thermal_channels: usize,
    reduction: usize,
    align_weight: ParamId,
    align_bias: ParamId,
    down: KanLayer,
    up: KanLayer,
}

impl KanAdapter {
    /// Builds an adapter with a random down layer and a zero-output up
    /// layer, so a fresh adapter only adds the aligned thermal prompt.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        thermal_channels: usize,
        reduction: usize,
        grid: &SplineGrid,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "adapter {name}: reduction {reduction} must divide channel count {channels}"
            )));
        }
        if thermal_channels == 0 {
            return Err(Error::Config(format!("adapter {name}: thermal channel count is zero")));
        }
        let hidden = channels / reduction;
        let bound = 1.0 / (thermal_channels as f64).sqrt();
        let align_weight = store.add(
            format!("{name}.align.weight"),
            Tensor::from_fn(&[thermal_channels, channels], |_| rng.gen_range(-bound..=bound)),
            Partition::Tunable,
        );
        let align_bias = store.add(format!("{name}.align.bias"), Tensor::zeros(&[channels]), Partition::Tunable);
        let down = KanLayer::new(
            store,
            &format!("{name}.down"),
            channels,
            hidden,
            grid.clone(),
            KanInit::Random { spline_scale: 0.1 },
            Partition::Tunable,
            rng,
        )?;
        let up = KanLayer::new(
            store,
            &format!("{name}.up"),
            hidden,
            channels,
            grid.clone(),
            KanInit::ZeroOutput,
            Partition::Tunable,
            rng,
        )?;
        Ok(KanAdapter { channels, thermal_channels, reduction, align_weight, align_bias, down, up })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn thermal_channels(&self) -> usize {
        self.thermal_channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    pub fn down(&self) -> &KanLayer {
        &self.down
    }

    pub fn up(&self) -> &KanLayer {
        &self.up
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.align_weight, self.align_bias];
        ids.extend(self.down.param_ids());
        ids.extend(self.up.param_ids());
        ids
    }

    /// Closed-form count for an adapter at channel count `c`.
    pub fn param_count(c: usize, thermal_channels: usize, reduction: usize, grid: &SplineGrid) -> usize {
        align_param_count(c, thermal_channels) + kan_stack_param_count(c, reduction, grid)
    }

    /// `T' = align(resize(T))`.
    pub fn align(&self, g: &mut Graph, store: &ParamStore, thermal: Var, h: usize, w: usize) -> Result<Var> {
        let ts = g.shape(thermal).to_vec();
        if ts.len() != 3 || ts[2] != self.thermal_channels {
            return Err(Error::Config(format!(
                "adapter expects [H, W, {}] thermal features, got {ts:?}",
                self.thermal_channels
            )));
        }
        let resized = if ts[0] == h && ts[1] == w { thermal } else { g.nearest_resize(thermal, h, w)? };
        let wv = g.param(store, self.align_weight);
        let bv = g.param(store, self.align_bias);
        g.pointwise_conv(resized, wv, Some(bv))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, rgb: Var, thermal: Var) -> Result<Var> {
        let fs = g.shape(rgb).to_vec();
        if fs.len() != 3 || fs[2] != self.channels {
            return Err(Error::Config(format!("adapter expects [H, W, {}] RGB features, got {fs:?}", self.channels)));
        }
        let prompt = self.align(g, store, thermal, fs[0], fs[1])?;
        let prompted = g.add(rgb, prompt)?;
        let a = kan_stack_forward(g, store, &self.down, &self.up, prompted)?;
        let fused = g.add(rgb, a)?;
        g.add(fused, prompt)
    }
}

fn align_param_count(c: usize, thermal_channels: usize) -> usize {
    thermal_channels * c + c
}

/// Parameters in the down/up KAN pair at channel count `c`.
pub fn kan_stack_param_count(c: usize, reduction: usize, grid: &SplineGrid) -> usize {
    let hidden = c / reduction;
    KanLayer::param_count(c, hidden, grid) + KanLayer::param_count(hidden, c, grid)
}

/// Two linear layers `c -> c/r -> c` with biases.
pub fn mlp_stack_param_count(c: usize, reduction: usize) -> usize {
    let hidden = c / reduction;
    (c * hidden + hidden) + (hidden * c + c)
}

/// The MLP adapter: same alignment projection, MLP bottleneck in place of the KAN pair.
pub fn mlp_adapter_param_count(c: usize, thermal_channels: usize, reduction: usize) -> usize {
    align_param_count(c, thermal_channels) + mlp_stack_param_count(c, reduction)
}

/// The KAN stack has `2 c (c/r) (G + k + 2)` parameters, so it is strictly
/// smaller than the MLP stack exactly when `G + k + 2` is below this value.
pub fn parity_threshold(c: usize, reduction: usize) -> f64 {
    let hidden = c / reduction;
    mlp_stack_param_count(c, reduction) as f64 / (2 * c * hidden) as f64
}
