use kansam::kan::{
    kan_stack_param_count, mlp_adapter_param_count, mlp_stack_param_count, parity_threshold, KanAdapter,
};
use kansam::model::{ModelConfig, SaliencyModel};
use kansam::params::Partition;
use serde::Serialize;

pub const FOOTER: &str = "Absolute parameter counts of full-scale backbones (e.g. 1.868M vs 2.782M adapter \
parameters) depend on unpublished hyperparameters and are out of scope; only the closed-form comparison above \
is reproduced.";

#[derive(Debug, Serialize)]
pub struct GroupCount {
    pub group: String,
    pub partition: String,
    pub params: usize,
}

#[derive(Debug, Serialize)]
pub struct AdapterCount {
    pub stage: usize,
    pub channels: usize,
    pub kan_stack: usize,
    pub mlp_stack: usize,
    pub kan_adapter: usize,
    pub mlp_adapter: usize,
    /// `G + k + 2` below this makes the KAN stack strictly smaller.
    pub parity_threshold: f64,
}

#[derive(Debug, Serialize)]
pub struct ParamReport {
    pub total: usize,
    pub frozen: usize,
    pub tunable: usize,
    pub groups: Vec<GroupCount>,
    pub adapters: Vec<AdapterCount>,
    /// `G + k + 2`.
    pub spline_width: usize,
    pub kan_stack_total: usize,
    pub mlp_stack_total: usize,
    pub stack_ratio: f64,
    pub kan_adapter_total: usize,
    pub mlp_adapter_total: usize,
    pub adapter_ratio: f64,
    pub kan_smaller: bool,
    pub footer: String,
}

fn group_of(name: &str) -> &str {
    let head = name.split('.').next().unwrap_or(name);
    if head.starts_with("stage") || head.starts_with("adapter") || head == "fpn" || head == "decoder" {
        head
    } else {
        "patch_embed"
    }
}

impl ParamReport {
    pub fn build(cfg: &ModelConfig) -> kansam::Result<Self> {
        let model = SaliencyModel::new(cfg.clone(), 0)?;
        let store = model.store();
        let mut groups: Vec<GroupCount> = Vec::new();
        for (_, p) in store.iter() {
            let group = group_of(&p.name);
            let partition = match p.partition {
                Partition::Frozen => "frozen",
                Partition::Tunable => "tunable",
            };
            match groups.iter_mut().find(|g| g.group == group) {
                Some(g) => g.params += p.value.numel(),
                None => groups.push(GroupCount {
                    group: group.into(),
                    partition: partition.into(),
                    params: p.value.numel(),
                }),
            }
        }

        let grid = cfg.spline.grid()?;
        let r = cfg.adapter_reduction;
        let c0 = cfg.stage_channels[0];
        let adapters: Vec<AdapterCount> = cfg
            .stage_channels
            .iter()
            .enumerate()
            .map(|(stage, &c)| AdapterCount {
                stage,
                channels: c,
                kan_stack: kan_stack_param_count(c, r, &grid),
                mlp_stack: mlp_stack_param_count(c, r),
                kan_adapter: KanAdapter::param_count(c, c0, r, &grid),
                mlp_adapter: mlp_adapter_param_count(c, c0, r),
                parity_threshold: parity_threshold(c, r),
            })
            .collect();
        let sum = |f: fn(&AdapterCount) -> usize| adapters.iter().map(f).sum::<usize>();
        let (kan_stack_total, mlp_stack_total) = (sum(|a| a.kan_stack), sum(|a| a.mlp_stack));
        let (kan_adapter_total, mlp_adapter_total) = (sum(|a| a.kan_adapter), sum(|a| a.mlp_adapter));
        Ok(ParamReport {
            total: store.scalar_count(),
            frozen: store.scalar_count_in(Partition::Frozen),
            tunable: store.scalar_count_in(Partition::Tunable),
            groups,
            spline_width: grid.intervals() + grid.degree() + 2,
            kan_stack_total,
            mlp_stack_total,
            stack_ratio: kan_stack_total as f64 / mlp_stack_total as f64,
            kan_adapter_total,
            mlp_adapter_total,
            adapter_ratio: kan_adapter_total as f64 / mlp_adapter_total as f64,
            kan_smaller: kan_stack_total < mlp_stack_total,
            adapters,
            footer: FOOTER.into(),
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:<8} {:>10}\n", "group", "part", "params"));
        for g in &self.groups {
            out.push_str(&format!("{:<12} {:<8} {:>10}\n", g.group, g.partition, g.params));
        }
        out.push_str(&format!("{:<12} {:<8} {:>10}\n", "frozen", "", self.frozen));
        out.push_str(&format!("{:<12} {:<8} {:>10}\n", "tunable", "", self.tunable));
        out.push_str(&format!("{:<12} {:<8} {:>10}\n\n", "total", "", self.total));

        out.push_str(&format!(
            "{:<6} {:>4} {:>10} {:>10} {:>12} {:>12} {:>10}\n",
            "stage", "C", "kan_stack", "mlp_stack", "kan_adapter", "mlp_adapter", "threshold"
        ));
        for a in &self.adapters {
            out.push_str(&format!(
                "{:<6} {:>4} {:>10} {:>10} {:>12} {:>12} {:>10.4}\n",
                a.stage, a.channels, a.kan_stack, a.mlp_stack, a.kan_adapter, a.mlp_adapter, a.parity_threshold
            ));
        }
        out.push_str(&format!(
            "{:<6} {:>4} {:>10} {:>10} {:>12} {:>12}\n\n",
            "all", "", self.kan_stack_total, self.mlp_stack_total, self.kan_adapter_total, self.mlp_adapter_total
        ));
        out.push_str(&format!(
            "KAN stack {} vs MLP stack {}: ratio {:.4} ({})\n",
            self.kan_stack_total,
            self.mlp_stack_total,
            self.stack_ratio,
            if self.kan_smaller { "KAN smaller" } else { "KAN not smaller" }
        ));
        out.push_str(&format!(
            "KAN adapters {} vs MLP adapters {}: ratio {:.4}\n",
            self.kan_adapter_total, self.mlp_adapter_total, self.adapter_ratio
        ));
        out.push_str(&format!(
            "G + k + 2 = {}; the KAN stack is smaller at a stage exactly when this is below its threshold\n\n",
            self.spline_width
        ));
        out.push_str(self.footer.as_str());
        out.push('\n');
        out
    }
}
