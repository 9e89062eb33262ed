//! Kolmogorov-Arnold layers built from learnable B-spline edge functions, and
//! the adapter that prompts RGB features with aligned thermal features.

mod adapter;
mod layer;
mod spline;

pub use adapter::{
    kan_stack_forward, kan_stack_param_count, mlp_adapter_param_count, mlp_stack_param_count, parity_threshold,
    KanAdapter,
};
pub use layer::{KanInit, KanLayer};
pub use spline::{SplineGrid, MAX_DEGREE};
