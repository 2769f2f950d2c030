//! Forward kernels and their backward rules, free of any graph bookkeeping.

pub mod basic;
pub mod conv;
pub mod norm;
pub mod pool;

pub use basic::{add, concat_channels, linear, relu, scale, slice_axis, softmax, softmax_cross_entropy};
pub use conv::{conv2d, output_extent, Conv2dParams};
pub use norm::{BatchStats, RunningStats, StatsAccumulator, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use pool::{avg_pool2d, global_avg_pool, global_max_pool, max_pool2d, Pool2dParams};

use crate::tensor::{Real, Tensor};

/// `0.5·(global average + global max)` per channel.
pub fn mean_max_pool<T: Real>(x: &Tensor<T>) -> crate::Result<Tensor<T>> {
    let avg = global_avg_pool(x)?;
    let (max, _) = global_max_pool(x)?;
    Ok(scale(&add(&avg, &max)?, T::lit(0.5)))
}
