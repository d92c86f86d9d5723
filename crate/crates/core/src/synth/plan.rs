use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::GenerationConfig;
use crate::catalog::Catalog;

/// Random stream owned by one sample.
pub type SampleRng = ChaCha8Rng;

/// Stream for sample `index`: the master seed keys the generator and the
/// index selects an independent ChaCha stream, so the result does not depend
/// on which worker produces the sample.
pub fn derive_sample_rng(master_seed: u64, sample_index: u64) -> SampleRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(sample_index);
    rng
}

/// `U(lo, hi)`, or `lo` without consuming randomness when the range is a point.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Longest run of signs stacked under each other.
pub const MAX_STACK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedSign {
    pub class_id: u32,
    /// Target nominal size in pixels.
    pub scale_px: f64,
    /// Hangs directly below the previous sign.
    pub stacked_below_previous: bool,
}

/// Draws the sign count, classes, sizes and stacking chain for one sample.
///
/// The second sign of a group is stacked with `stack_p1`. Once a pair is
/// stacked, a third joins with `stack_p2`; groups never exceed three, and
/// after a group ends the next sign starts over with `stack_p1`.
pub fn plan_placements<R: Rng + ?Sized>(
    rng: &mut R,
    config: &GenerationConfig,
    catalog: &Catalog,
) -> Vec<PlannedSign> {
    let (min_size, max_size) = config.sizes().expect("validated config");
    let count = config.count_support[rng.random_range(0..config.count_support.len())] as usize;
    let mut plan: Vec<PlannedSign> = Vec::with_capacity(count);
    let mut run = 0usize;
    for j in 0..count {
        let class_id = catalog.sample_class(rng);
        let scale_px = uniform(rng, [min_size as f64, max_size as f64]);
        let stacked = match (j, run) {
            (0, _) => false,
            (_, 1) => rng.random_bool(config.stack_p1),
            (_, r) if r < MAX_STACK => rng.random_bool(config.stack_p2),
            _ => false,
        };
        run = if stacked { run + 1 } else { 1 };
        plan.push(PlannedSign {
            class_id,
            scale_px,
            stacked_below_previous: stacked,
        });
    }
    plan
}
