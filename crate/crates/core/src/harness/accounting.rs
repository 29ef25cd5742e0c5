//! Communication-cost accounting in transmitted floats.

use serde::{Deserialize, Serialize};

/// Inputs to [`payload_float_count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    /// Synthetic points on the wire.
    pub points: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Whether the per-step learning rates are counted.
    pub include_etas: bool,
    /// Number of learning rates the payload carries.
    pub num_etas: usize,
    /// Floats in a full model (or full update) transmission.
    pub model_param_count: usize,
}

/// `points · (input_dim + num_classes) + 1`, plus `num_etas` if counted. The
/// `+ 1` is the update norm H.
pub fn payload_float_count(cost: &CommCost) -> u64 {
    let per_point = (cost.input_dim + cost.num_classes) as u64;
    let etas = if cost.include_etas { cost.num_etas as u64 } else { 0 };
    cost.points as u64 * per_point + 1 + etas
}

/// Payload floats as a fraction of a full model transmission.
pub fn compression_ratio(cost: &CommCost) -> f64 {
    payload_float_count(cost) as f64 / cost.model_param_count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mnist(points: usize) -> CommCost {
        CommCost {
            points,
            input_dim: 784,
            num_classes: 10,
            include_etas: false,
            num_etas: 25,
            model_param_count: 1_663_370,
        }
    }

    #[test]
    fn fifty_mnist_points() {
        assert_eq!(payload_float_count(&mnist(50)), 39_701);
        let r = compression_ratio(&mnist(50));
        assert!((r - 0.02387).abs() < 5e-6);
        assert_eq!(format!("{:.1}%", 100.0 * r), "2.4%");
    }

    #[test]
    fn empty_payload_is_just_h() {
        assert_eq!(payload_float_count(&mnist(0)), 1);
    }

    #[test]
    fn etas_are_optional() {
        let with = CommCost {
            include_etas: true,
            ..mnist(50)
        };
        assert_eq!(payload_float_count(&with), 39_726);
    }

    #[test]
    fn hundred_points_is_about_a_twentieth() {
        let r = compression_ratio(&mnist(100));
        assert!((1.0 / r - 20.0).abs() < 1.0, "1/{}", 1.0 / r);
    }
}
