//! Synthetic restoration pairs.
//!
//! Clean images are smooth random fields (a few low-frequency sinusoids
//! over a 0.4 base, clipped to [0.05, 0.75] so that saturated mask values
//! sit outside the field range). Degradations produce the paired input.

use serde::{Deserialize, Serialize};

use crate::error::{RdbmError, Result};
use crate::rng::Stream;
use crate::tensor::TensorGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationKind {
    /// Vertical streaks of constant value at random columns; pixels
    /// outside the streaks stay bit-identical to the clean image.
    MaskStreaks {
        #[serde(default = "default_streak_count")]
        count: usize,
        #[serde(default = "default_streak_width")]
        width: usize,
        #[serde(default = "default_streak_value")]
        value: f64,
    },
    /// Uniform intensity scaling by a factor in (0, 1).
    GlobalDarken {
        #[serde(default = "default_darken_factor")]
        factor: f64,
    },
    /// Box mean filter with clamped borders.
    BoxBlur {
        #[serde(default = "default_blur_radius")]
        radius: usize,
    },
}

fn default_streak_count() -> usize {
    3
}
fn default_streak_width() -> usize {
    2
}
fn default_streak_value() -> f64 {
    1.0
}
fn default_darken_factor() -> f64 {
    0.5
}
fn default_blur_radius() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub kind: DegradationKind,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_image_size() -> usize {
    16
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            kind: DegradationKind::MaskStreaks {
                count: default_streak_count(),
                width: default_streak_width(),
                value: default_streak_value(),
            },
            image_size: default_image_size(),
            seed: 0,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 2 {
            return Err(RdbmError::InvalidConfig(format!(
                "image_size must be >= 2, got {}",
                self.image_size
            )));
        }
        match self.kind {
            DegradationKind::MaskStreaks { count, width, value } => {
                if count > 0 && (width == 0 || width > self.image_size) {
                    return Err(RdbmError::InvalidConfig(format!(
                        "streak width {width} invalid for image size {}",
                        self.image_size
                    )));
                }
                if !(0.0..=1.0).contains(&value) {
                    return Err(RdbmError::InvalidConfig(format!(
                        "streak value must lie in [0, 1], got {value}"
                    )));
                }
            }
            DegradationKind::GlobalDarken { factor } => {
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(RdbmError::InvalidConfig(format!(
                        "darken factor must lie in (0, 1), got {factor}"
                    )));
                }
            }
            DegradationKind::BoxBlur { radius } => {
                if radius == 0 || radius >= self.image_size {
                    return Err(RdbmError::InvalidConfig(format!(
                        "blur radius {radius} invalid for image size {}",
                        self.image_size
                    )));
                }
            }
        }
        Ok(())
    }
}

fn smooth_field(size: usize, stream: &mut Stream) -> TensorGrid {
    let mut grid = TensorGrid::full(vec![size, size], 0.4);
    for _ in 0..3 {
        let amp = 0.06 + 0.09 * stream.next_uniform();
        let fr = 0.3 + 1.2 * stream.next_uniform();
        let fc = 0.3 + 1.2 * stream.next_uniform();
        let phase = std::f64::consts::TAU * stream.next_uniform();
        let data = grid.data_mut();
        for r in 0..size {
            for c in 0..size {
                data[r * size + c] += amp
                    * (std::f64::consts::TAU * (fr * r as f64 + fc * c as f64) / size as f64
                        + phase)
                        .sin();
            }
        }
    }
    grid.map(|v| v.clamp(0.05, 0.75))
}

fn degrade(x0: &TensorGrid, spec: &DegradationSpec, stream: &mut Stream) -> TensorGrid {
    let size = spec.image_size;
    match spec.kind {
        DegradationKind::MaskStreaks { count, width, value } => {
            let mut mu = x0.clone();
            for _ in 0..count {
                let start = stream.next_index(size - width + 1);
                let data = mu.data_mut();
                for r in 0..size {
                    for c in start..start + width {
                        data[r * size + c] = value;
                    }
                }
            }
            mu
        }
        DegradationKind::GlobalDarken { factor } => x0.map(|v| factor * v),
        DegradationKind::BoxBlur { radius } => {
            let mut mu = TensorGrid::zeros(vec![size, size]);
            let r = radius as isize;
            let n = size as isize;
            for row in 0..n {
                for col in 0..n {
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for dr in -r..=r {
                        for dc in -r..=r {
                            let rr = (row + dr).clamp(0, n - 1) as usize;
                            let cc = (col + dc).clamp(0, n - 1) as usize;
                            acc += x0.data()[rr * size + cc];
                            cnt += 1.0;
                        }
                    }
                    mu.data_mut()[(row * n + col) as usize] = acc / cnt;
                }
            }
            mu
        }
    }
}

/// Generates n (clean, degraded) pairs, deterministic in the spec's seed.
pub fn make_toy_dataset(spec: &DegradationSpec, n: usize) -> Result<Vec<(TensorGrid, TensorGrid)>> {
    spec.validate()?;
    if n == 0 {
        return Err(RdbmError::InvalidConfig("dataset size must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        let mut field_stream = Stream::indexed(spec.seed, "data.field", s as u64);
        let x0 = smooth_field(spec.image_size, &mut field_stream);
        let mut degrade_stream = Stream::indexed(spec.seed, "data.degrade", s as u64);
        let mu = degrade(&x0, spec, &mut degrade_stream);
        out.push((x0, mu));
    }
    Ok(out)
}

/// Column-union mask of the streaks a sample's degradation draws; true at
/// degraded pixels. Matches `make_toy_dataset`'s draw order.
pub fn streak_mask(spec: &DegradationSpec, sample_index: usize) -> Result<TensorGrid> {
    spec.validate()?;
    let size = spec.image_size;
    let mut mask = TensorGrid::zeros(vec![size, size]);
    if let DegradationKind::MaskStreaks { count, width, .. } = spec.kind {
        let mut stream = Stream::indexed(spec.seed, "data.degrade", sample_index as u64);
        for _ in 0..count {
            let start = stream.next_index(size - width + 1);
            for r in 0..size {
                for c in start..start + width {
                    mask.data_mut()[r * size + c] = 1.0;
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_streaks_is_identity() {
        let spec = DegradationSpec {
            kind: DegradationKind::MaskStreaks { count: 0, width: 2, value: 1.0 },
            image_size: 8,
            seed: 3,
        };
        let data = make_toy_dataset(&spec, 4).unwrap();
        for (x0, mu) in &data {
            assert_eq!(x0.data(), mu.data());
        }
    }

    #[test]
    fn darken_scales_exactly() {
        let spec = DegradationSpec {
            kind: DegradationKind::GlobalDarken { factor: 0.5 },
            image_size: 8,
            seed: 3,
        };
        let data = make_toy_dataset(&spec, 2).unwrap();
        for (x0, mu) in &data {
            for (a, b) in x0.data().iter().zip(mu.data().iter()) {
                assert_eq!(*b, 0.5 * *a);
            }
        }
    }

    #[test]
    fn streak_residual_support_equals_mask_coverage() {
        let spec = DegradationSpec::default();
        let data = make_toy_dataset(&spec, 8).unwrap();
        for (idx, (x0, mu)) in data.iter().enumerate() {
            let mask = streak_mask(&spec, idx).unwrap();
            let covered = mask.data().iter().filter(|&&v| v != 0.0).count();
            let nonzero_residual = x0
                .data()
                .iter()
                .zip(mu.data().iter())
                .filter(|(a, b)| a != b)
                .count();
            // Fields are clipped below the streak value, so every covered
            // pixel has a nonzero residual.
            assert_eq!(covered, nonzero_residual, "sample {idx}");
            // Unmasked pixels are bit-identical.
            for (k, m) in mask.data().iter().enumerate() {
                if *m == 0.0 {
                    assert_eq!(x0.data()[k].to_bits(), mu.data()[k].to_bits());
                }
            }
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        for kind in [
            DegradationKind::MaskStreaks { count: 4, width: 3, value: 1.0 },
            DegradationKind::GlobalDarken { factor: 0.3 },
            DegradationKind::BoxBlur { radius: 2 },
        ] {
            let spec = DegradationSpec { kind, image_size: 12, seed: 9 };
            for (x0, mu) in make_toy_dataset(&spec, 4).unwrap() {
                assert!(x0.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert!(mu.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DegradationSpec::default();
        let a = make_toy_dataset(&spec, 3).unwrap();
        let b = make_toy_dataset(&spec, 3).unwrap();
        for ((x1, m1), (x2, m2)) in a.iter().zip(b.iter()) {
            assert_eq!(x1.data(), x2.data());
            assert_eq!(m1.data(), m2.data());
        }
    }

    #[test]
    fn json_shape_is_flat() {
        let text = r#"{"kind": "mask_streaks", "count": 2, "width": 1,
                        "value": 1.0, "image_size": 8, "seed": 3}"#;
        let spec: DegradationSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.image_size, 8);
        assert!(matches!(
            spec.kind,
            DegradationKind::MaskStreaks { count: 2, width: 1, .. }
        ));
        let back = serde_json::to_string(&spec).unwrap();
        let again: DegradationSpec = serde_json::from_str(&back).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn validation_rejects_bad_params() {
        let mut spec = DegradationSpec::default();
        spec.kind = DegradationKind::MaskStreaks { count: 1, width: 0, value: 1.0 };
        assert!(spec.validate().is_err());
        spec.kind = DegradationKind::GlobalDarken { factor: 1.5 };
        assert!(spec.validate().is_err());
        spec.kind = DegradationKind::BoxBlur { radius: 0 };
        assert!(spec.validate().is_err());
    }
}
