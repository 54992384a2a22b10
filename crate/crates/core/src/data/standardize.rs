use alloc::vec;
use alloc::vec::Vec;

use crate::data::Instance;

/// Per-feature z-score transform fitted on valid training cells.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// False for features left untouched because their spread is zero.
    pub scaled: Vec<bool>,
}

const MIN_STD: f64 = 1e-12;

impl Standardizer {
    /// Fit on the valid cells of `train`. Returns `None` if there are no instances.
    pub fn fit(train: &[Instance]) -> Option<Standardizer> {
        let p = train.first()?.features;
        let mut sum = vec![0.0; p];
        let mut count = vec![0usize; p];
        for inst in train {
            for (cell, &ok) in inst.valid.iter().enumerate() {
                if ok {
                    for f in 0..p {
                        sum[f] += inst.measurements[cell * p + f];
                        count[f] += 1;
                    }
                }
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; p];
        for inst in train {
            for (cell, &ok) in inst.valid.iter().enumerate() {
                if ok {
                    for f in 0..p {
                        let d = inst.measurements[cell * p + f] - mean[f];
                        sq[f] += d * d;
                    }
                }
            }
        }
        let std: Vec<f64> = sq
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { libm::sqrt(s / c as f64) } else { 0.0 })
            .collect();
        let scaled: Vec<bool> = std.iter().map(|&s| s > MIN_STD).collect();
        for (f, ok) in scaled.iter().enumerate() {
            if !ok {
                log::warn!("feature {f} has zero spread on training data; left unscaled");
            }
        }
        Some(Standardizer { mean, std, scaled })
    }

    pub fn identity(features: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; features],
            std: vec![1.0; features],
            scaled: vec![false; features],
        }
    }

    pub fn forward(&self, feature: usize, v: f64) -> f64 {
        if self.scaled[feature] {
            (v - self.mean[feature]) / self.std[feature]
        } else {
            v
        }
    }

    pub fn inverse(&self, feature: usize, v: f64) -> f64 {
        if self.scaled[feature] {
            v * self.std[feature] + self.mean[feature]
        } else {
            v
        }
    }

    /// Transform valid cells in place; masked cells stay zero.
    pub fn apply(&self, inst: &mut Instance) {
        let p = inst.features;
        for (cell, &ok) in inst.valid.iter().enumerate() {
            if ok {
                for f in 0..p {
                    let v = &mut inst.measurements[cell * p + f];
                    *v = self.forward(f, *v);
                }
            }
        }
    }

    pub fn invert(&self, inst: &mut Instance) {
        let p = inst.features;
        for (cell, &ok) in inst.valid.iter().enumerate() {
            if ok {
                for f in 0..p {
                    let v = &mut inst.measurements[cell * p + f];
                    *v = self.inverse(f, *v);
                }
            }
        }
    }

    /// Invert a flat buffer whose innermost axis is the feature axis.
    pub fn invert_values(&self, values: &mut [f64]) {
        let p = self.mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            *v = self.inverse(i % p, *v);
        }
    }
}

/// Fit on `train`, transform it and every set in `others`.
pub fn standardize(train: &mut [Instance], others: &mut [&mut [Instance]]) -> Option<Standardizer> {
    let s = Standardizer::fit(train)?;
    for inst in train.iter_mut() {
        s.apply(inst);
    }
    for set in others.iter_mut() {
        for inst in set.iter_mut() {
            s.apply(inst);
        }
    }
    Some(s)
}
