use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Location id used for padded rows of a batch.
pub const PAD_LOCATION: u32 = u32::MAX;

/// One forecasting problem: `N` locations over `T + T'` instants.
///
/// Positions `0..T` are sources, the last of which (`T - 1`) is the
/// reference instant; positions `T..T+T'` are targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub num_locations: usize,
    pub source_len: usize,
    pub target_len: usize,
    pub features: usize,
    /// `⟨N, T+T', P⟩`, zero where masked.
    pub measurements: Vec<f64>,
    /// `⟨N, T+T'⟩`.
    pub valid: Vec<bool>,
    /// Row in the location-embedding table, one per location.
    pub location_ids: Vec<u32>,
    pub day_ids: Vec<u8>,
    pub slot_ids: Vec<u16>,
    /// Unix timestamp of position 0.
    pub start_timestamp: i64,
    pub step_seconds: i64,
}

impl Instance {
    pub fn horizon(&self) -> usize {
        self.source_len + self.target_len
    }

    /// 0-based position of the reference instant.
    pub fn reference_position(&self) -> usize {
        self.source_len - 1
    }

    pub fn reference_timestamp(&self) -> i64 {
        self.timestamp(self.reference_position())
    }

    pub fn timestamp(&self, position: usize) -> i64 {
        self.start_timestamp + position as i64 * self.step_seconds
    }

    pub fn value(&self, location: usize, position: usize, feature: usize) -> f64 {
        self.measurements[(location * self.horizon() + position) * self.features + feature]
    }

    pub fn is_valid(&self, location: usize, position: usize) -> bool {
        self.valid[location * self.horizon() + position]
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.horizon();
        let n = self.num_locations;
        if self.source_len == 0 || self.features == 0 {
            bail!(Data, "instance needs T >= 1 and P >= 1");
        }
        if self.measurements.len() != n * h * self.features
            || self.valid.len() != n * h
            || self.location_ids.len() != n
            || self.day_ids.len() != h
            || self.slot_ids.len() != h
        {
            bail!(Data, "instance buffers inconsistent with N={n}, T+T'={h}");
        }
        Ok(())
    }

    /// Keep only the locations at `indices` (in that order).
    pub fn select_locations(&self, indices: &[usize]) -> Instance {
        let h = self.horizon();
        let p = self.features;
        let mut measurements = Vec::with_capacity(indices.len() * h * p);
        let mut valid = Vec::with_capacity(indices.len() * h);
        let mut location_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            measurements.extend_from_slice(&self.measurements[i * h * p..(i + 1) * h * p]);
            valid.extend_from_slice(&self.valid[i * h..(i + 1) * h]);
            location_ids.push(self.location_ids[i]);
        }
        Instance {
            num_locations: indices.len(),
            measurements,
            valid,
            location_ids,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Instance {
        Instance {
            num_locations: 0,
            source_len: self.source_len,
            target_len: self.target_len,
            features: self.features,
            measurements: Vec::new(),
            valid: Vec::new(),
            location_ids: Vec::new(),
            day_ids: self.day_ids.clone(),
            slot_ids: self.slot_ids.clone(),
            start_timestamp: self.start_timestamp,
            step_seconds: self.step_seconds,
        }
    }
}

/// `B` instances padded to a common location count.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub batch_size: usize,
    pub num_locations: usize,
    pub source_len: usize,
    pub target_len: usize,
    pub features: usize,
    /// `⟨B, N, T+T', P⟩`.
    pub measurements: Vec<f64>,
    /// `⟨B, N, T+T'⟩`.
    pub valid: Vec<bool>,
    /// `⟨B, N⟩`; [`PAD_LOCATION`] marks padding.
    pub location_ids: Vec<u32>,
    /// `⟨B, T+T'⟩`.
    pub day_ids: Vec<u8>,
    pub slot_ids: Vec<u16>,
    pub start_timestamps: Vec<i64>,
    pub step_seconds: i64,
}

impl MaskedBatch {
    /// Pad `instances` to the largest location count among them.
    pub fn from_instances(instances: &[&Instance]) -> Result<MaskedBatch> {
        let Some(first) = instances.first() else {
            bail!(Data, "cannot batch zero instances");
        };
        let (t, tp, p) = (first.source_len, first.target_len, first.features);
        let n = instances.iter().map(|i| i.num_locations).max().unwrap_or(0);
        let h = t + tp;
        let b = instances.len();
        let mut out = MaskedBatch {
            batch_size: b,
            num_locations: n,
            source_len: t,
            target_len: tp,
            features: p,
            measurements: vec![0.0; b * n * h * p],
            valid: vec![false; b * n * h],
            location_ids: vec![PAD_LOCATION; b * n],
            day_ids: Vec::with_capacity(b * h),
            slot_ids: Vec::with_capacity(b * h),
            start_timestamps: Vec::with_capacity(b),
            step_seconds: first.step_seconds,
        };
        for (bi, inst) in instances.iter().enumerate() {
            inst.validate()?;
            if inst.source_len != t || inst.target_len != tp || inst.features != p {
                bail!(Data, "instances in a batch must share T, T' and P");
            }
            let ni = inst.num_locations;
            out.measurements[bi * n * h * p..][..ni * h * p].copy_from_slice(&inst.measurements);
            out.valid[bi * n * h..][..ni * h].copy_from_slice(&inst.valid);
            out.location_ids[bi * n..][..ni].copy_from_slice(&inst.location_ids);
            out.day_ids.extend_from_slice(&inst.day_ids);
            out.slot_ids.extend_from_slice(&inst.slot_ids);
            out.start_timestamps.push(inst.start_timestamp);
        }
        Ok(out)
    }

    pub fn horizon(&self) -> usize {
        self.source_len + self.target_len
    }

    pub fn is_real_location(&self, b: usize, n: usize) -> bool {
        self.location_ids[b * self.num_locations + n] != PAD_LOCATION
    }

    /// Recover instance `b`, dropping padded locations.
    pub fn instance(&self, b: usize) -> Instance {
        let (n, h, p) = (self.num_locations, self.horizon(), self.features);
        let real: Vec<usize> = (0..n).filter(|&i| self.is_real_location(b, i)).collect();
        let mut measurements = Vec::new();
        let mut valid = Vec::new();
        for &i in &real {
            measurements.extend_from_slice(&self.measurements[(b * n + i) * h * p..][..h * p]);
            valid.extend_from_slice(&self.valid[(b * n + i) * h..][..h]);
        }
        Instance {
            num_locations: real.len(),
            source_len: self.source_len,
            target_len: self.target_len,
            features: p,
            measurements,
            valid,
            location_ids: real.iter().map(|&i| self.location_ids[b * n + i]).collect(),
            day_ids: self.day_ids[b * h..(b + 1) * h].to_vec(),
            slot_ids: self.slot_ids[b * h..(b + 1) * h].to_vec(),
            start_timestamp: self.start_timestamps[b],
            step_seconds: self.step_seconds,
        }
    }

    /// Target measurements `⟨B,N,T',P⟩` and their validity mask (same length).
    pub fn targets(&self) -> (Tensor<f64>, Vec<bool>) {
        let (b, n, t, tp, p) = (
            self.batch_size,
            self.num_locations,
            self.source_len,
            self.target_len,
            self.features,
        );
        let h = t + tp;
        let mut values = Vec::with_capacity(b * n * tp * p);
        let mut mask = Vec::with_capacity(b * n * tp * p);
        for bn in 0..b * n {
            for s in t..h {
                let ok = self.valid[bn * h + s];
                for f in 0..p {
                    values.push(self.measurements[(bn * h + s) * p + f]);
                    mask.push(ok);
                }
            }
        }
        (
            Tensor::new(&[b, n, tp, p], values).expect("consistent target shape"),
            mask,
        )
    }

    /// Number of valid events per instance.
    pub fn valid_counts(&self) -> Vec<usize> {
        let per = self.num_locations * self.horizon();
        self.valid.chunks(per.max(1)).map(|c| c.iter().filter(|v| **v).count()).collect()
    }
}

/// Group consecutive instances into batches of at most `batch_size`.
pub fn batch(instances: &[Instance], batch_size: usize) -> Result<Vec<MaskedBatch>> {
    if batch_size == 0 {
        bail!(Config, "batch size must be positive");
    }
    instances
        .chunks(batch_size)
        .map(|chunk| MaskedBatch::from_instances(&chunk.iter().collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use proptest::prelude::*;

    pub(crate) fn random_instance(n: usize, t: usize, tp: usize, p: usize, rng: &mut Stream) -> Instance {
        let h = t + tp;
        let valid: Vec<bool> = (0..n * h).map(|_| rng.uniform() > 0.2).collect();
        let measurements = (0..n * h * p)
            .map(|i| if valid[i / p] { rng.normal() } else { 0.0 })
            .collect();
        Instance {
            num_locations: n,
            source_len: t,
            target_len: tp,
            features: p,
            measurements,
            valid,
            location_ids: (0..n as u32).map(|i| i * 3 + 1).collect(),
            day_ids: (0..h).map(|i| (i % 7) as u8).collect(),
            slot_ids: (0..h).map(|i| i as u16).collect(),
            start_timestamp: 1000 * rng.below(100) as i64,
            step_seconds: 300,
        }
    }

    #[test]
    fn pads_to_largest_instance() {
        let mut rng = Stream::new(1);
        let a = random_instance(3, 2, 2, 1, &mut rng);
        let b = random_instance(5, 2, 2, 1, &mut rng);
        let mb = MaskedBatch::from_instances(&[&a, &b]).unwrap();
        assert_eq!(mb.num_locations, 5);
        for n in 3..5 {
            assert!(!mb.is_real_location(0, n));
            assert!((0..4).all(|s| !mb.valid[n * 4 + s]));
        }
        assert_eq!(mb.instance(0), a);
        assert_eq!(mb.instance(1), b);
    }

    #[test]
    fn single_instance_batch() {
        let mut rng = Stream::new(2);
        let a = random_instance(4, 3, 2, 2, &mut rng);
        let batches = batch(core::slice::from_ref(&a), 8).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].batch_size, 1);
        assert_eq!(batches[0].measurements, a.measurements);
        assert_eq!(batches[0].instance(0), a);
    }

    #[test]
    fn mixed_shapes_rejected() {
        let mut rng = Stream::new(3);
        let a = random_instance(2, 3, 2, 1, &mut rng);
        let b = random_instance(2, 2, 3, 1, &mut rng);
        assert!(MaskedBatch::from_instances(&[&a, &b]).is_err());
    }

    proptest! {
        #[test]
        fn batching_preserves_content_and_mask_counts(sizes in proptest::collection::vec(1usize..6, 1..7), seed in any::<u64>()) {
            let mut rng = Stream::new(seed);
            let insts: Vec<Instance> = sizes.iter().map(|&n| random_instance(n, 3, 2, 2, &mut rng)).collect();
            let batches = batch(&insts, 3).unwrap();
            let mut k = 0;
            for mb in &batches {
                let counts = mb.valid_counts();
                for b in 0..mb.batch_size {
                    let inst = &insts[k];
                    prop_assert_eq!(counts[b], inst.valid.iter().filter(|v| **v).count());
                    let back = mb.instance(b);
                    prop_assert_eq!(
                        back.measurements.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        inst.measurements.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                    );
                    prop_assert_eq!(&back, inst);
                    k += 1;
                }
            }
            prop_assert_eq!(k, insts.len());
        }
    }
}

#[cfg(test)]
pub(crate) use tests::random_instance;
