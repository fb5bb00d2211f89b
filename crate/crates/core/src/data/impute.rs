//! Slot filling for the impute-then-predict baselines.
//!
//! Every filled slot bumps a per-thread counter so callers can prove that a
//! code path (HyperMM training and inference) never fills anything.

use std::cell::Cell;

use crate::data::MaskedSample;

thread_local! {
    static FILLS: Cell<u64> = const { Cell::new(0) };
}

/// Slots filled on this thread since the last [`reset_fill_count`].
pub fn fill_count() -> u64 {
    FILLS.with(Cell::get)
}

pub fn reset_fill_count() {
    FILLS.with(|c| c.set(0));
}

fn record_fill() {
    FILLS.with(|c| c.set(c.get() + 1));
}

/// Per-modality representative vectors (instance means for bags), with
/// missing slots replaced by `fill[i]`, concatenated into one vector.
pub fn concat_filled(sample: &MaskedSample, fill: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, slot) in sample.slots.iter().enumerate() {
        match slot {
            Some(p) => out.extend(p.mean_instance()),
            None => {
                record_fill();
                out.extend_from_slice(&fill[i]);
            }
        }
    }
    out
}

/// Zero vectors for every modality.
pub fn zero_fill(d: usize, width: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; width]; d]
}

/// Per-modality mean of observed payloads; modalities never observed fall back to zeros.
pub fn mean_fill(samples: &[MaskedSample], d: usize, width: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| {
            let mut sum = vec![0.0; width];
            let mut count = 0usize;
            for s in samples {
                if let Some(p) = &s.slots[i] {
                    sum.iter_mut().zip(p.mean_instance()).for_each(|(a, b)| *a += b);
                    count += 1;
                }
            }
            if count > 0 {
                sum.iter_mut().for_each(|v| *v /= count as f64);
            }
            sum
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MissingnessMask, Payload};

    fn sample(slots: Vec<Option<Vec<f64>>>) -> MaskedSample {
        let mask = MissingnessMask(slots.iter().map(Option::is_none).collect());
        MaskedSample {
            sample_id: "x".into(),
            label: 0,
            slots: slots.into_iter().map(|s| s.map(Payload::Single)).collect(),
            mask,
        }
    }

    #[test]
    fn fills_only_missing_slots_and_counts_them() {
        reset_fill_count();
        let s = sample(vec![Some(vec![1.0, 2.0]), None]);
        let v = concat_filled(&s, &zero_fill(2, 2));
        assert_eq!(v, [1.0, 2.0, 0.0, 0.0]);
        assert_eq!(fill_count(), 1);
        let full = sample(vec![Some(vec![1.0, 2.0]), Some(vec![3.0, 4.0])]);
        concat_filled(&full, &zero_fill(2, 2));
        assert_eq!(fill_count(), 1);
    }

    #[test]
    fn mean_fill_averages_observed() {
        let data = vec![
            sample(vec![Some(vec![1.0]), None]),
            sample(vec![Some(vec![3.0]), Some(vec![5.0])]),
        ];
        assert_eq!(mean_fill(&data, 2, 1), vec![vec![2.0], vec![5.0]]);
    }
}
