//! Fixed-length batching of per-point feature matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const L_MAX_MATCH: usize = 2900;
pub const L_MAX_SEARCH: usize = 1408;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LengthPolicy {
    /// Pad with zero rows; overlong inputs keep their first `l_max` rows.
    #[default]
    ZeroPad,
    /// Pad short inputs; subsample overlong inputs at a uniform stride.
    Truncate,
    /// Pad short inputs; keep the first `l_max` rows of overlong inputs.
    TruncatePrefix,
}

/// One padded item: `l_max x D` features plus validity bits.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedItem {
    pub features: Tensor,
    pub valid: Vec<bool>,
    pub original_len: usize,
    /// Source row of each valid output row.
    pub source_rows: Vec<usize>,
}

/// `B x l_max x D` features with a `B x l_max` validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub features: Tensor,
    pub valid_mask: Vec<Vec<bool>>,
    pub original_lengths: Vec<usize>,
}

/// Rows kept when `m` rows are reduced to at most `l_max`.
pub fn kept_rows(m: usize, l_max: usize, policy: LengthPolicy) -> Vec<usize> {
    if m <= l_max {
        return (0..m).collect();
    }
    match policy {
        LengthPolicy::ZeroPad | LengthPolicy::TruncatePrefix => (0..l_max).collect(),
        // floor(k * m / l_max) is strictly increasing because m > l_max
        LengthPolicy::Truncate => (0..l_max).map(|k| k * m / l_max).collect(),
    }
}

pub fn pad_or_truncate(features: &Tensor, l_max: usize, policy: LengthPolicy) -> Result<PaddedItem> {
    if l_max == 0 {
        return Err(Error::InvalidInput("l_max must be at least 1".into()));
    }
    if features.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "expected an M x D matrix, got {:?}",
            features.shape()
        )));
    }
    let (m, d) = (features.rows(), features.cols());
    let rows = kept_rows(m, l_max, policy);
    let mut out = Tensor::zeros(&[l_max, d]);
    for (k, &r) in rows.iter().enumerate() {
        out.data_mut()[k * d..(k + 1) * d].copy_from_slice(features.row(r));
    }
    let mut valid = vec![false; l_max];
    valid[..rows.len()].iter_mut().for_each(|v| *v = true);
    Ok(PaddedItem {
        features: out,
        valid,
        original_len: m,
        source_rows: rows,
    })
}

impl PaddedBatch {
    pub fn stack(items: &[PaddedItem]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidBatch("empty batch".into()))?;
        let shape = first.features.shape().to_vec();
        let mut data = Vec::with_capacity(items.len() * first.features.numel());
        for it in items {
            if it.features.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "batch item {:?} vs {:?}",
                    it.features.shape(),
                    shape
                )));
            }
            data.extend_from_slice(it.features.data());
        }
        Ok(Self {
            features: Tensor::from_vec(&[items.len(), shape[0], shape[1]], data)?,
            valid_mask: items.iter().map(|i| i.valid.clone()).collect(),
            original_lengths: items.iter().map(|i| i.original_len).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(m: usize, d: usize) -> Tensor {
        Tensor::from_vec(&[m, d], (0..m * d).map(|v| v as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn pads_short_inputs() {
        let item = pad_or_truncate(&ramp(5, 2), 8, LengthPolicy::ZeroPad).unwrap();
        assert_eq!(item.valid, vec![true, true, true, true, true, false, false, false]);
        assert!(item.features.data()[10..].iter().all(|&v| v == 0.0));
        assert_eq!(item.features.row(4), &[9.0, 10.0]);
        assert_eq!((L_MAX_MATCH, L_MAX_SEARCH), (2900, 1408));
    }

    #[test]
    fn stride_covers_whole_contour() {
        let item = pad_or_truncate(&ramp(10, 1), 4, LengthPolicy::Truncate).unwrap();
        assert_eq!(item.source_rows, vec![0, 2, 5, 7]);
        let prefix = pad_or_truncate(&ramp(10, 1), 4, LengthPolicy::TruncatePrefix).unwrap();
        assert_eq!(prefix.source_rows, vec![0, 1, 2, 3]);
    }

    #[test]
    fn stacking_checks_shapes() {
        let a = pad_or_truncate(&ramp(3, 2), 4, LengthPolicy::ZeroPad).unwrap();
        let b = pad_or_truncate(&ramp(6, 2), 4, LengthPolicy::Truncate).unwrap();
        let batch = PaddedBatch::stack(&[a, b]).unwrap();
        assert_eq!(batch.features.shape(), &[2, 4, 2]);
        assert_eq!(batch.original_lengths, vec![3, 6]);
        let c = pad_or_truncate(&ramp(3, 3), 4, LengthPolicy::ZeroPad).unwrap();
        let a = pad_or_truncate(&ramp(3, 2), 4, LengthPolicy::ZeroPad).unwrap();
        assert!(PaddedBatch::stack(&[a, c]).is_err());
        assert!(PaddedBatch::stack(&[]).is_err());
    }

    proptest! {
        #[test]
        fn mask_sum_is_min_len(m in 1usize..300, l in 1usize..200, p in 0u8..3) {
            let policy = [LengthPolicy::ZeroPad, LengthPolicy::Truncate, LengthPolicy::TruncatePrefix][p as usize];
            let item = pad_or_truncate(&ramp(m, 1), l, policy).unwrap();
            prop_assert_eq!(item.valid.iter().filter(|&&v| v).count(), m.min(l));
            prop_assert!(item.source_rows.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(item.source_rows.iter().all(|&r| r < m));
        }
    }
}
