use rand::seq::SliceRandom;

use super::Dataset;
use crate::emcore::LabeledSubset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// `m` labeled samples: `⌊m/K⌋` from every class, the remainder from
/// distinct classes drawn at random. Indices are sorted; `m = N` labels
/// everything.
pub fn sample_labeled_subset(data: &Dataset, m: usize, seed: u64) -> Result<LabeledSubset> {
    let truth = data
        .labels()
        .ok_or_else(|| Error::Dataset("labeled subset needs ground truth".into()))?;
    let (n, k) = (data.len(), data.classes());
    if m == 0 || m > n {
        return Err(Error::Dataset(format!("cannot label {m} of {n} samples")));
    }
    if m == n {
        return LabeledSubset::new((0..n).collect(), truth.to_vec());
    }
    let mut rng = stream(seed, Stream::Labeled);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in truth.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut quota = vec![m / k; k];
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut extra = m % k;
    for &c in &order {
        if extra == 0 {
            break;
        }
        if by_class[c].len() > quota[c] {
            quota[c] += 1;
            extra -= 1;
        }
    }
    let short: Vec<String> = (0..k)
        .filter(|&c| by_class[c].len() < quota[c])
        .map(|c| format!("class {c} has {} of {} needed", by_class[c].len(), quota[c]))
        .collect();
    if !short.is_empty() {
        return Err(Error::Dataset(format!("not enough samples: {}", short.join(", "))));
    }
    if extra > 0 {
        return Err(Error::Dataset(format!("{extra} labels left over after exhausting every class")));
    }
    let mut picked = Vec::with_capacity(m);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..quota[c]]);
    }
    picked.sort_unstable();
    let labels = picked.iter().map(|&i| truth[i]).collect();
    LabeledSubset::new(picked, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_mixture, SynthKind};

    #[test]
    fn balance_rule() {
        let d = synth_mixture(SynthKind::GaussianGrid, 10, 500, 0).unwrap();
        let s = sample_labeled_subset(&d, 100, 1).unwrap();
        for c in 0..10 {
            assert_eq!(s.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        let one = sample_labeled_subset(&d, 10, 1).unwrap();
        let mut l = one.labels.clone();
        l.sort();
        assert_eq!(l, (0..10).collect::<Vec<_>>());
        let all = sample_labeled_subset(&d, 500, 2).unwrap();
        assert_eq!(all.indices, (0..500).collect::<Vec<_>>());
        assert_eq!(sample_labeled_subset(&d, 37, 4).unwrap(), sample_labeled_subset(&d, 37, 4).unwrap());
    }

    #[test]
    fn short_class_is_named() {
        use crate::autodiff::Tensor;
        use crate::data::DatasetMeta;
        let d = Dataset::new(
            Tensor::zeros([5, 1]).unwrap(),
            Some(vec![0, 0, 0, 0, 1]),
            2,
            DatasetMeta {
                name: "t".into(),
                range: (0.0, 1.0),
                seed: None,
            },
        )
        .unwrap();
        let err = sample_labeled_subset(&d, 4, 0).unwrap_err().to_string();
        assert!(err.contains("class 1"), "{err}");
    }
}
