use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DescriptorSet;
use crate::error::{Error, Result};

/// Splits by class label into (train, validation, test). All rows of a label
/// land in the same split; rows keep their original order within a split.
pub fn split_dataset(
    set: &DescriptorSet,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(DescriptorSet, DescriptorSet, DescriptorSet)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::config(format!("split fractions must lie in [0, 1], got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions sum to {total}, expected 1")));
    }
    let mut classes: Vec<u32> = set.indices_by_label().into_keys().collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let c = classes.len() as f64;
    let b1 = (fractions[0] * c).round() as usize;
    let b2 = (((fractions[0] + fractions[1]) * c).round() as usize).max(b1);
    let bounds = [0, b1.min(classes.len()), b2.min(classes.len()), classes.len()];

    let names = ["train", "validation", "test"];
    let mut which = std::collections::HashMap::new();
    for part in 0..3 {
        let members = &classes[bounds[part]..bounds[part + 1]];
        if fractions[part] > 0.0 && members.is_empty() {
            return Err(Error::config(format!(
                "{} split would be empty ({} classes, fraction {})",
                names[part],
                classes.len(),
                fractions[part]
            )));
        }
        for &l in members {
            which.insert(l, part);
        }
    }
    let mut idx: [Vec<usize>; 3] = Default::default();
    for (i, l) in set.labels.iter().enumerate() {
        idx[which[l]].push(i);
    }
    Ok((set.subset(&idx[0]), set.subset(&idx[1]), set.subset(&idx[2])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use std::collections::BTreeSet;

    fn set_with_classes(classes: u32, per: u32) -> DescriptorSet {
        let n = (classes * per) as usize;
        let data = (0..n).map(|i| i as f64).collect();
        DescriptorSet::new(
            Matrix::from_vec(n, 1, data).unwrap(),
            (0..classes * per).map(|i| i / per).collect(),
            vec![0; n],
            None,
        )
        .unwrap()
    }

    fn labels(s: &DescriptorSet) -> BTreeSet<u32> {
        s.labels.iter().copied().collect()
    }

    #[test]
    fn whole_set_to_train() {
        let s = set_with_classes(10, 3);
        let (tr, va, te) = split_dataset(&s, [1.0, 0.0, 0.0], 4).unwrap();
        assert_eq!(tr, s);
        assert!(va.is_empty() && te.is_empty());
    }

    #[test]
    fn eighty_ten_ten_on_hundred_classes() {
        let s = set_with_classes(100, 2);
        let (tr, va, te) = split_dataset(&s, [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(
            (labels(&tr).len(), labels(&va).len(), labels(&te).len()),
            (80, 10, 10)
        );
        assert!(labels(&tr).is_disjoint(&labels(&va)));
        assert!(labels(&tr).is_disjoint(&labels(&te)));
        assert!(labels(&va).is_disjoint(&labels(&te)));
        assert_eq!(tr.len() + va.len() + te.len(), s.len());
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let s = set_with_classes(50, 2);
        let a = split_dataset(&s, [0.6, 0.2, 0.2], 1).unwrap();
        let b = split_dataset(&s, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!(a.0, b.0);
        let c = split_dataset(&s, [0.6, 0.2, 0.2], 2).unwrap();
        assert_ne!(labels(&a.0), labels(&c.0));
    }

    #[test]
    fn empty_split_is_config_error() {
        let s = set_with_classes(3, 2);
        assert!(matches!(
            split_dataset(&s, [0.9, 0.05, 0.05], 0),
            Err(Error::Config(_))
        ));
        assert!(split_dataset(&s, [0.5, 0.2, 0.2], 0).is_err());
    }
}
