use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Masks};
use crate::error::{Error, Result};

/// Label-balanced validation/test fractions and a per-class training quota
/// of `min(train_fraction * class_size, train_cap)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPolicy {
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub train_fraction: f64,
    pub train_cap: usize,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            val_fraction: 0.25,
            test_fraction: 0.25,
            train_fraction: 0.5,
            train_cap: 500,
        }
    }
}

/// Splits quota `total` over `classes` as evenly as possible.
fn balanced_quota(total: usize, classes: usize) -> Vec<usize> {
    (0..classes)
        .map(|c| total / classes + usize::from(c < total % classes))
        .collect()
}

pub fn split(graph: &Graph, seed: u64, policy: &SplitPolicy) -> Result<Masks> {
    let n = graph.node_count();
    if n < 8 {
        return Err(Error::Split(format!("need at least 8 nodes, got {n}")));
    }
    let classes = graph.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for v in 0..n {
        if let Some(y) = graph.label(v) {
            by_class[y].push(v);
        }
    }
    if let Some(c) = by_class.iter().position(|members| members.len() < 2) {
        return Err(Error::Split(format!("class {c} has fewer than 2 nodes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let n_val = (policy.val_fraction * n as f64).round() as usize;
    let n_test = (policy.test_fraction * n as f64).round() as usize;
    // Alternate which classes absorb the odd node so val and test stay
    // balanced in total as well.
    let val_quota = balanced_quota(n_val, classes);
    let mut test_quota = balanced_quota(n_test, classes);
    test_quota.reverse();

    let mut masks = Masks::empty(n);
    for (c, members) in by_class.iter().enumerate() {
        let need = val_quota[c] + test_quota[c];
        if members.len() < need {
            return Err(Error::Split(format!(
                "class {c} has {} nodes but balance needs {need} for validation and test",
                members.len()
            )));
        }
        let (val, rest) = members.split_at(val_quota[c]);
        let (test, rest) = rest.split_at(test_quota[c]);
        let quota = ((policy.train_fraction * members.len() as f64).floor() as usize).min(policy.train_cap);
        let quota = quota.min(rest.len());
        if quota == 0 {
            return Err(Error::Split(format!("class {c} has no nodes left for training")));
        }
        for &v in val {
            masks.val[v] = true;
        }
        for &v in test {
            masks.test[v] = true;
        }
        for &v in &rest[..quota] {
            masks.train[v] = true;
        }
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: usize) -> Graph {
        Graph::new(
            n,
            [],
            vec![0.0; n],
            1,
            (0..n).map(|v| Some(v % 2)).collect(),
            (0..n).map(|v| (v / 2) % 2).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let g = balanced(100);
        let p = SplitPolicy::default();
        assert_eq!(split(&g, 1, &p).unwrap(), split(&g, 1, &p).unwrap());
        assert_ne!(split(&g, 1, &p).unwrap(), split(&g, 2, &p).unwrap());
    }

    #[test]
    fn quarter_validation_and_test() {
        let g = balanced(100);
        let masks = split(&g, 1, &SplitPolicy::default()).unwrap();
        let count = |m: &[bool]| m.iter().filter(|&&x| x).count();
        assert_eq!(count(&masks.val), 25);
        assert_eq!(count(&masks.test), 25);
        let per_class = |m: &[bool], c| (0..100).filter(|&v| m[v] && v % 2 == c).count();
        assert!(per_class(&masks.val, 0).abs_diff(per_class(&masks.val, 1)) <= 1);
        assert!(per_class(&masks.test, 0).abs_diff(per_class(&masks.test, 1)) <= 1);
    }

    #[test]
    fn training_quota_is_min_of_half_and_cap() {
        let g = balanced(100);
        let masks = split(&g, 3, &SplitPolicy::default()).unwrap();
        for c in 0..2 {
            let train = (0..100).filter(|&v| masks.train[v] && v % 2 == c).count();
            assert_eq!(train, 25);
        }
        let capped = SplitPolicy {
            train_cap: 10,
            ..Default::default()
        };
        let masks = split(&g, 3, &capped).unwrap();
        for c in 0..2 {
            let train = (0..100).filter(|&v| masks.train[v] && v % 2 == c).count();
            assert_eq!(train, 10);
        }
    }

    #[test]
    fn tiny_class_is_rejected() {
        let mut labels: Vec<_> = (0..20).map(|_| Some(0)).collect();
        labels[0] = Some(1);
        let g = Graph::new(20, [], vec![0.0; 20], 1, labels, vec![0; 20]).unwrap();
        assert!(matches!(split(&g, 1, &SplitPolicy::default()), Err(Error::Split(_))));
    }
}
