//! Nested training-set groups for the two experiment arms.
//!
//! Classic groups add augmentations of the training originals with equal
//! volume per ROI; synthetic groups add generated ROIs in equal numbers per
//! class. Both draw members as prefixes of seeded permutations, so every
//! group contains all members of the smaller groups before it.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LesionClass;
use crate::error::{param, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Member {
    Original { id: String },
    Augmented { parent: String, index: usize },
    Synthetic { class: LesionClass, index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataGroup {
    pub index: usize,
    /// Samples added on top of the base training set.
    pub added: usize,
    pub members: Vec<Member>,
}

impl DataGroup {
    pub fn contains_all(&self, smaller: &DataGroup) -> bool {
        let mine: std::collections::HashSet<&Member> = self.members.iter().collect();
        smaller.members.iter().all(|m| mine.contains(m))
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(param("group size list is empty"));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(param(format!("group sizes {sizes:?} must be non-decreasing")));
    }
    Ok(())
}

/// Groups of `originals` plus `sizes[i]` augmentations drawn from each ROI's
/// pool of `pool_per_roi`. A count not divisible by the number of originals
/// gives one extra augmentation to the lexicographically smallest ids.
pub fn build_aug_groups(originals: &[&str], pool_per_roi: usize, sizes: &[usize], seed: u64) -> Result<Vec<DataGroup>> {
    check_sizes(sizes)?;
    if originals.is_empty() {
        return Err(param("no original ROIs to augment"));
    }
    let mut ids: Vec<&str> = originals.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != originals.len() {
        return Err(param("duplicate original ROI ids"));
    }
    let n = ids.len();
    let max = *sizes.last().expect("non-empty");
    if max.div_ceil(n) > pool_per_roi {
        return Err(param(format!(
            "{max} augmentations over {n} ROIs need {} per ROI but the pool holds {pool_per_roi}",
            max.div_ceil(n)
        )));
    }
    let orders: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| {
            let mut p: Vec<usize> = (0..pool_per_roi).collect();
            p.shuffle(&mut rng::stream(seed, "aug-group", &[rng::key_of(id)]));
            p
        })
        .collect();
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(gi, &size)| {
            let mut members: Vec<Member> = ids.iter().map(|id| Member::Original { id: id.to_string() }).collect();
            for (i, id) in ids.iter().enumerate() {
                let quota = size / n + usize::from(i < size % n);
                members.extend(orders[i][..quota].iter().map(|&index| Member::Augmented { parent: id.to_string(), index }));
            }
            DataGroup { index: gi, added: size, members }
        })
        .collect())
}

/// Groups of `sizes[i]` synthetic ROIs per class drawn from pools of
/// `pool_per_class[c]` generated samples.
pub fn build_synth_groups(pool_per_class: [usize; 3], sizes: &[usize], seed: u64) -> Result<Vec<DataGroup>> {
    check_sizes(sizes)?;
    let max = *sizes.last().expect("non-empty");
    for class in LesionClass::ALL {
        if pool_per_class[class.index()] < max {
            return Err(param(format!(
                "synthetic pool for {class} holds {} but {max} are needed",
                pool_per_class[class.index()]
            )));
        }
    }
    let orders: Vec<Vec<usize>> = LesionClass::ALL
        .iter()
        .map(|c| {
            let mut p: Vec<usize> = (0..pool_per_class[c.index()]).collect();
            p.shuffle(&mut rng::stream(seed, "synth-group", &[c.code() as u64]));
            p
        })
        .collect();
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(gi, &size)| {
            let members = LesionClass::ALL
                .iter()
                .flat_map(|&class| orders[class.index()][..size].iter().map(move |&index| Member::Synthetic { class, index }))
                .collect();
            DataGroup { index: gi, added: size * LesionClass::COUNT, members }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_goes_to_smallest_ids() {
        let ids = ["c", "a", "b"];
        let g = build_aug_groups(&ids, 10, &[0, 4], 1).unwrap();
        assert_eq!(g[0].members.len(), 3);
        let count = |p: &str| {
            g[1].members.iter().filter(|m| matches!(m, Member::Augmented { parent, .. } if parent == p)).count()
        };
        assert_eq!((count("a"), count("b"), count("c")), (2, 1, 1));
    }

    #[test]
    fn pool_exhaustion() {
        assert!(build_aug_groups(&["a", "b"], 3, &[7], 0).is_err());
        assert!(build_synth_groups([5, 5, 4], &[5], 0).is_err());
        assert!(build_aug_groups(&["a"], 3, &[2, 1], 0).is_err());
    }

    #[test]
    fn synth_group_counts() {
        let g = build_synth_groups([100, 100, 100], &[0, 100], 3).unwrap();
        assert!(g[0].members.is_empty());
        assert_eq!(g[1].members.len(), 300);
        assert_eq!(g[1].added, 300);
    }
}
