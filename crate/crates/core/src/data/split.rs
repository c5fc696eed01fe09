use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One leave-one-person-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test: u32,
    pub train: Vec<u32>,
}

/// One fold per person, in input order; train ids keep input order.
pub fn lopo_split(ids: &[u32]) -> Result<Vec<Fold>> {
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 persons, got {}",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput(format!("duplicate person id {}", w[0])));
    }
    Ok(ids
        .iter()
        .map(|&test| Fold {
            test,
            train: ids.iter().copied().filter(|&p| p != test).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_persons() {
        let folds = lopo_split(&[1, 2, 3, 4, 5, 6, 7]).unwrap();
        assert_eq!(folds.len(), 7);
        for f in &folds {
            assert_eq!(f.train.len(), 6);
            assert!(!f.train.contains(&f.test));
        }
    }

    #[test]
    fn two_mirrored() {
        let f = lopo_split(&[4, 9]).unwrap();
        assert_eq!(
            f[0],
            Fold {
                test: 4,
                train: vec![9]
            }
        );
        assert_eq!(
            f[1],
            Fold {
                test: 9,
                train: vec![4]
            }
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(lopo_split(&[1]).is_err());
        assert!(lopo_split(&[1, 2, 1]).is_err());
    }
}
