use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::generator::LabeledPair;
use crate::error::{Error, Result};

/// Train/validation/test fractions over subjects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

/// Pair indices of each split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn all(&self) -> [&[usize]; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.validation, self.test];
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "fractions {f:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Splits by `subject_id` so that no subject contributes to two splits.
///
/// Subjects are shuffled with the split seed; validation and test each
/// receive `round(fraction * subjects)` subjects (at least one) and the rest
/// go to train.
pub fn split_by_subject(pairs: &[LabeledPair], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let mut subjects: Vec<u32> = pairs
        .iter()
        .map(|p| p.subject_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let s = subjects.len();
    if s < 3 {
        return Err(Error::InsufficientSubjects { subjects: s, splits: 3 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    subjects.shuffle(&mut rng);
    let count = |f: f64| ((f * s as f64).round() as usize).max(1);
    let n_val = count(spec.validation);
    let n_test = count(spec.test);
    if n_val + n_test >= s {
        return Err(Error::InsufficientSubjects { subjects: s, splits: 3 });
    }
    let val: BTreeSet<u32> = subjects[..n_val].iter().copied().collect();
    let test: BTreeSet<u32> = subjects[n_val..n_val + n_test].iter().copied().collect();
    let mut out = Splits::default();
    for (i, p) in pairs.iter().enumerate() {
        if val.contains(&p.subject_id) {
            out.validation.push(i);
        } else if test.contains(&p.subject_id) {
            out.test.push(i);
        } else {
            out.train.push(i);
        }
    }
    Ok(out)
}
