use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::features::EncodedFlow;
use crate::http::{Flow, Label};

/// Cap on benign test flows.
pub const MAX_TEST_BENIGN: usize = 50_000;

/// Malicious:benign training ratio, e.g. `3:10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProportionSpec {
    pub malicious: usize,
    pub benign: usize,
}

impl ProportionSpec {
    pub fn new(malicious: usize, benign: usize) -> Result<Self, ExperimentError> {
        if malicious == 0 || benign == 0 {
            return Err(ExperimentError::BadProportion(format!("{malicious}:{benign}")));
        }
        Ok(Self { malicious, benign })
    }
}

impl Default for ProportionSpec {
    fn default() -> Self {
        Self {
            malicious: 3,
            benign: 10,
        }
    }
}

impl fmt::Display for ProportionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.malicious, self.benign)
    }
}

impl FromStr for ProportionSpec {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::BadProportion(s.to_string());
        let (m, b) = s.split_once(':').ok_or_else(bad)?;
        Self::new(m.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

pub trait Labeled {
    fn label(&self) -> Label;
}

impl Labeled for Flow {
    fn label(&self) -> Label {
        self.label
    }
}

impl Labeled for EncodedFlow {
    fn label(&self) -> Label {
        self.label
    }
}

/// Indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Test set: the 30% of malicious flows not reserved for training plus
/// `min(50000, 40% of benign)` benign flows; it depends only on the labels
/// and the seed. Training set: the reserved 70% of malicious flows and
/// enough of the remaining benign flows to meet `spec`. When the benign
/// remainder is too small, fewer malicious flows are used instead.
pub fn split_indices(labels: &[Label], spec: ProportionSpec, seed: u64) -> Result<Split, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mal: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Malicious).collect();
    let mut ben: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Benign).collect();
    mal.shuffle(&mut rng);
    ben.shuffle(&mut rng);
    let mal_reserved = mal.len() * 7 / 10;
    let test_benign = MAX_TEST_BENIGN.min(ben.len() * 2 / 5);
    let ben_available = ben.len() - test_benign;
    let mal_train = mal_reserved.min(ben_available * spec.malicious / spec.benign);
    let ben_train = (mal_train * spec.benign) / spec.malicious;
    if mal_train == 0 || ben_train == 0 || mal.len() == mal_reserved || test_benign == 0 {
        return Err(ExperimentError::InsufficientData(format!(
            "{} malicious / {} benign flows cannot support {spec}",
            mal.len(),
            ben.len()
        )));
    }
    let mut train: Vec<usize> = mal[..mal_train].to_vec();
    train.extend_from_slice(&ben[test_benign..test_benign + ben_train]);
    let mut test: Vec<usize> = mal[mal_reserved..].to_vec();
    test.extend_from_slice(&ben[..test_benign]);
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// `make_split(dataset, spec, seed)`.
pub fn make_split<T: Labeled + Clone>(
    dataset: &[T],
    spec: ProportionSpec,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), ExperimentError> {
    let labels: Vec<Label> = dataset.iter().map(Labeled::label).collect();
    let s = split_indices(&labels, spec, seed)?;
    Ok((
        s.train.iter().map(|&i| dataset[i].clone()).collect(),
        s.test.iter().map(|&i| dataset[i].clone()).collect(),
    ))
}
