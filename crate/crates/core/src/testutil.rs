//! Small random datasets shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{CategoricalVar, Covariate, Endpoint, TrialDataset};

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Continuous,
    Binary,
    Count,
    Tte,
}

/// Random trial with subgroup variables `x1..` of the given level counts, a numeric
/// covariate `age`, and every level observed.
pub fn random_dataset(kind: Kind, n: usize, levels: &[usize], seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let treatment: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let vars = levels
        .iter()
        .enumerate()
        .map(|(v, &l)| {
            let codes: Vec<usize> = (0..n)
                .map(|i| if i < l { i } else { rng.random_range(0..l) })
                .collect();
            let names = (0..l)
                .map(|j| ((b'a' + j as u8) as char).to_string())
                .collect();
            CategoricalVar::new(format!("x{}", v + 1), names, codes).unwrap()
        })
        .collect();
    let age = Covariate::Numeric {
        name: "age".into(),
        values: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let endpoint = match kind {
        Kind::Continuous => {
            Endpoint::Continuous((0..n).map(|_| rng.random_range(-2.0..3.0)).collect())
        }
        Kind::Binary => Endpoint::Binary((0..n).map(|_| rng.random_bool(0.4)).collect()),
        Kind::Count => Endpoint::Count {
            counts: (0..n).map(|_| rng.random_range(0..7)).collect(),
            exposure: Some((0..n).map(|_| rng.random_range(0.5..2.0)).collect()),
        },
        Kind::Tte => Endpoint::TimeToEvent {
            time: (0..n).map(|_| rng.random_range(0.05..4.0)).collect(),
            event: (0..n).map(|_| rng.random_bool(0.7)).collect(),
        },
    };
    TrialDataset::new(treatment, vars, vec![age], endpoint).unwrap()
}
