use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Initialisation scheme for a freshly created parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// He/Kaiming normal for ReLU networks: `N(0, 2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    Normal { std: f64 },
    Uniform { bound: f64 },
}

impl Init {
    pub(crate) fn sample(self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Constant(v) => vec![v; n],
            Init::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                normal(n, std, rng)
            }
            Init::Normal { std } => normal(n, std, rng),
            Init::Uniform { bound } => {
                if bound <= 0.0 {
                    return vec![0.0; n];
                }
                let u = Uniform::new(-bound, bound).expect("valid uniform bounds");
                (0..n).map(|_| rng.sample(u)).collect()
            }
        }
    }
}

fn normal(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if std <= 0.0 {
        return vec![0.0; n];
    }
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}
