#![allow(dead_code)]

use nela_core::environment::{play_round, sample_arm_set, sample_user};
use nela_core::{GroundTruth64, Influence64, Policy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Trace {
    pub users: Vec<usize>,
    pub choices: Vec<usize>,
    pub regrets: Vec<f64>,
}

impl Trace {
    pub fn cum_regret(&self) -> f64 {
        self.regrets.iter().sum()
    }
}

/// Closed-loop run on a seeded stream of users, equicorrelated arms and noise.
pub fn run_loop(
    policy: &mut dyn Policy<f64>,
    truth: &GroundTruth64,
    w: &Influence64,
    rounds: usize,
    arms: usize,
    sigma: f64,
    seed: u64,
) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (truth.n(), truth.d());
    let mut trace = Trace {
        users: Vec::new(),
        choices: Vec::new(),
        regrets: Vec::new(),
    };
    for t in 1..=rounds {
        let user = sample_user(n, &mut rng);
        let set = sample_arm_set(arms, d, 0.7, &mut rng).unwrap();
        let chosen = policy.select(user, &set);
        let rec = play_round(t, truth, w, set, user, chosen, sigma, &mut rng);
        policy.update(user, rec.arm_set.arm(chosen), rec.reward).unwrap();
        trace.users.push(user);
        trace.choices.push(chosen);
        trace.regrets.push(rec.instant_regret);
    }
    trace
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
