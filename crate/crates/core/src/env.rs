//! The shared environment a run's players act in: reward source, adversary
//! and the global clock.

use crate::adversary::{next_attack, AdversarySpec, PhaseTag};
use crate::model::{ActionProfile, RewardSampler, StepOutcome, SystemConfig};
use crate::rng::{stream, SimRng, ADVERSARY_STREAM, REWARD_STREAM};

/// Receives every simulated step.
pub trait StepObserver {
    fn on_step(&mut self, t: u64, phase: PhaseTag, profile: &ActionProfile, outcome: &StepOutcome);
}

impl StepObserver for () {
    fn on_step(&mut self, _: u64, _: PhaseTag, _: &ActionProfile, _: &StepOutcome) {}
}

impl<F> StepObserver for F
where
    F: FnMut(u64, PhaseTag, &ActionProfile, &StepOutcome),
{
    fn on_step(&mut self, t: u64, phase: PhaseTag, profile: &ActionProfile, outcome: &StepOutcome) {
        self(t, phase, profile, outcome)
    }
}

pub struct Environment {
    arms: usize,
    sampler: RewardSampler,
    adversary: AdversarySpec,
    reward_rng: SimRng,
    attack_rng: SimRng,
    t: u64,
    horizon: Option<u64>,
}

impl Environment {
    pub fn new(config: &SystemConfig, adversary: AdversarySpec, seed: u64, horizon: Option<u64>) -> Self {
        Environment {
            arms: config.arms,
            sampler: RewardSampler::new(config),
            adversary,
            reward_rng: stream(seed, REWARD_STREAM),
            attack_rng: stream(seed, ADVERSARY_STREAM),
            t: 0,
            horizon,
        }
    }

    /// Steps simulated so far.
    pub fn time(&self) -> u64 {
        self.t
    }

    /// True once the horizon (if any) has been reached.
    pub fn exhausted(&self) -> bool {
        self.horizon.is_some_and(|h| self.t >= h)
    }

    pub fn step(
        &mut self,
        profile: &ActionProfile,
        phase: PhaseTag,
        observer: &mut dyn StepObserver,
    ) -> StepOutcome {
        self.t += 1;
        let attack = next_attack(&self.adversary, self.arms, self.t, phase, &mut self.attack_rng);
        let outcome = self.sampler.sample(profile, &attack, &mut self.reward_rng);
        observer.on_step(self.t, phase, profile, &outcome);
        outcome
    }
}
