use rand::Rng;

use super::SacAgent;
use crate::drivesim::Observation;
use crate::policy::{fuse, mixture_moments, realize, ActionGaussian, VehicleAction, ACTION_DIM};

/// Moment-matched Gaussian of the uniformly weighted mixture of the agents'
/// actor outputs. With a single agent this is that agent's policy.
///
/// # Panics
/// If `agents` is empty.
pub fn ensemble_policy(agents: &[SacAgent], s: &Observation) -> ActionGaussian {
    let members: Vec<ActionGaussian> = agents.iter().map(|a| a.actor_forward(s)).collect();
    mixture_moments(&members)
}

/// One composite-policy decision with the distributions behind it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SirlAction {
    pub action: VehicleAction,
    pub raw: [f64; ACTION_DIM],
    pub rl: ActionGaussian,
    pub fused: ActionGaussian,
}

/// Fuses the ensemble policy with `prior` and realizes an action from the
/// result.
pub fn act_sirl<R: Rng + ?Sized>(
    agents: &[SacAgent],
    prior: &ActionGaussian,
    s: &Observation,
    rng: &mut R,
    deterministic: bool,
) -> SirlAction {
    let rl = ensemble_policy(agents, s);
    let fused = fuse(&rl, prior);
    let (action, raw) = realize(&fused, rng, deterministic);
    SirlAction { action, raw, rl, fused }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::{Mlp, SacConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agents(n: usize) -> Vec<SacAgent> {
        (0..n)
            .map(|i| SacAgent::new(SacConfig::default(), 100 + i as u64))
            .collect()
    }

    #[test]
    fn identical_members_equal_single_agent() {
        let a = agents(1).remove(0);
        let s = [0.3; 12];
        let trio = vec![a.clone(), a.clone(), a.clone()];
        let single = a.actor_forward(&s);
        let e = ensemble_policy(&trio, &s);
        for d in 0..ACTION_DIM {
            assert!((e.mean[d] - single.mean[d]).abs() < 1e-15);
            assert!((e.var[d] - single.var[d]).abs() < 1e-15);
        }
    }

    #[test]
    fn ensemble_is_mixture_of_member_outputs() {
        let trio = agents(3);
        let s = [-0.2; 12];
        let members: Vec<_> = trio.iter().map(|a| a.actor_forward(&s)).collect();
        let e = ensemble_policy(&trio, &s);
        assert_eq!(e, mixture_moments(&members));
        for d in 0..ACTION_DIM {
            let within = members.iter().map(|m| m.var[d]).sum::<f64>() / 3.0;
            assert!(e.var[d] >= within);
        }
    }

    #[test]
    fn tight_prior_dominates_untrained_actors() {
        let mut trio = agents(3);
        for a in &mut trio {
            // push log-std to the upper clamp so the actors are maximally vague
            let sizes = a.actor.sizes().to_vec();
            let mut net = Mlp::zeros(&sizes);
            net.params_mut().copy_from_slice(a.actor.params());
            let out = net.bias(sizes.len() - 2).to_vec();
            net.set_output_bias(&[out[0], out[1], 5.0, 5.0]);
            a.actor = net;
        }
        let prior = ActionGaussian::isotropic([0.1, 0.4], 0.001).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..50 {
            let s = [(k as f64 / 25.0) - 1.0; 12];
            let out = act_sirl(&trio, &prior, &s, &mut rng, true);
            assert!((out.action.steer - 0.1).abs() < 0.01);
            assert!((out.action.throttle - 0.4).abs() < 0.01);
        }
    }

    #[test]
    fn deterministic_action_is_clamped_fused_mean() {
        let trio = agents(3);
        let prior = ActionGaussian::isotropic([0.8, 1.4], 0.3).unwrap();
        let s = [0.5; 12];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = act_sirl(&trio, &prior, &s, &mut rng, true);
        assert_eq!(out.raw, out.fused.mean);
        assert_eq!(out.action, VehicleAction::from_raw(out.fused.mean));
        assert_eq!(out.fused, fuse(&prior, &out.rl));
    }
}
