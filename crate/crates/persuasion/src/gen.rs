//! Seeded random populations of environments and protocols.
//!
//! Used by the verification suite and property tests. Everything is driven
//! by an explicit ChaCha seed, so populations are reproducible across runs
//! and platforms.

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Environment, Protocol, SignalModel};

/// A deterministic generator for the given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A probability vector of length `k` with entries at least
/// `floor / (k as f64)` after normalization, roughly.
fn random_distribution(r: &mut ChaCha8Rng, k: usize, floor: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| floor + r.random::<f64>()).collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// A full-support signal model with a clear informativeness margin
/// (`gamma > 1.05`).
pub fn random_signal_model(r: &mut ChaCha8Rng, n_signals: usize) -> SignalModel {
    let names: Vec<String> = (0..n_signals).map(|s| format!("s{s}")).collect();
    loop {
        let pi_h = random_distribution(r, n_signals, 0.08);
        let pi_l = random_distribution(r, n_signals, 0.08);
        if let Ok(sm) = SignalModel::new(names.clone(), pi_h, pi_l) {
            if sm.gamma() > 1.05 {
                return sm;
            }
        }
    }
}

/// An environment with a prior in `[0.15, 0.85]` and a random signal model.
pub fn random_environment(r: &mut ChaCha8Rng, n_signals: usize) -> Environment {
    let prior = 0.15 + 0.7 * r.random::<f64>();
    Environment::new(prior, random_signal_model(r, n_signals)).unwrap()
}

/// An arbitrary validated protocol: a mix of deterministic and stochastic
/// rows, occasional absorbing states, actions mixing {0, 1} and interior
/// values, and a degenerate or spread-out start.
pub fn random_protocol(r: &mut ChaCha8Rng, m: usize, n_signals: usize) -> Protocol {
    let mut proto = Protocol::zeroed(m, n_signals);
    for i in 0..m {
        if m > 1 && r.random::<f64>() < 0.15 {
            // absorbing state
            for s in 0..n_signals {
                proto.transition_mut(i, s)[i] = 1.0;
            }
            continue;
        }
        for s in 0..n_signals {
            if r.random::<f64>() < 0.5 {
                let j = r.random_range(0..m);
                proto.transition_mut(i, s)[j] = 1.0;
            } else {
                let row = random_distribution(r, m, 0.02);
                proto.set_transition(i, s, row);
            }
        }
    }
    for i in 0..m {
        let a = match r.random_range(0..4u8) {
            0 => 0.0,
            1 => 1.0,
            _ => r.random::<f64>(),
        };
        proto.set_action(i, a);
    }
    if r.random::<f64>() < 0.5 {
        let mut g = vec![0.0; m];
        g[r.random_range(0..m)] = 1.0;
        proto.set_initial(g);
    } else {
        proto.set_initial(random_distribution(r, m, 0.05));
    }
    proto
}

/// A random parsimonious protocol: absorbing ends `0` and `m-1` with
/// actions 0 and 1, dense full-support transient rows (so the play ends
/// almost surely and the restricted chain is irreducible), and a degenerate
/// start at a random transient state.
pub fn random_parsimonious(r: &mut ChaCha8Rng, m: usize, n_signals: usize) -> Protocol {
    assert!(m >= 3);
    let mut proto = Protocol::zeroed(m, n_signals);
    for s in 0..n_signals {
        proto.transition_mut(0, s)[0] = 1.0;
        proto.transition_mut(m - 1, s)[m - 1] = 1.0;
    }
    let floor = [0.002, 0.02, 0.1][r.random_range(0..3usize)];
    for i in 1..m - 1 {
        for s in 0..n_signals {
            proto.set_transition(i, s, random_distribution(r, m, floor));
        }
    }
    proto.set_action(m - 1, 1.0);
    let mut g = vec![0.0; m];
    g[r.random_range(1..m - 1)] = 1.0;
    proto.set_initial(g);
    proto
}

/// A random absorbing chain: `n_abs` absorbing states at random labels,
/// dense transient rows, arbitrary actions, degenerate transient start.
/// Play ends almost surely from everywhere.
pub fn random_absorbing_chain(
    r: &mut ChaCha8Rng,
    m: usize,
    n_signals: usize,
    n_abs: usize,
) -> Protocol {
    assert!(n_abs >= 1 && n_abs < m);
    let mut proto = Protocol::zeroed(m, n_signals);
    let mut absorbing = std::collections::BTreeSet::new();
    while absorbing.len() < n_abs {
        absorbing.insert(r.random_range(0..m));
    }
    for i in 0..m {
        if absorbing.contains(&i) {
            for s in 0..n_signals {
                proto.transition_mut(i, s)[i] = 1.0;
            }
        } else {
            for s in 0..n_signals {
                proto.set_transition(i, s, random_distribution(r, m, 0.02));
            }
        }
    }
    for i in 0..m {
        proto.set_action(i, r.random::<f64>());
    }
    let transient: Vec<usize> = (0..m).filter(|i| !absorbing.contains(i)).collect();
    let mut g = vec![0.0; m];
    g[transient[r.random_range(0..transient.len())]] = 1.0;
    proto.set_initial(g);
    proto
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_states, shape, validate};

    #[test]
    fn random_protocols_validate() {
        let mut r = rng(1);
        for i in 0..50 {
            let env = random_environment(&mut r, 2 + (i % 2));
            let proto = random_protocol(&mut r, 2 + (i % 5), env.n_signals());
            assert!(validate(&env, &proto).is_ok(), "case {i}");
        }
    }

    #[test]
    fn random_parsimonious_has_the_right_shape() {
        let mut r = rng(2);
        for i in 0..50 {
            let env = random_environment(&mut r, 2);
            let m = 3 + (i % 4);
            let proto = random_parsimonious(&mut r, m, 2);
            assert!(validate(&env, &proto).is_ok());
            assert!(shape(&proto).is_parsimonious, "case {i}");
        }
    }

    #[test]
    fn random_absorbing_chain_classifies() {
        let mut r = rng(3);
        for _ in 0..30 {
            let proto = random_absorbing_chain(&mut r, 5, 2, 2);
            let class = classify_states(&proto);
            assert_eq!(class.absorbing.len(), 2);
            assert_eq!(class.transient.len(), 3);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = random_protocol(&mut rng(7), 4, 2);
        let b = random_protocol(&mut rng(7), 4, 2);
        assert_eq!(a, b);
    }
}
