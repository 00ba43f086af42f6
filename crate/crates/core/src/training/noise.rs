use rand::Rng;

use crate::seqcoder::{BOS, EOS, PAD};

fn droppable(t: u32) -> bool {
    t != PAD && t != BOS && t != EOS
}

/// One independent keep/drop pass; may return an empty sequence.
pub fn drop_tokens<R: Rng>(x: &[u32], rng: &mut R, drop_p: f64) -> Vec<u32> {
    x.iter().copied().filter(|&t| !droppable(t) || rng.random::<f64>() >= drop_p).collect()
}

/// Local shuffle: token `i` is keyed by `i + U(0, window + 1)` and the keys
/// are sorted, so nothing moves more than `window` places.
pub fn shuffle_local<R: Rng>(x: &[u32], rng: &mut R, window: usize) -> Vec<u32> {
    if window == 0 {
        return x.to_vec();
    }
    let mut keyed: Vec<(f64, u32)> =
        x.iter().enumerate().map(|(i, &t)| (i as f64 + rng.random::<f64>() * (window + 1) as f64, t)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Word dropout followed by a local shuffle. The drop pass is repeated
/// until at least one token survives.
pub fn noise_sequence<R: Rng>(x: &[u32], rng: &mut R, drop_p: f64, shuffle_window: usize) -> Vec<u32> {
    if x.is_empty() {
        return Vec::new();
    }
    let kept = loop {
        let kept = drop_tokens(x, rng, drop_p);
        if !kept.is_empty() {
            break kept;
        }
    };
    shuffle_local(&kept, rng, shuffle_window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![4, 9, 5, 7, 6];
        assert_eq!(noise_sequence(&x, &mut rng, 0.0, 0), x);
    }

    #[test]
    fn single_token_survival_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 10_000;
        let kept = (0..trials).filter(|_| !drop_tokens(&[5], &mut rng, 0.5).is_empty()).count();
        let rate = kept as f64 / trials as f64;
        assert!((rate - 0.5).abs() <= 0.02, "{rate}");
        // the resampling wrapper never returns an empty sequence
        assert!((0..1000).all(|_| noise_sequence(&[5], &mut rng, 0.9, 3) == vec![5]));
    }

    proptest! {
        #[test]
        fn shuffle_is_bounded_permutation(len in 1usize..40, k in 0usize..6, seed: u64) {
            let x: Vec<u32> = (0..len as u32).map(|i| i + 4).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = noise_sequence(&x, &mut rng, 0.0, k);
            let mut sorted = y.clone();
            sorted.sort_unstable();
            prop_assert_eq!(&sorted, &x);
            for (pos, t) in y.iter().enumerate() {
                let orig = (t - 4) as usize;
                prop_assert!(pos.abs_diff(orig) <= k);
            }
        }

        #[test]
        fn dropout_keeps_an_ordered_subsequence(len in 1usize..30, p in 0.0f64..0.99, seed: u64) {
            let x: Vec<u32> = (0..len as u32).map(|i| i + 4).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = noise_sequence(&x, &mut rng, p, 0);
            prop_assert!(!y.is_empty());
            prop_assert!(y.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
