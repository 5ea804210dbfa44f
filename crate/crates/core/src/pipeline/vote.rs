//! Vote aggregation. Every function here depends only on the multiset of
//! votes, never on their order.

use std::collections::BTreeMap;

use crate::engine::Preference;
use crate::factor_model::Support;

/// The strictly most frequent item, if there is one.
pub fn unique_mode<T: Ord + Clone>(votes: &[T]) -> Option<T> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let best = *counts.values().max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == best);
    let (first, _) = winners.next()?;
    winners.next().is_none().then(|| (*first).clone())
}

/// Classification majority; no unique mode means Neutral.
pub fn majority_support(votes: &[Support]) -> Support {
    unique_mode(votes).unwrap_or(Support::Neutral)
}

/// Pairwise-label majority; no unique mode means Same.
pub fn majority_preference(votes: &[Preference]) -> Preference {
    let ranked: Vec<u8> = votes
        .iter()
        .map(|p| match p {
            Preference::Condition1 => 0,
            Preference::Condition2 => 1,
            Preference::Same => 2,
        })
        .collect();
    match unique_mode(&ranked) {
        Some(0) => Preference::Condition1,
        Some(1) => Preference::Condition2,
        _ => Preference::Same,
    }
}

/// Most frequent probability; without a unique mode, the median.
pub fn majority_probability(votes: &[f64]) -> Option<f64> {
    if votes.is_empty() || votes.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let bits: Vec<u64> = votes.iter().map(|v| (v + 0.0).to_bits()).collect();
    if let Some(b) = unique_mode(&bits) {
        return Some(f64::from_bits(b));
    }
    let mut sorted = votes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classification_votes() {
        use Support::*;
        assert_eq!(majority_support(&[Outcome1, Outcome1, Neutral]), Outcome1);
        assert_eq!(majority_support(&[Outcome1, Outcome2, Neutral]), Neutral);
        assert_eq!(majority_support(&[Outcome2, Outcome2, Outcome2]), Outcome2);
        assert_eq!(majority_support(&[]), Neutral);
    }

    #[test]
    fn probability_votes() {
        assert_eq!(majority_probability(&[0.7, 0.7, 0.6]), Some(0.7));
        assert_eq!(majority_probability(&[0.2, 0.9, 0.5]), Some(0.5));
        assert_eq!(majority_probability(&[0.2, 0.4]), Some(0.30000000000000004));
        assert_eq!(majority_probability(&[]), None);
    }

    #[test]
    fn preference_votes() {
        use Preference::*;
        assert_eq!(majority_preference(&[Condition1, Condition2, Condition1]), Condition1);
        assert_eq!(majority_preference(&[Condition1, Condition2, Same]), Same);
    }

    fn support() -> impl Strategy<Value = Support> {
        prop_oneof![Just(Support::Outcome1), Just(Support::Outcome2), Just(Support::Neutral)]
    }

    proptest! {
        #[test]
        fn support_vote_is_order_free(votes in proptest::collection::vec(support(), 0..7), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = votes.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(majority_support(&votes), majority_support(&shuffled));
        }

        #[test]
        fn probability_vote_is_order_free(votes in proptest::collection::vec(0u8..=10, 1..7)) {
            let probs: Vec<f64> = votes.iter().map(|&v| f64::from(v) / 10.0).collect();
            let mut rev = probs.clone();
            rev.reverse();
            prop_assert_eq!(majority_probability(&probs), majority_probability(&rev));
        }
    }
}
