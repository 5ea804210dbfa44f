//! Shared inputs for the criterion benches.

use bird_core::{Factor, FactorSpace, FactorValue, Scenario, Support};

/// A space of `factors` factors with `card` values each, supports cycling
/// through outcome 1, outcome 2 and neutral.
pub fn synthetic_space(factors: usize, card: usize) -> FactorSpace {
    let scenario = Scenario {
        id: format!("bench-{factors}x{card}"),
        text: "A synthetic decision.".into(),
        outcome1: "Do it.".into(),
        outcome2: "Do not.".into(),
    };
    let supports = [Support::Outcome1, Support::Outcome2, Support::Neutral];
    let factors = (0..factors)
        .map(|j| Factor {
            factor_id: format!("F{j}"),
            name: format!("factor {j}"),
            values: (0..card)
                .map(|v| FactorValue {
                    value_id: format!("F{j}v{v}"),
                    text: format!("value {v} of factor {j}"),
                    support: supports[(j + v) % 3],
                })
                .collect(),
        })
        .collect();
    FactorSpace::new(scenario, factors).expect("synthetic space is valid")
}
