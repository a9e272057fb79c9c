//! Seeded generator for a credit-scoring table shaped like the classic German
//! credit data: seven numeric attributes, thirteen categorical/binary ones and
//! a roughly 70/30 good/bad label split. The real data is not redistributable
//! here; this stand-in keeps the feature mix and scale so desk-scale
//! experiments exercise the same code paths.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{ColumnKind, ColumnSpec, Schema};
use crate::numeric::sigmoid;

struct Categorical {
    name: &'static str,
    levels: &'static [&'static str],
    probs: &'static [f64],
    effect: &'static [f64],
    immutable: bool,
}

const CATEGORICALS: &[Categorical] = &[
    Categorical {
        name: "checking_status",
        levels: &["lt0", "0to200", "ge200", "none"],
        probs: &[0.27, 0.27, 0.06, 0.40],
        effect: &[-0.9, -0.4, 0.3, 0.9],
        immutable: false,
    },
    Categorical {
        name: "credit_history",
        levels: &["critical", "delayed", "paid_duly", "all_paid", "none_taken"],
        probs: &[0.29, 0.09, 0.53, 0.05, 0.04],
        effect: &[0.6, 0.0, 0.0, -0.8, -0.9],
        immutable: false,
    },
    Categorical {
        name: "purpose",
        levels: &["car_new", "car_used", "furniture", "radio_tv", "education", "business"],
        probs: &[0.25, 0.11, 0.19, 0.29, 0.06, 0.10],
        effect: &[-0.3, 0.6, 0.0, 0.3, -0.4, -0.1],
        immutable: false,
    },
    Categorical {
        name: "savings",
        levels: &["lt100", "100to500", "500to1000", "ge1000", "unknown"],
        probs: &[0.60, 0.10, 0.06, 0.05, 0.19],
        effect: &[-0.3, -0.1, 0.3, 0.6, 0.4],
        immutable: false,
    },
    Categorical {
        name: "employment",
        levels: &["unemployed", "lt1", "1to4", "4to7", "ge7"],
        probs: &[0.06, 0.17, 0.34, 0.17, 0.26],
        effect: &[-0.1, -0.3, 0.0, 0.3, 0.2],
        immutable: false,
    },
    Categorical {
        name: "personal_status",
        levels: &["male_div", "female_div_mar", "male_single", "male_mar_wid"],
        probs: &[0.05, 0.31, 0.55, 0.09],
        effect: &[-0.2, -0.1, 0.2, 0.1],
        immutable: true,
    },
    Categorical {
        name: "other_parties",
        levels: &["none", "co_applicant", "guarantor"],
        probs: &[0.91, 0.04, 0.05],
        effect: &[0.0, -0.4, 0.5],
        immutable: false,
    },
    Categorical {
        name: "property",
        levels: &["real_estate", "savings_ins", "car", "unknown"],
        probs: &[0.28, 0.23, 0.33, 0.16],
        effect: &[0.3, 0.0, 0.0, -0.4],
        immutable: false,
    },
    Categorical {
        name: "other_payment_plans",
        levels: &["bank", "stores", "none"],
        probs: &[0.14, 0.05, 0.81],
        effect: &[-0.4, -0.3, 0.2],
        immutable: false,
    },
    Categorical {
        name: "housing",
        levels: &["rent", "own", "free"],
        probs: &[0.18, 0.71, 0.11],
        effect: &[-0.3, 0.2, -0.2],
        immutable: false,
    },
    Categorical {
        name: "job",
        levels: &["unskilled_nonres", "unskilled_res", "skilled", "highly_skilled"],
        probs: &[0.02, 0.20, 0.63, 0.15],
        effect: &[0.0, 0.0, 0.0, 0.0],
        immutable: false,
    },
];

const NUMERIC: &[&str] = &[
    "duration",
    "credit_amount",
    "installment_rate",
    "residence_since",
    "age",
    "existing_credits",
    "num_dependents",
];

const BINARY: &[&str] = &["own_telephone", "foreign_worker"];

const INTERCEPT: f64 = 1.05;

fn discrete(rng: &mut ChaCha8Rng, levels: &[f64], probs: &[f64]) -> f64 {
    let w = WeightedIndex::new(probs).expect("static weights");
    levels[w.sample(rng)]
}

/// Schema describing the generated table.
pub fn german_credit_schema() -> Schema {
    let mut columns = Vec::new();
    let spec = |name: &str, kind: ColumnKind, immutable: bool| ColumnSpec {
        name: name.to_string(),
        kind,
        immutable,
        lower_bound: None,
        upper_bound: None,
        change_cost: None,
        fill: None,
    };
    for &name in NUMERIC {
        columns.push(spec(name, ColumnKind::Continuous, name == "age"));
    }
    for &name in BINARY {
        columns.push(spec(name, ColumnKind::Binary, name == "foreign_worker"));
    }
    for c in CATEGORICALS {
        columns.push(spec(
            c.name,
            ColumnKind::Categorical {
                categories: Some(c.levels.iter().map(|s| s.to_string()).collect()),
            },
            c.immutable,
        ));
    }
    Schema {
        version: super::SCHEMA_VERSION,
        label: "good".into(),
        positive_label: None,
        columns,
    }
}

/// Generate `n` rows as CSV text (header included) under `seed`.
pub fn german_credit_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = String::new();
    let header: Vec<&str> = NUMERIC
        .iter()
        .chain(BINARY)
        .copied()
        .chain(CATEGORICALS.iter().map(|c| c.name))
        .chain(std::iter::once("good"))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');

    for _ in 0..n {
        let mut score = INTERCEPT;
        let duration = (18.0f64.ln() + 0.55 * noise.sample(&mut rng))
            .exp()
            .round()
            .clamp(4.0, 72.0);
        let amount = (5.6 + 0.75 * duration.ln() + 0.55 * noise.sample(&mut rng))
            .exp()
            .round()
            .clamp(250.0, 18500.0);
        let installment = discrete(&mut rng, &[1.0, 2.0, 3.0, 4.0], &[0.14, 0.23, 0.16, 0.47]);
        let residence = discrete(&mut rng, &[1.0, 2.0, 3.0, 4.0], &[0.13, 0.31, 0.15, 0.41]);
        let age = (19.0 + (15.0f64.ln() + 0.6 * noise.sample(&mut rng)).exp())
            .round()
            .min(75.0);
        let credits = discrete(&mut rng, &[1.0, 2.0, 3.0, 4.0], &[0.63, 0.33, 0.03, 0.01]);
        let dependents = discrete(&mut rng, &[1.0, 2.0], &[0.85, 0.15]);
        score += -0.035 * (duration - 20.0) - 0.25 * (amount.ln() - 7.8) - 0.2 * (installment - 3.0)
            + 0.015 * (age - 35.0)
            - 0.1 * (credits - 1.4);

        let telephone = f64::from(u8::from(rng.random_bool(0.40)));
        let foreign = f64::from(u8::from(rng.random_bool(0.96)));
        score += 0.1 * telephone - 0.5 * foreign;

        let mut cats = Vec::with_capacity(CATEGORICALS.len());
        for c in CATEGORICALS {
            let k = WeightedIndex::new(c.probs).expect("static weights").sample(&mut rng);
            score += c.effect[k];
            cats.push(c.levels[k]);
        }
        let good = u8::from(rng.random::<f64>() < sigmoid(1.4 * score));

        let _ = write!(
            out,
            "{duration},{amount},{installment},{residence},{age},{credits},{dependents},{telephone},{foreign}"
        );
        for c in cats {
            out.push(',');
            out.push_str(c);
        }
        let _ = writeln!(out, ",{good}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_csv;

    #[test]
    fn generated_table_loads_and_is_imbalanced() {
        let text = german_credit_csv(1000, 7);
        let (ds, report) = read_csv(text.as_bytes(), &german_credit_schema()).unwrap();
        assert_eq!(report.rows_dropped, 0);
        assert_eq!(ds.n(), 1000);
        let [bad, good] = ds.class_counts();
        let frac = good as f64 / 1000.0;
        assert!((0.6..0.8).contains(&frac), "good fraction {frac} ({bad} bad)");
    }

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(german_credit_csv(50, 3), german_credit_csv(50, 3));
    }
}
