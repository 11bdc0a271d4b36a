#![allow(dead_code)]

pub mod reference_variances;

use std::path::PathBuf;

use probcause::model::{
    load_counts_path, to_probabilities, ExperimentalPair, ExperimentalQuantities, Smoothing, StratifiedJoint, Stratum,
    StratumExperiment, StratumKey, StratumTable,
};
use proptest::prelude::*;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn receptor_survival() -> StratifiedJoint {
    to_probabilities(
        &load_counts_path(&fixture("receptor_survival.csv")).unwrap(),
        Smoothing::None,
    )
    .unwrap()
}

/// One stratum drawn from response-type mixtures. `exposed` and `unexposed`
/// are the type distributions (always, iff exposed, iff unexposed, never)
/// among units observed at x and at x', so the generated data are always
/// consistent with some structural model.
#[derive(Debug, Clone)]
pub struct StratumSpec {
    pub p_x: f64,
    pub exposed: [f64; 4],
    pub unexposed: [f64; 4],
    pub weight: f64,
}

impl StratumSpec {
    pub fn table(&self, weight: f64) -> StratumTable {
        StratumTable::from_conditionals(
            self.p_x,
            self.exposed[0] + self.exposed[1],
            self.unexposed[0] + self.unexposed[2],
            weight,
        )
        .unwrap()
    }

    pub fn pair(&self) -> ExperimentalPair {
        let (px, pxp) = (self.p_x, 1.0 - self.p_x);
        let (a, b) = (&self.exposed, &self.unexposed);
        ExperimentalPair::new(
            (px * (a[0] + a[1]) + pxp * (b[0] + b[1])).clamp(0.0, 1.0),
            (px * (a[0] + a[2]) + pxp * (b[0] + b[2])).clamp(0.0, 1.0),
        )
        .unwrap()
    }
}

fn normalise(mut v: [f64; 4]) -> [f64; 4] {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= total);
    v
}

/// Type distribution for one arm; with `monotone` the iff-unexposed type is absent.
pub fn arm(monotone: bool) -> impl Strategy<Value = [f64; 4]> {
    [0.001f64..1.0, 0.001f64..1.0, 0.001f64..1.0, 0.001f64..1.0].prop_map(move |mut v| {
        if monotone {
            v[2] = 0.0;
        }
        normalise(v)
    })
}

pub fn stratum_spec(monotone: bool) -> impl Strategy<Value = StratumSpec> {
    (0.05f64..0.95, arm(monotone), arm(monotone), 0.05f64..1.0).prop_map(|(p_x, exposed, unexposed, weight)| {
        StratumSpec {
            p_x,
            exposed,
            unexposed,
            weight,
        }
    })
}

pub fn specs(max_strata: usize, monotone: bool) -> impl Strategy<Value = Vec<StratumSpec>> {
    prop::collection::vec(stratum_spec(monotone), 1..=max_strata)
}

pub fn key(i: usize) -> StratumKey {
    StratumKey::new([("g", format!("{i:02}"))]).unwrap()
}

/// Joint over a single covariate `g` and the matching measured experimental quantities.
pub fn build(specs: &[StratumSpec]) -> (StratifiedJoint, ExperimentalQuantities) {
    let total: f64 = specs.iter().map(|s| s.weight).sum();
    let strata = specs
        .iter()
        .enumerate()
        .map(|(i, s)| Stratum {
            key: key(i),
            table: s.table(s.weight / total),
        })
        .collect();
    let joint = StratifiedJoint::new(vec!["g".into()], strata, Some(1000)).unwrap();
    let exp = ExperimentalQuantities::measured(
        &joint,
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| StratumExperiment {
                key: key(i),
                pair: s.pair(),
            })
            .collect(),
    )
    .unwrap();
    (joint, exp)
}

/// A joint over `{S, T}` with the structure P(t) P(s|t) P(x|t) P(y|x,s), so
/// that both `Y ⊥ T | X,S` and `X ⊥ S | T` hold exactly.
#[derive(Debug, Clone)]
pub struct FactorisedSpec {
    pub p_t: Vec<f64>,
    /// `p_s_given_t[t][s]`
    pub p_s_given_t: Vec<Vec<f64>>,
    pub p_x_given_t: Vec<f64>,
    /// `p_y_given_xs[s] = (P(y|x,s), P(y|x',s))`
    pub p_y_given_xs: Vec<(f64, f64)>,
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
        let total: f64 = v.iter().sum();
        v.into_iter().map(|p| p / total).collect()
    })
}

pub fn factorised(levels: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = FactorisedSpec> {
    (levels.clone(), levels).prop_flat_map(|(ns, nt)| {
        (
            simplex(nt),
            prop::collection::vec(simplex(ns), nt),
            prop::collection::vec(0.05f64..0.95, nt),
            prop::collection::vec((0.05f64..0.95, 0.05f64..0.95), ns),
        )
            .prop_map(|(p_t, p_s_given_t, p_x_given_t, p_y_given_xs)| FactorisedSpec {
                p_t,
                p_s_given_t,
                p_x_given_t,
                p_y_given_xs,
            })
    })
}

impl FactorisedSpec {
    pub fn joint(&self, n: u64) -> StratifiedJoint {
        let mut strata = Vec::new();
        for (t, &pt) in self.p_t.iter().enumerate() {
            for (s, &pst) in self.p_s_given_t[t].iter().enumerate() {
                let (py_x, py_xp) = self.p_y_given_xs[s];
                strata.push(Stratum {
                    key: StratumKey::new([("S", format!("s{s}")), ("T", format!("t{t}"))]).unwrap(),
                    table: StratumTable::from_conditionals(self.p_x_given_t[t], py_x, py_xp, pt * pst).unwrap(),
                });
            }
        }
        StratifiedJoint::new(vec!["S".into(), "T".into()], strata, Some(n)).unwrap()
    }
}
