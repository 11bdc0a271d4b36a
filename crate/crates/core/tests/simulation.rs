mod common;

use common::reference_variances::{AVAR, SIZES};
use probcause::bounds::Quantity;
use probcause::identify::{pn_estimate, pns_estimate};
use probcause::model::collapse;
use probcause::simulate::{builtin_scenario, replicate_study, Stratifier, Study};

const STRATIFIERS: [Stratifier; 3] = [Stratifier::S, Stratifier::T, Stratifier::ST];
const QUANTITIES: [Quantity; 2] = [Quantity::PN, Quantity::PNS];
const REPS: u64 = 5000;
const SEED: u64 = 20_240_601;
/// Relative slack on empirical orderings between stratifiers.
const ORDERING_SLACK: f64 = 0.05;

fn study(setting: usize, n: u64) -> Study {
    replicate_study(&builtin_scenario(setting).unwrap(), n, REPS, SEED, &STRATIFIERS).unwrap()
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let scenario = builtin_scenario(2).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| replicate_study(&scenario, 500, 300, 11, &STRATIFIERS).unwrap())
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&many).unwrap()
    );
    assert_eq!(one, many);
}

#[test]
fn population_avars_match_the_reference_values() {
    for setting in 1..=4 {
        for (ni, &n) in SIZES.iter().enumerate() {
            let population = builtin_scenario(setting).unwrap().population_joint().unwrap();
            for (qi, q) in QUANTITIES.iter().enumerate() {
                for (si, st) in STRATIFIERS.iter().enumerate() {
                    let joint = collapse(&population, st.covariates()).unwrap();
                    let got = match q {
                        Quantity::PN => pn_estimate(&joint, n).avar,
                        _ => pns_estimate(&joint, n).avar,
                    };
                    let want = AVAR[qi][setting - 1][ni][si];
                    assert!(
                        (got - want).abs() <= 1e-4 + 1e-12,
                        "setting {setting} N={n} {q} {st}: {got} vs {want}"
                    );
                }
            }
        }
    }
}

#[test]
fn monte_carlo_variances() {
    let mut failures = Vec::new();
    for setting in 1..=4 {
        let studies: Vec<Study> = SIZES.iter().map(|&n| study(setting, n)).collect();
        for q in &QUANTITIES {
            for st in &STRATIFIERS {
                for s in &studies {
                    let r = s.result(*q, *st).unwrap();
                    if !(0.9..=1.1).contains(&r.ratio()) {
                        failures.push(format!("setting {setting} N={} {q} {st}: ratio {:.3}", s.n, r.ratio()));
                    }
                }
                let small = studies[0].result(*q, *st).unwrap().empirical_var;
                let large = studies[3].result(*q, *st).unwrap().empirical_var;
                let shrink = large / small;
                if !(0.20..=0.30).contains(&shrink) {
                    failures.push(format!("setting {setting} {q} {st}: var(2000)/var(500) = {shrink:.3}"));
                }
            }
            for s in &studies {
                let get = |st| s.result(*q, st).unwrap();
                let (vs, vt, vst) = (get(Stratifier::S), get(Stratifier::T), get(Stratifier::ST));
                if !(vs.population_avar <= vst.population_avar + 1e-12
                    && vst.population_avar <= vt.population_avar + 1e-12)
                {
                    failures.push(format!("setting {setting} N={} {q}: population a.var ordering", s.n));
                }
                let ordered = vs.empirical_var <= vst.empirical_var * (1.0 + ORDERING_SLACK)
                    && vst.empirical_var <= vt.empirical_var * (1.0 + ORDERING_SLACK);
                if !ordered {
                    failures.push(format!(
                        "setting {setting} N={} {q}: empirical {:.5} / {:.5} / {:.5}",
                        s.n, vs.empirical_var, vst.empirical_var, vt.empirical_var
                    ));
                }
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
