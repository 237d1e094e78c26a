use graph_diffusion::clock::{allocate, inverse_steps, solve_steps, solve_time_equations};
use graph_diffusion::edge::LocalTimeLedger;
use graph_diffusion::graph::EdgeId;
use graph_diffusion::Error;
use proptest::prelude::*;

const DT: f64 = 1e-3;

/// Nondecreasing ledger with random nonnegative increments, some zero.
fn ledger(steps: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..0.02], steps).prop_map(|inc| {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(inc.into_iter().map(|d| {
                acc += d;
                acc
            }))
            .collect()
    })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..5).prop_flat_map(|n| (prop::collection::vec(ledger(400), n), weights(n)))
}

fn ledgers(values: &[Vec<f64>]) -> Vec<LocalTimeLedger> {
    values.iter().enumerate().map(|(i, v)| LocalTimeLedger::from_values(EdgeId(i as u32 + 1), DT, v.clone())).collect()
}

proptest! {
    #[test]
    fn allocation_conserves_the_budget((values, w) in case(), q in 0.001f64..0.05, t in 0.05f64..0.3) {
        let ls = ledgers(&values);
        let tc = allocate(&ls, &w, t, q).unwrap();
        prop_assert!(tc.check().is_empty(), "{:?}", tc.check());
        for k in 0..tc.len() {
            prop_assert_eq!(tc.steps_at(k).iter().sum::<usize>(), k);
        }
    }

    #[test]
    fn allocated_ratios_stay_within_a_quantum((values, w) in case(), q in 0.005f64..0.05) {
        let ls = ledgers(&values);
        let tc = allocate(&ls, &w, 0.3, q).unwrap();
        let max_inc = values.iter().zip(&w).flat_map(|(v, a)| v.windows(2).map(move |p| (p[1] - p[0]) / a)).fold(0.0, f64::max);
        let last = tc.len() - 1;
        let s = tc.steps_at(last);
        let ratios: Vec<f64> = (0..ls.len()).map(|i| values[i][s[i]] / w[i]).collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        // every clock that has not yet caught up still has budget: the
        // laggard's ratio is at most one quantum plus one increment behind
        let target = ratios.iter().copied().fold(0.0, f64::max);
        let stuck = (0..ls.len()).any(|i| ratios[i] == lo && values[i][s[i]..].iter().all(|&x| x == values[i][s[i]]));
        prop_assume!(!stuck);
        prop_assert!(target - lo <= q + max_inc + 1e-12, "{ratios:?}");
    }

    #[test]
    fn inverse_is_a_generalized_inverse(v in ledger(300), a in 0.1f64..1.0, level in 0.0f64..3.0) {
        match inverse_steps(&v, a, level) {
            Some(k) => {
                prop_assert!(v[k] / a >= level);
                prop_assert!(k == 0 || v[k - 1] / a < level);
            }
            None => prop_assert!(v.iter().all(|x| x / a < level)),
        }
    }

    #[test]
    fn direct_solution_spends_the_budget((values, w) in case(), frac in 0.05f64..0.6) {
        let refs: Vec<&Vec<f64>> = values.iter().collect();
        let edges: Vec<EdgeId> = (1..=values.len() as u32).map(EdgeId).collect();
        let total = (frac * 400.0) as usize;
        match solve_steps(&refs, &w, total, &edges, DT) {
            Ok(sol) => {
                prop_assert_eq!(sol.steps.iter().sum::<usize>(), total);
                // all ratios within one increment of the common level
                for (i, &s) in sol.steps.iter().enumerate() {
                    let r = values[i][s] / w[i];
                    let inc = values[i].windows(2).map(|p| (p[1] - p[0]) / w[i]).fold(0.0, f64::max);
                    prop_assert!((r - sol.level).abs() <= inc + 1e-9, "{r} vs {}", sol.level);
                }
            }
            Err(Error::Ambiguous { edges, .. }) => prop_assert!(edges.len() >= 2),
            Err(Error::Infeasible { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

#[test]
fn linear_ledgers_split_time_by_weight() {
    // L_i(s) = s: equal ratios force s_i ∝ α_i
    let ls: Vec<LocalTimeLedger> =
        (1..=3).map(|i| LocalTimeLedger::from_values(EdgeId(i), DT, (0..=1000).map(|k| k as f64 * DT).collect())).collect();
    let w = [0.5, 0.3, 0.2];
    let sol = solve_time_equations(&ls, &w, 0.5, 1e-2).unwrap();
    for (s, a) in sol.s.iter().zip(w) {
        assert!((s - 0.5 * a).abs() <= 2.0 * DT, "{:?}", sol.s);
    }
    assert!(sol.within_tol);
}
