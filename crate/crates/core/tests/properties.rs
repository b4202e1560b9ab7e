mod common;

use common::brute_two_sigma;
use cvsqa_core::assess::{
    assess, fit_two_sigma, metrics_conventional, metrics_predictive, roc_auc, youden_max, ConfusionCounts, JFormula,
};
use cvsqa_core::model::kl_term;
use cvsqa_core::preprocess::{embed_cycle, reverse, reverse_steps};
use cvsqa_core::signal::{apply_norm, fit_norm, invert_norm, parse_trace, save_trace, SignalTrace};
use proptest::prelude::*;

fn trace_strategy() -> impl Strategy<Value = SignalTrace> {
    (2usize..60, prop::sample::select(vec![50.0, 100.0, 125.0, 250.0, 360.0]), any::<bool>()).prop_flat_map(
        |(n, fs, labeled)| {
            (
                prop::collection::vec(-1e3f64..1e3, n),
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(0u8..2, n),
            )
                .prop_map(move |(cvs, ecg, labels)| {
                    SignalTrace::new("p", fs, 0.0, cvs, ecg, labeled.then_some(labels)).unwrap()
                })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_csv_round_trip(trace in trace_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        save_trace(&trace, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back = parse_trace(&text, "p".into(), &path).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn normalization_inverts(trace in trace_strategy()) {
        let stats = fit_norm(std::slice::from_ref(&trace)).unwrap();
        let back = invert_norm(&apply_norm(&trace, &stats), &stats);
        for (a, b) in back.cvs.iter().zip(&trace.cvs) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn reverse_is_involution(v in prop::collection::vec(-10.0f64..10.0, 0..40), dim in 1usize..4) {
        prop_assert_eq!(reverse(&reverse(&v)), v.clone());
        let k = v.len() / dim * dim;
        prop_assert_eq!(reverse_steps(&reverse_steps(&v[..k], dim), dim), v[..k].to_vec());
    }

    #[test]
    fn embedding_keeps_endpoints_and_range(v in prop::collection::vec(-10.0f64..10.0, 2..300), dim in 2usize..200) {
        let e = embed_cycle(&v, dim).unwrap();
        prop_assert_eq!(e.len(), dim);
        prop_assert_eq!(e[0], v[0]);
        prop_assert_eq!(e[dim - 1], v[v.len() - 1]);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(e.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
    }

    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-20.0f64..20.0, 1..16), seed in prop::collection::vec(-20.0f64..10.0, 16)) {
        let lv = &seed[..mu.len()];
        prop_assert!(kl_term(&mu, lv) >= 0.0);
    }

    #[test]
    fn two_sigma_is_minimal(values in prop::collection::vec(0u16..50, 1..300)) {
        let v: Vec<f64> = values.iter().map(|&x| f64::from(x) * 0.25).collect();
        let tau = fit_two_sigma(&v).unwrap();
        let n = v.len() as f64;
        let cov = |t: f64| v.iter().filter(|&&a| a <= t).count() as f64 / n;
        prop_assert!(cov(tau) >= 0.9545);
        for &c in &v {
            if c < tau {
                prop_assert!(cov(c) < 0.9545);
            }
        }
        prop_assert_eq!(tau, brute_two_sigma(&v));
    }

    #[test]
    fn auc_and_youden_invariant_under_monotone_maps(
        raw in prop::collection::vec((0u8..40, 0u8..2), 2..40),
    ) {
        let mut scores: Vec<f64> = raw.iter().map(|&(s, _)| f64::from(s) * 0.1).collect();
        let mut labels: Vec<u8> = raw.iter().map(|&(_, l)| l).collect();
        scores.push(0.05);
        labels.push(1);
        scores.push(3.95);
        labels.push(0);
        let mapped: Vec<f64> = scores.iter().map(|&a| (a * 3.0).exp() + a).collect();
        let a = roc_auc(&scores, &labels).unwrap().auc;
        let b = roc_auc(&mapped, &labels).unwrap().auc;
        prop_assert!((a - b).abs() <= 1e-12);
        let ya = youden_max(&scores, &labels, JFormula::Conventional).unwrap();
        let yb = youden_max(&mapped, &labels, JFormula::Conventional).unwrap();
        prop_assert!((ya.j - yb.j).abs() <= 1e-12);
        prop_assert_eq!((ya.tau * 3.0).exp() + ya.tau, yb.tau);
    }

    #[test]
    fn assess_is_monotone_in_tau(a in 0.0f64..10.0, t1 in -1.0f64..10.0, dt in 0.0f64..5.0) {
        prop_assert!(assess(a, t1) <= assess(a, t1 + dt));
    }

    #[test]
    fn metric_families_agree_without_errors(tp in 0u64..1000, tn in 0u64..1000) {
        let c = ConfusionCounts { tp, tn, fp: 0, fn_: 0 };
        let p = metrics_predictive(&c);
        let m = metrics_conventional(&c);
        prop_assert_eq!(p.tpr, m.sensitivity);
        prop_assert_eq!(p.tnr, m.specificity);
    }
}
