use paac_core::bench::{self, EvalMatrix};
use paac_core::paac::{select_branch, Branch, PhaseSchedule, ScheduleKind};
use paac_core::replay::{ReplayBuffer, Transition};
use proptest::prelude::*;
use proptest::sample::SizeRange;

fn matrix() -> impl Strategy<Value = EvalMatrix> {
    (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(t, e, s)| {
        (
            prop::collection::vec(0.0f64..100.0, SizeRange::from(t * e * s)),
            prop::collection::vec(any::<bool>(), SizeRange::from(t)),
        )
            .prop_map(move |(values, mut flags)| {
                flags[0] = true;
                EvalMatrix::new(t, e, s, values, flags).unwrap()
            })
    })
}

fn permute(m: &EvalMatrix, pt: &[usize], pe: &[usize], ps: &[usize]) -> EvalMatrix {
    let values = pt
        .iter()
        .flat_map(|&t| pe.iter().flat_map(move |&e| ps.iter().map(move |&s| m.get(t, e, s))))
        .collect();
    let flags = pt.iter().map(|&t| m.success_flags[t]).collect();
    EvalMatrix::new(m.n_trials, m.n_evals, m.n_env_seeds, values, flags).unwrap()
}

fn shuffled(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn metrics(m: &EvalMatrix, threshold: f64) -> [f64; 4] {
    [
        bench::metric_total_cost(m).unwrap(),
        bench::metric_learning_variance(m).unwrap(),
        bench::metric_robustness(m).unwrap(),
        bench::metric_success(m, Some(threshold)).unwrap(),
    ]
}

fn schedule_kind() -> impl Strategy<Value = ScheduleKind> {
    prop_oneof![Just(ScheduleKind::Linear), Just(ScheduleKind::Quadratic), Just(ScheduleKind::HardSwitch)]
}

proptest! {
    #[test]
    fn metrics_ignore_ordering(
        (m, pt, pe, ps) in matrix().prop_flat_map(|m| {
            let (t, e, s) = (m.n_trials, m.n_evals, m.n_env_seeds);
            (Just(m), shuffled(t), shuffled(e), shuffled(s))
        }),
        threshold in 0.0f64..100.0,
    ) {
        let a = metrics(&m, threshold);
        let b = metrics(&permute(&m, &pt, &pe, &ps), threshold);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn metric_ranges(m in matrix(), threshold in 0.0f64..100.0) {
        let [total, lv, robust, success] = metrics(&m, threshold);
        prop_assert!((0.0..=100.0).contains(&total));
        prop_assert!((0.0..=50.0).contains(&lv));
        prop_assert!((0.0..=50.0).contains(&robust));
        prop_assert!((0.0..=1.0).contains(&success));
        prop_assert_eq!(bench::metric_success(&m, Some(f64::INFINITY)).unwrap(), 1.0);
    }

    #[test]
    fn shifting_costs_moves_total_only(m in matrix(), shift in 0.0f64..10.0) {
        let mut shifted = m.clone();
        shifted.values.iter_mut().for_each(|v| *v += shift);
        let [t0, lv0, r0, _] = metrics(&m, 0.0);
        let [t1, lv1, r1, _] = metrics(&shifted, 0.0);
        prop_assert!((t1 - t0 - shift).abs() < 1e-9);
        prop_assert!((lv1 - lv0).abs() < 1e-9);
        prop_assert!((r1 - r0).abs() < 1e-9);
    }

    #[test]
    fn auc_of_constant_curve(c in 0.0f64..10.0, n in 0.1f64..10.0, steps in prop::collection::btree_set(0u64..100_000, 2..20)) {
        let curve: Vec<(u64, f64)> = steps.into_iter().map(|s| (s, c)).collect();
        let auc = bench::metric_auc(&curve, n).unwrap();
        prop_assert!((auc - c / n).abs() < 1e-9);
    }

    #[test]
    fn auc_is_monotone_in_cost(
        pts in prop::collection::btree_map(0u64..100_000, 0.0f64..10.0, 2..20),
        bump in 0.0f64..5.0,
        at in any::<prop::sample::Index>(),
    ) {
        let curve: Vec<(u64, f64)> = pts.into_iter().collect();
        let mut higher = curve.clone();
        higher[at.index(curve.len())].1 += bump;
        prop_assert!(bench::metric_auc(&higher, 1.0).unwrap() >= bench::metric_auc(&curve, 1.0).unwrap());
    }

    #[test]
    fn schedules_are_monotone_probabilities(kind in schedule_kind(), k_total in 1u64..1_000_000, a in any::<u64>(), b in any::<u64>()) {
        let s = PhaseSchedule::new(kind, k_total);
        let (lo, hi) = (a.min(b) % (2 * k_total), a.max(b) % (2 * k_total));
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        prop_assert!(s.value(hi) <= s.value(lo));
        prop_assert!((0.0..=1.0).contains(&s.value(lo)));
        prop_assert_eq!(s.value(0), 1.0);
        prop_assert_eq!(s.value(k_total + a % 1000), 0.0);
    }

    #[test]
    fn branch_follows_threshold(m in 0.0f64..=1.0, omega in 0.0f64..1.0) {
        let expected = if omega <= m { Branch::QValue } else { Branch::TdError };
        prop_assert_eq!(select_branch(m, omega), expected);
    }

    #[test]
    fn replay_keeps_the_newest(capacity in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(capacity).unwrap();
        for i in 0..pushes {
            buf.push(Transition {
                state: vec![i as f64],
                action: vec![0.0],
                cost: i as f64,
                next_state: vec![0.0],
                terminal: false,
            }).unwrap();
        }
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        let kept: Vec<f64> = buf.iter_oldest_first().map(|t| t.cost).collect();
        let want: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(kept, want);
    }
}
