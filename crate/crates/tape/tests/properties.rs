use ndarray::Array2;
use normmark_tape::{log_sum_exp, ParamStore, Tape};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-50.0f64..50.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_the_limit(
        a in matrix(3, 4),
        b in matrix(1, 5),
        limit in 1e-3f64..100.0,
    ) {
        let mut store = ParamStore::new();
        let pa = store.insert("a", a);
        let pb = store.insert("b", b);
        let mut tape = Tape::new(&store);
        let va = tape.param(pa);
        let vb = tape.param(pb);
        let sa = tape.mul(va, va);
        let sb = tape.mul(vb, vb);
        let (sa, sb) = (tape.sum(sa), tape.sum(sb));
        let loss = tape.add(sa, sb);
        let mut grads = tape.backward(loss);
        let before = grads.global_norm();
        let reported = grads.clip_global_norm(limit);
        prop_assert!((reported - before).abs() <= 1e-9 * before.max(1.0));
        prop_assert!(grads.global_norm() <= limit + 1e-6);
        if before <= limit {
            prop_assert!((grads.global_norm() - before).abs() <= 1e-9 * before.max(1.0));
        }
    }

    #[test]
    fn softmax_rows_lie_on_the_simplex(x in matrix(4, 6)) {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let v = tape.constant(x);
        let s = tape.softmax(v);
        for row in tape.value(s).rows() {
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_matches_shifted_sum(v in prop::collection::vec(-700.0f64..700.0, 1..20)) {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let direct = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(v.iter().copied()) - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        prop_assert!(log_sum_exp(v.iter().copied()) >= m);
    }
}
