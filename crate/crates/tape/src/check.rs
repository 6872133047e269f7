//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the reverse pass it verifies.

use crate::graph::{Tape, Var};
use crate::params::{ParamId, ParamStore};

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Scalar value of `f` on the given store.
pub fn evaluate<F>(store: &ParamStore, f: &mut F) -> f64
where
    F: FnMut(&mut Tape<'_>) -> Var,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape);
    tape.scalar(out)
}

/// Compares reverse-mode gradients of `f` against central differences with
/// the given `step`, for every scalar of every parameter selected by `filter`.
pub fn check_gradients<F>(
    store: &ParamStore,
    mut f: F,
    step: f64,
    floor: f64,
    filter: impl Fn(ParamId, &str) -> bool,
) -> GradCheckReport
where
    F: FnMut(&mut Tape<'_>) -> Var,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape);
        tape.backward(out)
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if !filter(id, &name) {
            continue;
        }
        let n = store.get(id).len();
        for idx in 0..n {
            let original = store.get(id).as_slice().expect("standard layout")[idx];
            probe.get_mut(id).as_slice_mut().unwrap()[idx] = original + step;
            let plus = evaluate(&probe, &mut f);
            probe.get_mut(id).as_slice_mut().unwrap()[idx] = original - step;
            let minus = evaluate(&probe, &mut f);
            probe.get_mut(id).as_slice_mut().unwrap()[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic
                .get(id)
                .map(|g| g.as_slice().expect("standard layout")[idx])
                .unwrap_or(0.0);
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some(Mismatch {
                        param: name.clone(),
                        index: idx,
                        analytic: a,
                        numeric,
                        rel_error: err,
                    });
                }
            }
        }
    }
    report
}
