//! Central-finite-difference gradient checking.
//!
//! The checker is deliberately independent of the tape: it only perturbs
//! parameter values and re-evaluates a caller-supplied forward closure,
//! so it cannot inherit a bug from the backward pass it is verifying.
//!
//! Models with discrete choices (top-k selection, histogram binning) are
//! piecewise differentiable. The forward closure therefore reports a
//! `signature` hash of its discrete decisions; coordinates whose ±h
//! evaluations land on different pieces are skipped rather than compared,
//! since the two-sided difference quotient is meaningless across a
//! boundary.

use crate::real::Real;
use crate::store::ParamStore;

/// Loss value plus a hash of every discrete decision taken during the
/// forward pass (0 when the computation has none).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardEval {
    pub loss: f64,
    pub signature: u64,
}

impl ForwardEval {
    pub fn smooth(loss: f64) -> Self {
        ForwardEval { loss, signature: 0 }
    }
}

/// Outcome of a finite-difference sweep over every trainable coordinate.
#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat coordinate of the worst error.
    pub worst: Option<(String, usize)>,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

/// Relative error with an absolute floor: tiny gradients are compared
/// on an absolute scale instead of blowing up the ratio.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(floor))
}

/// FNV-1a over a stream of integers; used by forward closures to build
/// discrete-decision signatures.
#[derive(Clone, Copy, Debug)]
pub struct SignatureHasher(u64);

impl Default for SignatureHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl SignatureHasher {
    pub fn new() -> Self {
        SignatureHasher(0xcbf2_9ce4_8422_2325)
    }

    pub fn push(&mut self, v: u64) {
        let mut h = self.0;
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.0 = h;
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Compare the analytic gradients already stored in `store` against
/// central finite differences of `forward`, sweeping every coordinate of
/// every trainable parameter.
///
/// The caller runs forward + backward once beforehand so `store` holds
/// the analytic gradients; `forward` must be a pure function of the
/// parameter values.
pub fn check_store_gradients<F: Real>(
    store: &mut ParamStore<F>,
    step: f64,
    rel_floor: f64,
    mut forward: impl FnMut(&ParamStore<F>) -> ForwardEval,
) -> FdReport {
    let base = forward(store);
    let mut report = FdReport::default();
    for idx in 0..store.len() {
        let id = crate::store::ParamId(idx);
        if !store.entry(id).trainable {
            continue;
        }
        let n = store.value(id).numel();
        let name = store.entry(id).name.clone();
        for coord in 0..n {
            let orig = store.value(id).data()[coord];
            let h = F::from_f64(step);

            store.entry_mut(id).value.data_mut()[coord] = orig + h;
            let plus = forward(store);
            store.entry_mut(id).value.data_mut()[coord] = orig - h;
            let minus = forward(store);
            store.entry_mut(id).value.data_mut()[coord] = orig;

            if plus.signature != base.signature || minus.signature != base.signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * step);
            let analytic = store.grad(id).data()[coord].to_f64();
            let err = rel_err(analytic, numeric, rel_floor);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), coord));
            }
        }
    }
    report
}
