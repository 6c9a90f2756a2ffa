use nalgebra::{DMatrix, DVector};
use ndarray::Array1;

use super::TabularMdp;
use crate::error::{Error, Result};

pub(crate) fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    a.lu().solve(&b).ok_or_else(|| Error::Singular("LU factorisation failed".into()))
}

/// `(I − γ P_π) v = r_π` for a deterministic policy.
fn evaluate_deterministic(mdp: &TabularMdp, actions: &[usize]) -> Result<Array1<f64>> {
    let n = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (s, &act) in actions.iter().enumerate() {
        b[s] = mdp.reward[[s, act]];
        for sp in 0..n {
            a[(s, sp)] -= mdp.gamma * mdp.transition[[s, act, sp]];
        }
    }
    Ok(Array1::from(solve(a, b)?.as_slice().to_vec()))
}

/// Optimal state values by policy iteration (exact up to the linear solves).
pub(crate) fn optimal_values(mdp: &TabularMdp) -> Result<Array1<f64>> {
    let mut actions = vec![0usize; mdp.n_states];
    for _ in 0..1000 {
        let v = evaluate_deterministic(mdp, &actions)?;
        let q = &mdp.reward + &(mdp.expected_next(&v) * mdp.gamma);
        let mut changed = false;
        for (s, act) in actions.iter_mut().enumerate() {
            let current = q[[s, *act]];
            for a in 0..mdp.n_actions {
                // strict improvement margin keeps PI from cycling on ties
                if q[[s, a]] > current + 1e-12 && q[[s, a]] > q[[s, *act]] {
                    *act = a;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(v);
        }
    }
    Err(Error::Singular("policy iteration did not stabilise".into()))
}

/// Solves the symmetric positive semidefinite Newton system `(H + δI) p = rhs`
/// starting from `δ = max(delta0, 1e-12·max diag)` and increasing `δ` until the
/// Cholesky factorisation succeeds.
pub(crate) fn solve_regularised(h: &DMatrix<f64>, rhs: &DVector<f64>, delta0: f64) -> Option<DVector<f64>> {
    let n = h.nrows();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut delta = (1e-12 * scale).max(delta0);
    for _ in 0..40 {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += delta;
        }
        if let Some(ch) = m.cholesky() {
            let p = ch.solve(rhs);
            if p.iter().all(|x| x.is_finite()) {
                return Some(p);
            }
        }
        delta *= 10.0;
    }
    None
}
