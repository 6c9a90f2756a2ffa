use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CorrectionKind, CorrectionSet};
use crate::error::Result;
use crate::mdp::{MleModel, TabularPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedPolicy {
    pub policy: TabularPolicy,
    /// Supported states whose correction vanished on every observed action;
    /// the policy falls back to `π_D` there.
    pub fallback_states: Vec<usize>,
}

/// Closed-form weighted behaviour cloning: `π ∝ w(s,a) d_D(s,a)` for
/// state-action corrections and `π ∝ w(a|s) π_D(a|s)` otherwise. States
/// without data keep `π_D`.
pub fn extract_tabular_policy(corr: &CorrectionSet, model: &MleModel) -> Result<ExtractedPolicy> {
    let w = corr.policy_weights()?;
    let base = match corr.kind {
        CorrectionKind::StateAction => &model.d_d,
        CorrectionKind::PerPolicy | CorrectionKind::State => &model.pi_d.probs,
    };
    let mut probs = Array2::<f64>::zeros((model.n_states, model.n_actions));
    let mut fallback_states = Vec::new();
    for s in 0..model.n_states {
        let mut total = 0.0;
        for a in 0..model.n_actions {
            if model.support_mask[[s, a]] {
                let x = (w[[s, a]] * base[[s, a]]).max(0.0);
                probs[[s, a]] = x;
                total += x;
            }
        }
        if total > 0.0 {
            probs.row_mut(s).mapv_inplace(|x| x / total);
        } else {
            if model.d_d_state[s] > 0.0 {
                fallback_states.push(s);
            }
            probs.row_mut(s).assign(&model.pi_d.probs.row(s));
        }
    }
    Ok(ExtractedPolicy { policy: TabularPolicy { probs }, fallback_states })
}
