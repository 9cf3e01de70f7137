//! Closed-form min-norm augmentation `π*` and the activation pattern.
//!
//! With the cost weight `R_π = H_uᵀH_u` the multiplier equations decouple
//! and the optimum of
//!
//! ```text
//!   min πᵀ R_π π   s.t.   [−I; I] H_u π + ΔH(x, u_bl) ≤ 0
//! ```
//!
//! is `π* = H_u⁻¹ (max(0, ΔH₁) − max(0, ΔH₂))`, component-wise.

use nalgebra::DVector;

use crate::cbf::{CbfDesign, ConstraintBox};

/// Constraint increments `ΔH₁ = −H_x x − H_u u_bl + α_π y_min` and
/// `ΔH₂ = H_x x + H_u u_bl − α_π y_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintIncrements {
    pub dh1: DVector<f64>,
    pub dh2: DVector<f64>,
}

impl ConstraintIncrements {
    /// Channels where both increments are strictly positive, i.e. the
    /// modified box is empty for that channel.
    pub fn infeasible_channels(&self) -> Vec<usize> {
        (0..self.dh1.len())
            .filter(|&i| self.dh1[i] > 0.0 && self.dh2[i] > 0.0)
            .collect()
    }
}

/// Bound selected by the switching logic for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectedBound {
    Min(f64),
    Max(f64),
    None,
}

/// Binary activation diagonal `δ` together with the bound each active channel tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationState {
    pub delta: Vec<bool>,
    pub selected_bound: Vec<SelectedBound>,
}

impl ActivationState {
    pub fn any_active(&self) -> bool {
        self.delta.iter().any(|&d| d)
    }

    /// Pattern as a bitstring, channel 0 first.
    pub fn label(&self) -> String {
        self.delta.iter().map(|&d| if d { '1' } else { '0' }).collect()
    }
}

/// Result of evaluating `π*`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEval {
    pub pi: DVector<f64>,
    /// Channels with an empty modified box; the max-form value is still returned.
    pub infeasible: Vec<usize>,
}

pub fn increments(design: &CbfDesign, bx: &ConstraintBox, x: &DVector<f64>, u_bl: &DVector<f64>) -> ConstraintIncrements {
    let y = design.h_x() * x + design.h_u() * u_bl;
    let (lo, hi) = design.modified_box(bx);
    ConstraintIncrements {
        dh1: lo - &y,
        dh2: y - hi,
    }
}

/// `π* = H_u⁻¹ (max(0, ΔH₁) − max(0, ΔH₂))`.
pub fn pi_star(design: &CbfDesign, bx: &ConstraintBox, x: &DVector<f64>, u_bl: &DVector<f64>) -> PolicyEval {
    let inc = increments(design, bx, x, u_bl);
    let infeasible = inc.infeasible_channels();
    if !infeasible.is_empty() {
        log::warn!("modified box empty on channels {infeasible:?}");
    }
    let drive = inc.dh1.map(|v| v.max(0.0)) - inc.dh2.map(|v| v.max(0.0));
    PolicyEval {
        pi: design.h_u_inv() * drive,
        infeasible,
    }
}

/// `π* = ½ H_u⁻¹ (ΔH₁ + |ΔH₁| − ΔH₂ − |ΔH₂|)`.
pub fn pi_star_algebraic(design: &CbfDesign, bx: &ConstraintBox, x: &DVector<f64>, u_bl: &DVector<f64>) -> DVector<f64> {
    let inc = increments(design, bx, x, u_bl);
    let drive = (&inc.dh1 + inc.dh1.abs() - &inc.dh2 - inc.dh2.abs()) * 0.5;
    design.h_u_inv() * drive
}

/// Total control `u = u_bl + π*`.
pub fn total_control(design: &CbfDesign, bx: &ConstraintBox, x: &DVector<f64>, u_bl: &DVector<f64>) -> DVector<f64> {
    u_bl + pi_star(design, bx, x, u_bl).pi
}

/// Activation diagonal `δ` and the selected bounds. On an infeasible channel
/// the minimum bound wins.
pub fn activation(design: &CbfDesign, bx: &ConstraintBox, x: &DVector<f64>, u_bl: &DVector<f64>) -> ActivationState {
    let inc = increments(design, bx, x, u_bl);
    activation_from_increments(&inc, bx)
}

pub fn activation_from_increments(inc: &ConstraintIncrements, bx: &ConstraintBox) -> ActivationState {
    let m = inc.dh1.len();
    let mut delta = Vec::with_capacity(m);
    let mut selected_bound = Vec::with_capacity(m);
    for i in 0..m {
        let sel = if inc.dh1[i] > 0.0 {
            if inc.dh2[i] > 0.0 {
                log::warn!("channel {i}: both bounds active, selecting the minimum");
            }
            SelectedBound::Min(bx.min()[i])
        } else if inc.dh2[i] > 0.0 {
            SelectedBound::Max(bx.max()[i])
        } else {
            SelectedBound::None
        };
        delta.push(!matches!(sel, SelectedBound::None));
        selected_bound.push(sel);
    }
    ActivationState { delta, selected_bound }
}

/// Augmentation written through the activation pattern:
/// `π = −H_u⁻¹ δ (H_x x + H_u u_bl − α_π y_sel)`.
///
/// Equals [`pi_star`] whenever every channel has at most one active bound.
pub fn switched_form(design: &CbfDesign, state: &ActivationState, x: &DVector<f64>, u_bl: &DVector<f64>) -> DVector<f64> {
    let m = design.channels();
    let y = design.h_x() * x + design.h_u() * u_bl;
    let mut inner = DVector::zeros(m);
    for i in 0..m {
        let bound = match state.selected_bound[i] {
            SelectedBound::Min(v) | SelectedBound::Max(v) => v,
            SelectedBound::None => continue,
        };
        inner[i] = y[i] - design.alpha_pi()[i] * bound;
    }
    -(design.h_u_inv() * inner)
}
