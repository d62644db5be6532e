//! Real coefficients expressing branch power flows as linear functions of
//! the lifted voltage products (w_i, w_j, w_re, w_im).
//!
//! For a branch with series admittance g + jb, per-side charging
//! admittances, tap magnitude tau and phase shift sigma, complex Ohm's law
//! for the forward and reverse flows expands over
//!   V_i V_j* = w_re + j w_im,   |V_i|^2 = w_i,   |V_j|^2 = w_j
//! into twelve real scalars. Evaluating the linear forms below at lifted
//! products derived from any voltage pair reproduces the complex flows
//! exactly.

use serde::{Deserialize, Serialize};

use crate::grid::CaseData;
use crate::{Error, Result};

/// The twelve flow coefficients of one branch.
///
/// `p_fr = pw_fr * w_i + pr_fr * w_re + pi_fr * w_im`, and likewise for the
/// reactive and reverse forms (reverse uses `w_j` in place of `w_i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchGamma {
    pub pw_fr: f64,
    pub pr_fr: f64,
    pub pi_fr: f64,
    pub qw_fr: f64,
    pub qr_fr: f64,
    pub qi_fr: f64,
    pub pw_to: f64,
    pub pr_to: f64,
    pub pi_to: f64,
    pub qw_to: f64,
    pub qr_to: f64,
    pub qi_to: f64,
}

impl BranchGamma {
    pub fn p_fr(&self, w_i: f64, w_re: f64, w_im: f64) -> f64 {
        self.pw_fr * w_i + self.pr_fr * w_re + self.pi_fr * w_im
    }
    pub fn q_fr(&self, w_i: f64, w_re: f64, w_im: f64) -> f64 {
        self.qw_fr * w_i + self.qr_fr * w_re + self.qi_fr * w_im
    }
    pub fn p_to(&self, w_j: f64, w_re: f64, w_im: f64) -> f64 {
        self.pw_to * w_j + self.pr_to * w_re + self.pi_to * w_im
    }
    pub fn q_to(&self, w_j: f64, w_re: f64, w_im: f64) -> f64 {
        self.qw_to * w_j + self.qr_to * w_re + self.qi_to * w_im
    }
}

/// Branch-flow coefficients for an entire case, branch order preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConstants {
    pub gamma: Vec<BranchGamma>,
}

/// Expand complex Ohm's law into the twelve real coefficients per branch.
///
/// Fails with [`Error::SingularTap`] when a branch has a zero tap
/// magnitude.
pub fn derive_branch_constants(case: &CaseData) -> Result<BranchConstants> {
    let mut gamma = Vec::with_capacity(case.n_branch());
    for (e, br) in case.branches.iter().enumerate() {
        if br.tap == 0.0 {
            return Err(Error::SingularTap(e));
        }
        let tau = br.tap;
        let tau2 = tau * tau;
        let (sin_s, cos_s) = br.shift.sin_cos();
        let (g, b) = (br.g, br.b);

        // conj(Y) * exp(-j sigma) = a - j b2 ; conj(Y) * exp(+j sigma) = c + j d
        let a = g * cos_s - b * sin_s;
        let b2 = g * sin_s + b * cos_s;
        let c = g * cos_s + b * sin_s;
        let d = g * sin_s - b * cos_s;

        gamma.push(BranchGamma {
            pw_fr: (g + br.g_charge_from) / tau2,
            pr_fr: -a / tau,
            pi_fr: -b2 / tau,
            qw_fr: -(b + br.b_charge_from) / tau2,
            qr_fr: b2 / tau,
            qi_fr: -a / tau,
            pw_to: g + br.g_charge_to,
            pr_to: -c / tau,
            pi_to: -d / tau,
            qw_to: -(b + br.b_charge_to),
            qr_to: -d / tau,
            qi_to: c / tau,
        });
    }
    Ok(BranchConstants { gamma })
}
