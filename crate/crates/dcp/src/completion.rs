//! Closed-form recovery of a fully dual-feasible solution from a predicted
//! subset of dual variables.
//!
//! Given the per-bus balance duals, one four-vector flow-dual block per
//! branch (in either the lambda or the nu convention), the angle-bound
//! duals, and an omega block, every remaining dual variable is determined
//! by the dual equalities together with three optimality properties:
//! lower/upper bound duals never overlap, the thermal cone heads sit on
//! the cone boundary, and the rotated cone for the voltage-product
//! relaxation is active. The recovered point maximizes the dual objective
//! over all feasible assignments of the dependent variables, so the bound
//! it yields is the best one obtainable from the prediction.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

use crate::grid::{BranchConstants, CaseData};
use crate::soc::{DualSolution, InstanceLoads};
use crate::{Error, Result};

/// Which four-vector per branch the prediction supplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowChoice {
    /// Predict the Ohm's-law duals; recover the thermal-cone components.
    LambdaFlows,
    /// Predict the thermal-cone components; recover the Ohm's-law duals.
    NuFlows,
}

/// How the head pair of the rotated cone is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaRepr {
    /// Predict both nonnegative heads, then shift them onto the cone
    /// boundary by solving a quadratic.
    Rectangular,
    /// Predict one angle per branch; the radius follows from the cone
    /// activity condition. One fewer variable per branch.
    Polar,
}

/// Configuration of the completion map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub flow_choice: FlowChoice,
    pub omega_repr: OmegaRepr,
    /// Clamp half-width keeping the polar angle away from {0, pi/2},
    /// where the radius formula blows up. Radians, in (0, pi/4).
    pub eps_phi: f64,
    /// Floor applied to predicted rectangular heads.
    pub eps_omega: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            flow_choice: FlowChoice::NuFlows,
            omega_repr: OmegaRepr::Polar,
            eps_phi: 1e-3,
            eps_omega: 0.0,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_phi > 0.0 && self.eps_phi < FRAC_PI_4) {
            return Err(Error::Domain(format!(
                "eps_phi must lie in (0, pi/4), got {}",
                self.eps_phi
            )));
        }
        if self.eps_omega < 0.0 {
            return Err(Error::Domain(format!(
                "eps_omega must be nonnegative, got {}",
                self.eps_omega
            )));
        }
        Ok(())
    }
}

/// Per-branch flow-dual block of the prediction, in the convention named
/// by [`CompletionConfig::flow_choice`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBlock {
    pub fr_p: Vec<f64>,
    pub fr_q: Vec<f64>,
    pub to_p: Vec<f64>,
    pub to_q: Vec<f64>,
}

/// Omega block of the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaBlock {
    /// One angle per branch, inside the clamp interval.
    Polar { phi: Vec<f64> },
    /// Both nonnegative heads per branch.
    Rectangular { f: Vec<f64>, t: Vec<f64> },
}

/// The predicted independent dual variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentVars {
    pub lambda_p: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub flow: FlowBlock,
    pub mu_theta_lo: Vec<f64>,
    pub mu_theta_hi: Vec<f64>,
    pub omega: OmegaBlock,
}

impl IndependentVars {
    /// All-zero prediction (polar angle at pi/4).
    pub fn zeros(case: &CaseData, config: &CompletionConfig) -> Self {
        let n = case.n_bus();
        let m = case.n_branch();
        IndependentVars {
            lambda_p: vec![0.0; n],
            lambda_q: vec![0.0; n],
            flow: FlowBlock {
                fr_p: vec![0.0; m],
                fr_q: vec![0.0; m],
                to_p: vec![0.0; m],
                to_q: vec![0.0; m],
            },
            mu_theta_lo: vec![0.0; m],
            mu_theta_hi: vec![0.0; m],
            omega: match config.omega_repr {
                OmegaRepr::Polar => OmegaBlock::Polar {
                    phi: vec![FRAC_PI_4; m],
                },
                OmegaRepr::Rectangular => OmegaBlock::Rectangular {
                    f: vec![0.0; m],
                    t: vec![0.0; m],
                },
            },
        }
    }

    /// Check dimensions, finiteness, sign invariants, and agreement with
    /// the configuration.
    pub fn validate(&self, case: &CaseData, config: &CompletionConfig) -> Result<()> {
        let n = case.n_bus();
        let m = case.n_branch();
        let want = |name: &str, len: usize, expect: usize| -> Result<()> {
            if len != expect {
                return Err(Error::Dimension(format!(
                    "{name}: got {len}, expected {expect}"
                )));
            }
            Ok(())
        };
        want("lambda_p", self.lambda_p.len(), n)?;
        want("lambda_q", self.lambda_q.len(), n)?;
        want("flow.fr_p", self.flow.fr_p.len(), m)?;
        want("flow.fr_q", self.flow.fr_q.len(), m)?;
        want("flow.to_p", self.flow.to_p.len(), m)?;
        want("flow.to_q", self.flow.to_q.len(), m)?;
        want("mu_theta_lo", self.mu_theta_lo.len(), m)?;
        want("mu_theta_hi", self.mu_theta_hi.len(), m)?;
        match (&self.omega, config.omega_repr) {
            (OmegaBlock::Polar { phi }, OmegaRepr::Polar) => want("omega.phi", phi.len(), m)?,
            (OmegaBlock::Rectangular { f, t }, OmegaRepr::Rectangular) => {
                want("omega.f", f.len(), m)?;
                want("omega.t", t.len(), m)?;
            }
            _ => {
                return Err(Error::Dimension(
                    "omega block does not match the configured representation".into(),
                ))
            }
        }

        let all = self
            .lambda_p
            .iter()
            .chain(&self.lambda_q)
            .chain(&self.flow.fr_p)
            .chain(&self.flow.fr_q)
            .chain(&self.flow.to_p)
            .chain(&self.flow.to_q)
            .chain(&self.mu_theta_lo)
            .chain(&self.mu_theta_hi);
        let omega_iter: Box<dyn Iterator<Item = &f64>> = match &self.omega {
            OmegaBlock::Polar { phi } => Box::new(phi.iter()),
            OmegaBlock::Rectangular { f, t } => Box::new(f.iter().chain(t.iter())),
        };
        for v in all.chain(omega_iter) {
            if !v.is_finite() {
                return Err(Error::NonFinite("independent variables".into()));
            }
        }
        for (e, (&lo, &hi)) in self.mu_theta_lo.iter().zip(&self.mu_theta_hi).enumerate() {
            if lo < 0.0 || hi < 0.0 {
                return Err(Error::Domain(format!(
                    "angle-bound duals must be nonnegative, branch {e}: ({lo}, {hi})"
                )));
            }
        }
        if let OmegaBlock::Rectangular { f, t } = &self.omega {
            for (e, (&of, &ot)) in f.iter().zip(t.iter()).enumerate() {
                if of < 0.0 || ot < 0.0 {
                    return Err(Error::Domain(format!(
                        "rectangular omega heads must be nonnegative, branch {e}: ({of}, {ot})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Split a target/actual pair into complementary bound duals:
/// `(max(0, target - actual), max(0, actual - target))`. Exactly one of
/// the two is nonzero unless both vanish.
pub fn recover_bound_duals(target: f64, actual: f64) -> (f64, f64) {
    ((target - actual).max(0.0), (actual - target).max(0.0))
}

/// Thermal-cone head on the boundary: `sqrt(nu_p^2 + nu_q^2)`.
pub fn recover_nu_head(nu_p: f64, nu_q: f64) -> f64 {
    (nu_p * nu_p + nu_q * nu_q).sqrt()
}

/// Move nonnegative heads (f, t) onto the cone boundary `2 f t = k` along
/// the diagonal: returns `(f + d, t + d)` with the larger quadratic root
///
///   d = (k - 2 f t) / ((f + t) + sqrt((f - t)^2 + 2 k)),
///
/// written in rationalized form to avoid cancellation. Both outputs stay
/// nonnegative and their product satisfies the boundary equation exactly.
pub fn repair_omega_rect(f: f64, t: f64, k: f64) -> (f64, f64) {
    let disc = (f - t) * (f - t) + 2.0 * k;
    let denom = f + t + disc.sqrt();
    let d = if denom > 0.0 { (k - 2.0 * f * t) / denom } else { 0.0 };
    (f + d, t + d)
}

/// Heads from a polar angle and the squared tail norm `k`:
/// `rho = sqrt(k / sin(2 phi))`, `(f, t) = (rho cos phi, rho sin phi)`.
/// `k = 0` yields `(0, 0)`, which the rectangular recovery from a single
/// head cannot represent. Angles outside the clamp interval are clamped;
/// the returned flag reports whether clamping occurred.
pub fn omega_from_polar(phi: f64, k: f64, eps_phi: f64) -> (f64, f64, bool) {
    let lo = eps_phi;
    let hi = FRAC_PI_2 - eps_phi;
    let clamped = phi < lo || phi > hi;
    let phi = phi.clamp(lo, hi);
    let rho = (k / (2.0 * phi).sin()).sqrt();
    (rho * phi.cos(), rho * phi.sin(), clamped)
}

/// Map between the lambda and nu flow-dual conventions.
///
/// The flow equalities tie the thermal-cone components to the balance and
/// Ohm's-law duals by `nu_fr_p = lambda_p[from] + lambda_fr_p` (and the
/// three analogues), an affine bijection for fixed balance duals. Returns
/// `(lambda_block, nu_block)` whichever direction the input takes.
pub fn recover_flow_duals(
    case: &CaseData,
    lambda_p: &[f64],
    lambda_q: &[f64],
    flow: &FlowBlock,
    choice: FlowChoice,
) -> (FlowBlock, FlowBlock) {
    let m = case.n_branch();
    let mut lam = FlowBlock {
        fr_p: vec![0.0; m],
        fr_q: vec![0.0; m],
        to_p: vec![0.0; m],
        to_q: vec![0.0; m],
    };
    let mut nu = lam.clone();
    for (e, br) in case.branches.iter().enumerate() {
        let (lp_i, lq_i) = (lambda_p[br.from], lambda_q[br.from]);
        let (lp_j, lq_j) = (lambda_p[br.to], lambda_q[br.to]);
        match choice {
            FlowChoice::LambdaFlows => {
                lam.fr_p[e] = flow.fr_p[e];
                lam.fr_q[e] = flow.fr_q[e];
                lam.to_p[e] = flow.to_p[e];
                lam.to_q[e] = flow.to_q[e];
                nu.fr_p[e] = lp_i + flow.fr_p[e];
                nu.fr_q[e] = lq_i + flow.fr_q[e];
                nu.to_p[e] = lp_j + flow.to_p[e];
                nu.to_q[e] = lq_j + flow.to_q[e];
            }
            FlowChoice::NuFlows => {
                nu.fr_p[e] = flow.fr_p[e];
                nu.fr_q[e] = flow.fr_q[e];
                nu.to_p[e] = flow.to_p[e];
                nu.to_q[e] = flow.to_q[e];
                lam.fr_p[e] = flow.fr_p[e] - lp_i;
                lam.fr_q[e] = flow.fr_q[e] - lq_i;
                lam.to_p[e] = flow.to_p[e] - lp_j;
                lam.to_q[e] = flow.to_q[e] - lq_j;
            }
        }
    }
    (lam, nu)
}

/// Cone tail of one branch from the two per-branch dual equalities: each
/// component is the negated remainder of its equality, so the completed
/// solution satisfies both at roundoff level.
pub fn recover_omega_tail(
    gamma: &crate::grid::BranchGamma,
    lam_fr_p: f64,
    lam_fr_q: f64,
    lam_to_p: f64,
    lam_to_q: f64,
    mu_lo: f64,
    mu_hi: f64,
    tan_lo: f64,
    tan_hi: f64,
) -> (f64, f64) {
    let w_re = -(gamma.pr_fr * lam_fr_p
        + gamma.pr_to * lam_to_p
        + gamma.qr_fr * lam_fr_q
        + gamma.qr_to * lam_to_q
        - tan_lo * mu_lo
        + tan_hi * mu_hi);
    let w_im = -(gamma.pi_fr * lam_fr_p
        + gamma.pi_to * lam_to_p
        + gamma.qi_fr * lam_fr_q
        + gamma.qi_to * lam_to_q
        + mu_lo
        - mu_hi);
    (w_re, w_im)
}

/// Tolerance on flow duals implied at a branch whose thermal limit is
/// unbounded; such a branch has no thermal-cone dual, so the prediction
/// must put (numerically) nothing there.
const UNLIMITED_NU_TOL: f64 = 1e-9;

/// Recover the full dual vector from the independent variables.
///
/// The result satisfies every dual constraint at roundoff level, agrees
/// with `xi` on the predicted coordinates, and attains the largest dual
/// objective among all feasible assignments of the dependent variables.
pub fn complete(
    case: &CaseData,
    constants: &BranchConstants,
    _loads: &InstanceLoads,
    xi: &IndependentVars,
    config: &CompletionConfig,
) -> Result<DualSolution> {
    config.validate()?;
    xi.validate(case, config)?;
    let n = case.n_bus();
    let m = case.n_branch();

    let (lam, mut nu) = recover_flow_duals(case, &xi.lambda_p, &xi.lambda_q, &xi.flow, config.flow_choice);

    // Thermal heads on the cone boundary; unbounded branches carry no
    // thermal dual at all.
    let mut nu_fr_s = vec![0.0; m];
    let mut nu_to_s = vec![0.0; m];
    for (e, br) in case.branches.iter().enumerate() {
        if br.s_max.is_none() {
            let implied = nu.fr_p[e]
                .abs()
                .max(nu.fr_q[e].abs())
                .max(nu.to_p[e].abs())
                .max(nu.to_q[e].abs());
            if implied > UNLIMITED_NU_TOL {
                return Err(Error::InfeasibleConfig(format!(
                    "branch {e} has no thermal limit but the prediction implies \
                     thermal duals of magnitude {implied:.3e}"
                )));
            }
            nu.fr_p[e] = 0.0;
            nu.fr_q[e] = 0.0;
            nu.to_p[e] = 0.0;
            nu.to_q[e] = 0.0;
            continue;
        }
        nu_fr_s[e] = recover_nu_head(nu.fr_p[e], nu.fr_q[e]);
        nu_to_s[e] = recover_nu_head(nu.to_p[e], nu.to_q[e]);
    }

    // Cone tails from the per-branch equalities, then heads on the
    // boundary in the configured representation.
    let mut omega_re = vec![0.0; m];
    let mut omega_im = vec![0.0; m];
    let mut omega_f = vec![0.0; m];
    let mut omega_t = vec![0.0; m];
    for (e, br) in case.branches.iter().enumerate() {
        let (w_re, w_im) = recover_omega_tail(
            &constants.gamma[e],
            lam.fr_p[e],
            lam.fr_q[e],
            lam.to_p[e],
            lam.to_q[e],
            xi.mu_theta_lo[e],
            xi.mu_theta_hi[e],
            br.angle_min.tan(),
            br.angle_max.tan(),
        );
        omega_re[e] = w_re;
        omega_im[e] = w_im;
        let k = w_re * w_re + w_im * w_im;
        match &xi.omega {
            OmegaBlock::Polar { phi } => {
                let (f, t, _) = omega_from_polar(phi[e], k, config.eps_phi);
                omega_f[e] = f;
                omega_t[e] = t;
            }
            OmegaBlock::Rectangular { f, t } => {
                let (rf, rt) = repair_omega_rect(
                    f[e].max(config.eps_omega),
                    t[e].max(config.eps_omega),
                    k,
                );
                omega_f[e] = rf;
                omega_t[e] = rt;
            }
        }
    }

    // Generation-bound duals from the per-bus equalities.
    let mut mu_pg_lo = vec![0.0; n];
    let mut mu_pg_hi = vec![0.0; n];
    let mut mu_qg_lo = vec![0.0; n];
    let mut mu_qg_hi = vec![0.0; n];
    for i in 0..n {
        let (lo, hi) = recover_bound_duals(case.gens[i].cost, xi.lambda_p[i]);
        mu_pg_lo[i] = lo;
        mu_pg_hi[i] = hi;
        let (lo, hi) = recover_bound_duals(0.0, xi.lambda_q[i]);
        mu_qg_lo[i] = lo;
        mu_qg_hi[i] = hi;
    }

    // Voltage-bound duals absorb the remainder of the per-bus lifted
    // equality.
    let mut mu_w_lo = vec![0.0; n];
    let mut mu_w_hi = vec![0.0; n];
    let remainders = w_equality_remainder(
        case, constants, &xi.lambda_p, &xi.lambda_q, &lam, &omega_f, &omega_t,
    );
    for i in 0..n {
        mu_w_hi[i] = remainders[i].max(0.0);
        mu_w_lo[i] = (-remainders[i]).max(0.0);
    }

    Ok(DualSolution {
        lambda_p: xi.lambda_p.clone(),
        lambda_q: xi.lambda_q.clone(),
        mu_pg_lo,
        mu_pg_hi,
        mu_qg_lo,
        mu_qg_hi,
        mu_w_lo,
        mu_w_hi,
        lambda_fr_p: lam.fr_p,
        lambda_fr_q: lam.fr_q,
        lambda_to_p: lam.to_p,
        lambda_to_q: lam.to_q,
        mu_theta_lo: xi.mu_theta_lo.clone(),
        mu_theta_hi: xi.mu_theta_hi.clone(),
        nu_fr_s,
        nu_fr_p: nu.fr_p,
        nu_fr_q: nu.fr_q,
        nu_to_s,
        nu_to_p: nu.to_p,
        nu_to_q: nu.to_q,
        omega_f,
        omega_t,
        omega_re,
        omega_im,
    })
}

/// Per-bus remainder of the lifted-voltage dual equality, everything
/// except the bound-dual difference. The equality reads
/// `remainder + mu_w_lo - mu_w_hi = 0`.
pub(crate) fn w_equality_remainder(
    case: &CaseData,
    constants: &BranchConstants,
    lambda_p: &[f64],
    lambda_q: &[f64],
    lam: &FlowBlock,
    omega_f: &[f64],
    omega_t: &[f64],
) -> Vec<f64> {
    let gamma = &constants.gamma;
    let mut r = vec![0.0; case.n_bus()];
    for (i, bus) in case.buses.iter().enumerate() {
        r[i] = -bus.g_shunt * lambda_p[i] + bus.b_shunt * lambda_q[i];
    }
    for (e, br) in case.branches.iter().enumerate() {
        let gm = &gamma[e];
        r[br.from] += gm.pw_fr * lam.fr_p[e] + gm.qw_fr * lam.fr_q[e] + omega_f[e] / SQRT_2;
        r[br.to] += gm.pw_to * lam.to_p[e] + gm.qw_to * lam.to_q[e] + omega_t[e] / SQRT_2;
    }
    r
}

/// Extract the independent coordinates of a full dual vector under the
/// given configuration. Polar mode reads the angle with `atan2` and
/// clamps it into the admissible interval, with `pi/4` at the origin;
/// negative rectangular heads are clamped to zero. Returns the number of
/// entries that needed clamping.
pub fn extract_independent(
    y: &DualSolution,
    case: &CaseData,
    config: &CompletionConfig,
) -> Result<(IndependentVars, usize)> {
    config.validate()?;
    y.validate(case)?;
    let m = case.n_branch();
    let mut clamped = 0usize;

    let flow = match config.flow_choice {
        FlowChoice::LambdaFlows => FlowBlock {
            fr_p: y.lambda_fr_p.clone(),
            fr_q: y.lambda_fr_q.clone(),
            to_p: y.lambda_to_p.clone(),
            to_q: y.lambda_to_q.clone(),
        },
        FlowChoice::NuFlows => FlowBlock {
            fr_p: y.nu_fr_p.clone(),
            fr_q: y.nu_fr_q.clone(),
            to_p: y.nu_to_p.clone(),
            to_q: y.nu_to_q.clone(),
        },
    };

    let omega = match config.omega_repr {
        OmegaRepr::Polar => {
            let mut phi = vec![0.0; m];
            for e in 0..m {
                let mut f = y.omega_f[e];
                let mut t = y.omega_t[e];
                if f < 0.0 || t < 0.0 {
                    clamped += 1;
                    f = f.max(0.0);
                    t = t.max(0.0);
                }
                let raw = if f == 0.0 && t == 0.0 {
                    FRAC_PI_4
                } else {
                    t.atan2(f)
                };
                let lo = config.eps_phi;
                let hi = FRAC_PI_2 - config.eps_phi;
                if raw < lo || raw > hi {
                    clamped += 1;
                }
                phi[e] = raw.clamp(lo, hi);
            }
            OmegaBlock::Polar { phi }
        }
        OmegaRepr::Rectangular => {
            let mut f = y.omega_f.clone();
            let mut t = y.omega_t.clone();
            for e in 0..m {
                if f[e] < 0.0 {
                    f[e] = 0.0;
                    clamped += 1;
                }
                if t[e] < 0.0 {
                    t[e] = 0.0;
                    clamped += 1;
                }
            }
            OmegaBlock::Rectangular { f, t }
        }
    };

    let mut mu_theta_lo = y.mu_theta_lo.clone();
    let mut mu_theta_hi = y.mu_theta_hi.clone();
    for e in 0..m {
        if mu_theta_lo[e] < 0.0 {
            mu_theta_lo[e] = 0.0;
            clamped += 1;
        }
        if mu_theta_hi[e] < 0.0 {
            mu_theta_hi[e] = 0.0;
            clamped += 1;
        }
    }

    Ok((
        IndependentVars {
            lambda_p: y.lambda_p.clone(),
            lambda_q: y.lambda_q.clone(),
            flow,
            mu_theta_lo,
            mu_theta_hi,
            omega,
        },
        clamped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{derive_branch_constants, parse_matpower, AggGen, Branch, Bus};
    use crate::soc::{dual_objective, dual_residuals};
    use std::f64::consts::FRAC_PI_3;

    fn case14() -> CaseData {
        parse_matpower(crate::CASE14_TEXT).unwrap()
    }

    /// One generator bus with a strictly positive lower dispatch bound and
    /// no branches, small enough to trace by hand.
    fn single_bus_case(cost: f64) -> CaseData {
        CaseData {
            name: "single".into(),
            base_mva: 100.0,
            buses: vec![Bus {
                ext_id: 1,
                g_shunt: 0.0,
                b_shunt: 0.0,
                v_min: 0.95,
                v_max: 1.05,
            }],
            branches: vec![],
            gens: vec![AggGen {
                p_min: 0.3,
                p_max: 2.0,
                q_min: -1.0,
                q_max: 1.0,
                cost,
            }],
            ref_p_load: vec![0.8],
            ref_q_load: vec![0.2],
            warnings: vec![],
        }
    }

    #[test]
    fn zero_prediction_on_case14_is_feasible_with_floor_objective() {
        let case = case14();
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        let config = CompletionConfig::default();
        let xi = IndependentVars::zeros(&case, &config);
        let y = complete(&case, &constants, &loads, &xi, &config).unwrap();
        let report = dual_residuals(&case, &constants, &y).unwrap();
        assert!(report.max_violation() <= 1e-12);
        // With zero balance duals the only surviving terms are the lower
        // dispatch bounds against the recovered cost duals.
        let expected: f64 = case.gens.iter().map(|g| g.p_min * g.cost).sum();
        let z = dual_objective(&case, &loads, &y);
        assert!((z - expected).abs() <= 1e-12);
        for i in 0..case.n_bus() {
            assert_eq!(y.mu_pg_lo[i], case.gens[i].cost);
            assert_eq!(y.mu_pg_hi[i], 0.0);
        }
        assert!(y.nu_fr_s.iter().all(|&v| v == 0.0));
        assert!(y.omega_f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_bus_lambda_below_cost_splits_bound_duals() {
        let case = single_bus_case(5.0);
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        let config = CompletionConfig::default();
        let mut xi = IndependentVars::zeros(&case, &config);
        xi.lambda_p[0] = 4.0; // cost - 1
        let y = complete(&case, &constants, &loads, &xi, &config).unwrap();
        assert_eq!(y.mu_pg_lo[0], 1.0);
        assert_eq!(y.mu_pg_hi[0], 0.0);
        // lambda = cost on a single bus gives objective p_d * cost + p_min * 0.
        xi.lambda_p[0] = 5.0;
        let y = complete(&case, &constants, &loads, &xi, &config).unwrap();
        let z = dual_objective(&case, &loads, &y);
        assert!((z - 0.8 * 5.0).abs() <= 1e-12);
    }

    #[test]
    fn flow_dual_recovery_in_both_directions() {
        let case = case14();
        let mut lambda_p = vec![0.0; case.n_bus()];
        let lambda_q = vec![0.0; case.n_bus()];
        lambda_p[case.branches[0].from] = 1.0;
        let m = case.n_branch();
        let mut flow = FlowBlock {
            fr_p: vec![0.0; m],
            fr_q: vec![0.0; m],
            to_p: vec![0.0; m],
            to_q: vec![0.0; m],
        };
        flow.fr_p[0] = 2.0;
        let (_, nu) =
            recover_flow_duals(&case, &lambda_p, &lambda_q, &flow, FlowChoice::LambdaFlows);
        assert_eq!(nu.fr_p[0], 3.0);

        // Inversion: a zero thermal dual forces the flow dual to the
        // negated balance dual.
        let mut nu_in = flow.clone();
        nu_in.fr_p[0] = 0.0;
        let (lam, _) =
            recover_flow_duals(&case, &lambda_p, &lambda_q, &nu_in, FlowChoice::NuFlows);
        assert_eq!(lam.fr_p[0], -1.0);
    }

    #[test]
    fn flow_round_trip_is_identity() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let case = case14();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = case.n_bus();
        let m = case.n_branch();
        let lambda_p: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let lambda_q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut rnd = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect() };
        let lam_in = FlowBlock {
            fr_p: rnd(m),
            fr_q: rnd(m),
            to_p: rnd(m),
            to_q: rnd(m),
        };
        let (_, nu) =
            recover_flow_duals(&case, &lambda_p, &lambda_q, &lam_in, FlowChoice::LambdaFlows);
        let (lam_back, _) =
            recover_flow_duals(&case, &lambda_p, &lambda_q, &nu, FlowChoice::NuFlows);
        for e in 0..m {
            assert!((lam_in.fr_p[e] - lam_back.fr_p[e]).abs() <= 1e-12);
            assert!((lam_in.to_q[e] - lam_back.to_q[e]).abs() <= 1e-12);
        }
    }

    #[test]
    fn nu_head_is_euclidean_norm() {
        assert_eq!(recover_nu_head(3.0, 4.0), 5.0);
        assert_eq!(recover_nu_head(0.0, 0.0), 0.0);
    }

    #[test]
    fn raising_nu_head_strictly_lowers_the_objective() {
        let case = case14();
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        let config = CompletionConfig::default();
        let xi = IndependentVars::zeros(&case, &config);
        let mut y = complete(&case, &constants, &loads, &xi, &config).unwrap();
        let z0 = dual_objective(&case, &loads, &y);
        y.nu_fr_s[0] += 1.0;
        let z1 = dual_objective(&case, &loads, &y);
        let s_max = case.branches[0].s_max.unwrap();
        assert!((z0 - z1 - s_max).abs() <= 1e-12);
    }

    #[test]
    fn unlimited_branch_with_nonzero_flow_duals_is_rejected() {
        let mut case = case14();
        case.branches[0].s_max = None;
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        let config = CompletionConfig::default();
        let mut xi = IndependentVars::zeros(&case, &config);
        xi.flow.fr_p[0] = 0.5;
        assert!(matches!(
            complete(&case, &constants, &loads, &xi, &config),
            Err(Error::InfeasibleConfig(_))
        ));
        // All-zero flow duals on the unbounded branch complete fine.
        xi.flow.fr_p[0] = 0.0;
        let y = complete(&case, &constants, &loads, &xi, &config).unwrap();
        assert_eq!(y.nu_fr_s[0], 0.0);
        let report = crate::soc::dual_residuals(&case, &constants, &y).unwrap();
        assert!(report.max_violation() <= 1e-12);
    }

    #[test]
    fn omega_tail_from_angle_duals_alone() {
        // Only the lower angle dual set, with a -pi/4 lower bound: the
        // tail components are the negated equality remainders.
        let gamma = crate::grid::BranchGamma {
            pw_fr: 0.0, pr_fr: 0.0, pi_fr: 0.0,
            qw_fr: 0.0, qr_fr: 0.0, qi_fr: 0.0,
            pw_to: 0.0, pr_to: 0.0, pi_to: 0.0,
            qw_to: 0.0, qr_to: 0.0, qi_to: 0.0,
        };
        let tan_lo = (-std::f64::consts::FRAC_PI_4).tan();
        let (w_re, w_im) =
            recover_omega_tail(&gamma, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, tan_lo, 0.6);
        assert!((w_re - (-1.0)).abs() <= 1e-15);
        assert!((w_im - (-1.0)).abs() <= 1e-15);
        let (w_re, w_im) =
            recover_omega_tail(&gamma, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, tan_lo, 0.6);
        assert_eq!((w_re, w_im), (0.0, 0.0));
    }

    #[test]
    fn rect_repair_examples_and_boundary() {
        let (f, t) = repair_omega_rect(1.0, 1.0, 2.0);
        assert_eq!((f, t), (1.0, 1.0));
        let (f, t) = repair_omega_rect(0.0, 0.0, 2.0);
        assert!((f - 1.0).abs() <= 1e-15 && (t - 1.0).abs() <= 1e-15);
        let (f, t) = repair_omega_rect(3.0, 0.0, 2.0);
        let delta = (-3.0 + 13.0_f64.sqrt()) / 2.0;
        assert!((f - (3.0 + delta)).abs() <= 1e-12);
        assert!((t - delta).abs() <= 1e-12);
        assert!((2.0 * f * t - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn polar_examples_and_boundary() {
        let (f, t, clamped) = omega_from_polar(std::f64::consts::FRAC_PI_4, 2.0, 1e-3);
        assert!(!clamped);
        assert!((f - 1.0).abs() <= 1e-12 && (t - 1.0).abs() <= 1e-12);
        let (f, t, _) = omega_from_polar(1.1, 0.0, 1e-3);
        assert_eq!((f, t), (0.0, 0.0));
        let (f, t, _) = omega_from_polar(std::f64::consts::FRAC_PI_6, 2.0, 1e-3);
        let rho = (2.0 / FRAC_PI_3.sin()).sqrt();
        assert!((rho - 1.5196713713031853).abs() <= 1e-12);
        assert!((f - rho * std::f64::consts::FRAC_PI_6.cos()).abs() <= 1e-12);
        assert!((t - rho * 0.5).abs() <= 1e-12);
        assert!((2.0 * f * t - 2.0).abs() <= 1e-12);
        let (_, _, clamped) = omega_from_polar(-0.2, 1.0, 1e-3);
        assert!(clamped);
    }

    #[test]
    fn bound_dual_split_is_complementary() {
        assert_eq!(recover_bound_duals(5.0, 3.0), (2.0, 0.0));
        assert_eq!(recover_bound_duals(5.0, 7.0), (0.0, 2.0));
        for (target, actual) in [(1.0, 1.0), (-2.0, 3.0), (0.4, -0.4)] {
            let (lo, hi) = recover_bound_duals(target, actual);
            assert_eq!(lo * hi, 0.0);
            assert!(lo >= 0.0 && hi >= 0.0);
        }
    }

    #[test]
    fn extract_complete_round_trip_and_conventions() {
        let case = case14();
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        for config in crate::selftest::all_configs() {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
            let xi = crate::selftest::random_xi(&case, &config, &mut rng);
            let y = complete(&case, &constants, &loads, &xi, &config).unwrap();
            let (xi2, clamped) = extract_independent(&y, &case, &config).unwrap();
            assert_eq!(clamped, 0);
            let close = |a: &[f64], b: &[f64]| {
                a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
            };
            assert!(close(&xi.lambda_p, &xi2.lambda_p));
            assert!(close(&xi.flow.fr_p, &xi2.flow.fr_p));
            assert!(close(&xi.mu_theta_lo, &xi2.mu_theta_lo));
        }

        // Conventions at special omega values.
        let config = CompletionConfig::default();
        let mut y = crate::soc::DualSolution::zeros(&case);
        y.omega_f[0] = 1.0;
        y.omega_t[0] = 1.0;
        let (xi, _) = extract_independent(&y, &case, &config).unwrap();
        let OmegaBlock::Polar { phi } = &xi.omega else {
            panic!("polar expected")
        };
        assert!((phi[0] - std::f64::consts::FRAC_PI_4).abs() <= 1e-15);
        // The all-zero head pair maps to the interval midpoint.
        assert!((phi[1] - std::f64::consts::FRAC_PI_4).abs() <= 1e-15);

        let mut y = crate::soc::DualSolution::zeros(&case);
        y.omega_f[2] = -0.5;
        let (xi, clamped) = extract_independent(&y, &case, &config).unwrap();
        assert!(clamped > 0);
        let OmegaBlock::Polar { phi } = &xi.omega else {
            panic!("polar expected")
        };
        assert!(phi[2] >= config.eps_phi);
    }

    #[test]
    fn non_finite_prediction_is_rejected() {
        let case = case14();
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        let config = CompletionConfig::default();
        let mut xi = IndependentVars::zeros(&case, &config);
        xi.lambda_p[3] = f64::NAN;
        assert!(matches!(
            complete(&case, &constants, &loads, &xi, &config),
            Err(Error::NonFinite(_))
        ));
    }
}
