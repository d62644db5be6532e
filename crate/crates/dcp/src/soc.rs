//! Objective and residual evaluation for the second-order-cone relaxation
//! and its conic dual, plus the gap metrics used in reports.
//!
//! Everything here is a pure function of the case and a candidate point:
//! no feasibility is assumed, no solving happens. This module is the
//! checker the rest of the crate is tested against.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::grid::{BranchConstants, CaseData};
use crate::{Error, Result};

/// One instance's demand vectors, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLoads {
    pub p_d: Vec<f64>,
    pub q_d: Vec<f64>,
}

impl InstanceLoads {
    pub fn nominal(case: &CaseData) -> Self {
        InstanceLoads {
            p_d: case.ref_p_load.clone(),
            q_d: case.ref_q_load.clone(),
        }
    }

    pub fn validate(&self, case: &CaseData) -> Result<()> {
        if self.p_d.len() != case.n_bus() || self.q_d.len() != case.n_bus() {
            return Err(Error::Dimension(format!(
                "loads dimension ({}, {}) vs {} buses",
                self.p_d.len(),
                self.q_d.len(),
                case.n_bus()
            )));
        }
        if self.p_d.iter().chain(&self.q_d).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("instance loads".into()));
        }
        Ok(())
    }

    pub fn total_p(&self) -> f64 {
        self.p_d.iter().sum()
    }
}

/// A candidate point of the relaxation (not necessarily feasible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub w: Vec<f64>,
    pub w_re: Vec<f64>,
    pub w_im: Vec<f64>,
    pub p_fr: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_fr: Vec<f64>,
    pub q_to: Vec<f64>,
}

impl PrimalSolution {
    pub fn validate(&self, case: &CaseData) -> Result<()> {
        let n = case.n_bus();
        let m = case.n_branch();
        let per_bus = [&self.pg, &self.qg, &self.w];
        let per_branch = [
            &self.w_re, &self.w_im, &self.p_fr, &self.p_to, &self.q_fr, &self.q_to,
        ];
        if per_bus.iter().any(|v| v.len() != n) || per_branch.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension("primal solution".into()));
        }
        Ok(())
    }
}

/// A candidate dual point. Sign and cone conditions are checked by
/// [`dual_residuals`], never assumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    // Per bus.
    pub lambda_p: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub mu_pg_lo: Vec<f64>,
    pub mu_pg_hi: Vec<f64>,
    pub mu_qg_lo: Vec<f64>,
    pub mu_qg_hi: Vec<f64>,
    pub mu_w_lo: Vec<f64>,
    pub mu_w_hi: Vec<f64>,
    // Per branch.
    pub lambda_fr_p: Vec<f64>,
    pub lambda_fr_q: Vec<f64>,
    pub lambda_to_p: Vec<f64>,
    pub lambda_to_q: Vec<f64>,
    pub mu_theta_lo: Vec<f64>,
    pub mu_theta_hi: Vec<f64>,
    pub nu_fr_s: Vec<f64>,
    pub nu_fr_p: Vec<f64>,
    pub nu_fr_q: Vec<f64>,
    pub nu_to_s: Vec<f64>,
    pub nu_to_p: Vec<f64>,
    pub nu_to_q: Vec<f64>,
    pub omega_f: Vec<f64>,
    pub omega_t: Vec<f64>,
    pub omega_re: Vec<f64>,
    pub omega_im: Vec<f64>,
}

impl DualSolution {
    pub fn zeros(case: &CaseData) -> Self {
        let n = case.n_bus();
        let m = case.n_branch();
        DualSolution {
            lambda_p: vec![0.0; n],
            lambda_q: vec![0.0; n],
            mu_pg_lo: vec![0.0; n],
            mu_pg_hi: vec![0.0; n],
            mu_qg_lo: vec![0.0; n],
            mu_qg_hi: vec![0.0; n],
            mu_w_lo: vec![0.0; n],
            mu_w_hi: vec![0.0; n],
            lambda_fr_p: vec![0.0; m],
            lambda_fr_q: vec![0.0; m],
            lambda_to_p: vec![0.0; m],
            lambda_to_q: vec![0.0; m],
            mu_theta_lo: vec![0.0; m],
            mu_theta_hi: vec![0.0; m],
            nu_fr_s: vec![0.0; m],
            nu_fr_p: vec![0.0; m],
            nu_fr_q: vec![0.0; m],
            nu_to_s: vec![0.0; m],
            nu_to_p: vec![0.0; m],
            nu_to_q: vec![0.0; m],
            omega_f: vec![0.0; m],
            omega_t: vec![0.0; m],
            omega_re: vec![0.0; m],
            omega_im: vec![0.0; m],
        }
    }

    pub fn validate(&self, case: &CaseData) -> Result<()> {
        let n = case.n_bus();
        let m = case.n_branch();
        let per_bus = [
            &self.lambda_p, &self.lambda_q, &self.mu_pg_lo, &self.mu_pg_hi,
            &self.mu_qg_lo, &self.mu_qg_hi, &self.mu_w_lo, &self.mu_w_hi,
        ];
        let per_branch = [
            &self.lambda_fr_p, &self.lambda_fr_q, &self.lambda_to_p, &self.lambda_to_q,
            &self.mu_theta_lo, &self.mu_theta_hi,
            &self.nu_fr_s, &self.nu_fr_p, &self.nu_fr_q,
            &self.nu_to_s, &self.nu_to_p, &self.nu_to_q,
            &self.omega_f, &self.omega_t, &self.omega_re, &self.omega_im,
        ];
        if per_bus.iter().any(|v| v.len() != n) || per_branch.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension(format!(
                "dual solution does not match case with {n} buses / {m} branches"
            )));
        }
        Ok(())
    }
}

/// Violation summary of one constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyResidual {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub worst_index: usize,
}

impl FamilyResidual {
    fn from_abs(vals: &[f64]) -> Self {
        let mut max_abs = 0.0;
        let mut worst = 0;
        let mut sum = 0.0;
        for (i, &v) in vals.iter().enumerate() {
            let a = v.abs();
            sum += a;
            if a > max_abs {
                max_abs = a;
                worst = i;
            }
        }
        FamilyResidual {
            max_abs,
            mean_abs: if vals.is_empty() { 0.0 } else { sum / vals.len() as f64 },
            worst_index: worst,
        }
    }
}

/// Per-family violation magnitudes. All entries are nonnegative; equality
/// families report absolute residuals, inequality and cone families report
/// deficits (zero when satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub families: Vec<(String, FamilyResidual)>,
}

impl ResidualReport {
    pub fn max_violation(&self) -> f64 {
        self.families
            .iter()
            .map(|(_, f)| f.max_abs)
            .fold(0.0, f64::max)
    }

    pub fn family(&self, name: &str) -> Option<&FamilyResidual> {
        self.families
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
    }
}

/// Total generation cost of a primal point.
pub fn primal_objective(case: &CaseData, x: &PrimalSolution) -> f64 {
    case.gens
        .iter()
        .zip(&x.pg)
        .map(|(g, &pg)| g.cost * pg)
        .sum()
}

/// Dual objective: demand-weighted balance duals plus bound terms, minus
/// the thermal-limit terms. Branches without a thermal limit contribute
/// nothing there. Linear in the dual vector; no feasibility is assumed.
pub fn dual_objective(case: &CaseData, loads: &InstanceLoads, y: &DualSolution) -> f64 {
    let mut z = 0.0;
    for i in 0..case.n_bus() {
        let gen = &case.gens[i];
        let bus = &case.buses[i];
        z += loads.p_d[i] * y.lambda_p[i] + loads.q_d[i] * y.lambda_q[i];
        z += gen.p_min * y.mu_pg_lo[i] - gen.p_max * y.mu_pg_hi[i];
        z += gen.q_min * y.mu_qg_lo[i] - gen.q_max * y.mu_qg_hi[i];
        z += bus.v_min * bus.v_min * y.mu_w_lo[i] - bus.v_max * bus.v_max * y.mu_w_hi[i];
    }
    for (e, br) in case.branches.iter().enumerate() {
        if let Some(s_max) = br.s_max {
            z -= s_max * (y.nu_fr_s[e] + y.nu_to_s[e]);
        }
    }
    z
}

/// Residuals of every dual constraint family.
///
/// Equality families report signed-equation magnitudes; the sign family
/// reports negativity deficits of the bound duals; cone families report
/// `max(0, ||tail|| - head)` for the thermal cones and the rotated-cone
/// deficit `max(0, sqrt(re^2 + im^2) - sqrt(2 max(f,0) max(t,0)))`
/// together with head-negativity deficits for the voltage-product cone.
/// Branches without a thermal limit must carry zero thermal duals; any
/// nonzero entry is reported as a violation of the corresponding flow
/// family.
pub fn dual_residuals(
    case: &CaseData,
    constants: &BranchConstants,
    y: &DualSolution,
) -> Result<ResidualReport> {
    y.validate(case)?;
    let n = case.n_bus();
    let m = case.n_branch();

    let mut gen_cost = vec![0.0; n]; // lambda_p + mu_pg_lo - mu_pg_hi = cost
    let mut gen_reactive = vec![0.0; n]; // lambda_q + mu_qg_lo - mu_qg_hi = 0
    for i in 0..n {
        gen_cost[i] = y.lambda_p[i] + y.mu_pg_lo[i] - y.mu_pg_hi[i] - case.gens[i].cost;
        gen_reactive[i] = y.lambda_q[i] + y.mu_qg_lo[i] - y.mu_qg_hi[i];
    }

    // Flow equalities: -lambda_p[from] - lambda_fr_p + nu_fr_p = 0 and the
    // three analogues.
    let mut flow_fr_p = vec![0.0; m];
    let mut flow_fr_q = vec![0.0; m];
    let mut flow_to_p = vec![0.0; m];
    let mut flow_to_q = vec![0.0; m];
    // Per-branch equalities tying the cone tail to the flow duals.
    let mut w_re_eq = vec![0.0; m];
    let mut w_im_eq = vec![0.0; m];
    // Per-bus equality for the lifted voltage variable.
    let mut w_eq = vec![0.0; n];
    for i in 0..n {
        let bus = &case.buses[i];
        w_eq[i] = -bus.g_shunt * y.lambda_p[i] + bus.b_shunt * y.lambda_q[i] + y.mu_w_lo[i]
            - y.mu_w_hi[i];
    }
    for (e, br) in case.branches.iter().enumerate() {
        flow_fr_p[e] = -y.lambda_p[br.from] - y.lambda_fr_p[e] + y.nu_fr_p[e];
        flow_fr_q[e] = -y.lambda_q[br.from] - y.lambda_fr_q[e] + y.nu_fr_q[e];
        flow_to_p[e] = -y.lambda_p[br.to] - y.lambda_to_p[e] + y.nu_to_p[e];
        flow_to_q[e] = -y.lambda_q[br.to] - y.lambda_to_q[e] + y.nu_to_q[e];

        let gm = &constants.gamma[e];
        w_re_eq[e] = gm.pr_fr * y.lambda_fr_p[e]
            + gm.pr_to * y.lambda_to_p[e]
            + gm.qr_fr * y.lambda_fr_q[e]
            + gm.qr_to * y.lambda_to_q[e]
            - br.angle_min.tan() * y.mu_theta_lo[e]
            + br.angle_max.tan() * y.mu_theta_hi[e]
            + y.omega_re[e];
        w_im_eq[e] = gm.pi_fr * y.lambda_fr_p[e]
            + gm.pi_to * y.lambda_to_p[e]
            + gm.qi_fr * y.lambda_fr_q[e]
            + gm.qi_to * y.lambda_to_q[e]
            + y.mu_theta_lo[e]
            - y.mu_theta_hi[e]
            + y.omega_im[e];

        w_eq[br.from] +=
            gm.pw_fr * y.lambda_fr_p[e] + gm.qw_fr * y.lambda_fr_q[e] + y.omega_f[e] / SQRT_2;
        w_eq[br.to] +=
            gm.pw_to * y.lambda_to_p[e] + gm.qw_to * y.lambda_to_q[e] + y.omega_t[e] / SQRT_2;
    }

    // Nonnegativity of the bound duals.
    let mut sign = Vec::with_capacity(8 * n.max(m));
    for v in y
        .mu_pg_lo
        .iter()
        .chain(&y.mu_pg_hi)
        .chain(&y.mu_qg_lo)
        .chain(&y.mu_qg_hi)
        .chain(&y.mu_w_lo)
        .chain(&y.mu_w_hi)
        .chain(&y.mu_theta_lo)
        .chain(&y.mu_theta_hi)
    {
        sign.push((-v).max(0.0));
    }

    // Thermal cones; unlimited branches must carry zero entries.
    let mut thermal = vec![0.0; m];
    for (e, br) in case.branches.iter().enumerate() {
        let deficit = |s: f64, p: f64, q: f64| ((p * p + q * q).sqrt() - s).max(0.0);
        if br.s_max.is_some() {
            thermal[e] = deficit(y.nu_fr_s[e], y.nu_fr_p[e], y.nu_fr_q[e])
                .max(deficit(y.nu_to_s[e], y.nu_to_p[e], y.nu_to_q[e]));
        } else {
            thermal[e] = [
                y.nu_fr_s[e], y.nu_fr_p[e], y.nu_fr_q[e],
                y.nu_to_s[e], y.nu_to_p[e], y.nu_to_q[e],
            ]
            .iter()
            .fold(0.0, |acc, v| acc.max(v.abs()));
        }
    }

    // Rotated cone for the voltage products.
    let mut jabr_cone = vec![0.0; m];
    for e in 0..m {
        let tail = (y.omega_re[e] * y.omega_re[e] + y.omega_im[e] * y.omega_im[e]).sqrt();
        let head = (2.0 * y.omega_f[e].max(0.0) * y.omega_t[e].max(0.0)).sqrt();
        jabr_cone[e] = (tail - head)
            .max((-y.omega_f[e]).max(0.0))
            .max((-y.omega_t[e]).max(0.0))
            .max(0.0);
    }

    Ok(ResidualReport {
        families: vec![
            ("gen_cost".into(), FamilyResidual::from_abs(&gen_cost)),
            ("gen_reactive".into(), FamilyResidual::from_abs(&gen_reactive)),
            ("flow_fr_p".into(), FamilyResidual::from_abs(&flow_fr_p)),
            ("flow_fr_q".into(), FamilyResidual::from_abs(&flow_fr_q)),
            ("flow_to_p".into(), FamilyResidual::from_abs(&flow_to_p)),
            ("flow_to_q".into(), FamilyResidual::from_abs(&flow_to_q)),
            ("w_eq".into(), FamilyResidual::from_abs(&w_eq)),
            ("w_re_eq".into(), FamilyResidual::from_abs(&w_re_eq)),
            ("w_im_eq".into(), FamilyResidual::from_abs(&w_im_eq)),
            ("sign".into(), FamilyResidual::from_abs(&sign)),
            ("thermal_cone".into(), FamilyResidual::from_abs(&thermal)),
            ("jabr_cone".into(), FamilyResidual::from_abs(&jabr_cone)),
        ],
    })
}

/// Residuals of every primal constraint family: nodal balance, the
/// linear flow forms, thermal cones, angle-difference bounds, the rotated
/// voltage-product cone, and the box bounds.
pub fn primal_residuals(
    case: &CaseData,
    constants: &BranchConstants,
    loads: &InstanceLoads,
    x: &PrimalSolution,
) -> Result<ResidualReport> {
    x.validate(case)?;
    loads.validate(case)?;
    let n = case.n_bus();
    let m = case.n_branch();

    let mut balance_p = vec![0.0; n];
    let mut balance_q = vec![0.0; n];
    for i in 0..n {
        let bus = &case.buses[i];
        balance_p[i] = x.pg[i] - loads.p_d[i] - bus.g_shunt * x.w[i];
        balance_q[i] = x.qg[i] - loads.q_d[i] + bus.b_shunt * x.w[i];
    }
    for (e, br) in case.branches.iter().enumerate() {
        balance_p[br.from] -= x.p_fr[e];
        balance_q[br.from] -= x.q_fr[e];
        balance_p[br.to] -= x.p_to[e];
        balance_q[br.to] -= x.q_to[e];
    }

    let mut ohm_fr_p = vec![0.0; m];
    let mut ohm_fr_q = vec![0.0; m];
    let mut ohm_to_p = vec![0.0; m];
    let mut ohm_to_q = vec![0.0; m];
    let mut thermal = vec![0.0; m];
    let mut angle = vec![0.0; m];
    let mut jabr = vec![0.0; m];
    for (e, br) in case.branches.iter().enumerate() {
        let gm = &constants.gamma[e];
        let (wi, wj) = (x.w[br.from], x.w[br.to]);
        let (wre, wim) = (x.w_re[e], x.w_im[e]);
        ohm_fr_p[e] = x.p_fr[e] - gm.p_fr(wi, wre, wim);
        ohm_fr_q[e] = x.q_fr[e] - gm.q_fr(wi, wre, wim);
        ohm_to_p[e] = x.p_to[e] - gm.p_to(wj, wre, wim);
        ohm_to_q[e] = x.q_to[e] - gm.q_to(wj, wre, wim);

        if let Some(s_max) = br.s_max {
            let fr = (x.p_fr[e].hypot(x.q_fr[e]) - s_max).max(0.0);
            let to = (x.p_to[e].hypot(x.q_to[e]) - s_max).max(0.0);
            thermal[e] = fr.max(to);
        }

        let lo = (br.angle_min.tan() * wre - wim).max(0.0);
        let hi = (wim - br.angle_max.tan() * wre).max(0.0);
        angle[e] = lo.max(hi);

        let tail = wre.hypot(wim);
        let head = (wi.max(0.0) * wj.max(0.0)).sqrt();
        jabr[e] = (tail - head)
            .max((-wi).max(0.0))
            .max((-wj).max(0.0))
            .max(0.0);
    }

    let mut bounds_w = vec![0.0; n];
    let mut bounds_pg = vec![0.0; n];
    let mut bounds_qg = vec![0.0; n];
    for i in 0..n {
        let bus = &case.buses[i];
        let gen = &case.gens[i];
        bounds_w[i] = (bus.v_min * bus.v_min - x.w[i])
            .max(x.w[i] - bus.v_max * bus.v_max)
            .max(0.0);
        bounds_pg[i] = (gen.p_min - x.pg[i]).max(x.pg[i] - gen.p_max).max(0.0);
        bounds_qg[i] = (gen.q_min - x.qg[i]).max(x.qg[i] - gen.q_max).max(0.0);
    }

    Ok(ResidualReport {
        families: vec![
            ("balance_p".into(), FamilyResidual::from_abs(&balance_p)),
            ("balance_q".into(), FamilyResidual::from_abs(&balance_q)),
            ("ohm_fr_p".into(), FamilyResidual::from_abs(&ohm_fr_p)),
            ("ohm_fr_q".into(), FamilyResidual::from_abs(&ohm_fr_q)),
            ("ohm_to_p".into(), FamilyResidual::from_abs(&ohm_to_p)),
            ("ohm_to_q".into(), FamilyResidual::from_abs(&ohm_to_q)),
            ("thermal".into(), FamilyResidual::from_abs(&thermal)),
            ("angle".into(), FamilyResidual::from_abs(&angle)),
            ("jabr".into(), FamilyResidual::from_abs(&jabr)),
            ("bounds_w".into(), FamilyResidual::from_abs(&bounds_w)),
            ("bounds_pg".into(), FamilyResidual::from_abs(&bounds_pg)),
            ("bounds_qg".into(), FamilyResidual::from_abs(&bounds_qg)),
        ],
    })
}

/// Relative shortfall `(z_ref - z_hat) / |z_ref|` of a bound against a
/// reference objective.
pub fn optimality_gap(z_ref: f64, z_hat: f64) -> Result<f64> {
    if z_ref == 0.0 {
        return Err(Error::UndefinedGap);
    }
    Ok((z_ref - z_hat) / z_ref.abs())
}

/// Inputs below this are clamped before taking logs, so zero entries do
/// not collapse the mean.
pub const GEOMEAN_FLOOR: f64 = 1e-12;

/// Geometric mean via the mean of logs. Returns the mean and how many
/// inputs had to be clamped up to [`GEOMEAN_FLOOR`]. Negative inputs are a
/// domain error; an empty slice too.
pub fn geometric_mean(values: &[f64]) -> Result<(f64, usize)> {
    if values.is_empty() {
        return Err(Error::Domain("geometric mean of no values".into()));
    }
    let mut clamped = 0usize;
    let mut log_sum = 0.0;
    for &v in values {
        if v < 0.0 {
            return Err(Error::Domain(format!("negative value {v} in geometric mean")));
        }
        let v = if v < GEOMEAN_FLOOR {
            clamped += 1;
            GEOMEAN_FLOOR
        } else {
            v
        };
        log_sum += v.ln();
    }
    Ok(((log_sum / values.len() as f64).exp(), clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::{complete, CompletionConfig, IndependentVars};
    use crate::grid::{derive_branch_constants, parse_matpower};
    use crate::io::case14_fixture;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (CaseData, BranchConstants, InstanceLoads) {
        let case = parse_matpower(crate::CASE14_TEXT).unwrap();
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        (case, constants, loads)
    }

    #[test]
    fn dual_objective_is_zero_at_zero() {
        let (case, _, loads) = setup();
        let y = DualSolution::zeros(&case);
        assert_eq!(dual_objective(&case, &loads, &y), 0.0);
    }

    #[test]
    fn dual_objective_single_surviving_term() {
        // Only the load term survives when just lambda_p is set.
        let (case, _, loads) = setup();
        let mut y = DualSolution::zeros(&case);
        for (i, v) in y.lambda_p.iter_mut().enumerate() {
            *v = case.gens[i].cost;
        }
        let expected: f64 = loads
            .p_d
            .iter()
            .zip(&case.gens)
            .map(|(p, g)| p * g.cost)
            .sum();
        assert!((dual_objective(&case, &loads, &y) - expected).abs() <= 1e-12);
    }

    #[test]
    fn dual_objective_is_linear() {
        let (case, _, loads) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = CompletionConfig::default();
        for _ in 0..16 {
            let y1 = {
                let xi = crate::selftest::random_xi(&case, &config, &mut rng);
                let constants = derive_branch_constants(&case).unwrap();
                complete(&case, &constants, &loads, &xi, &config).unwrap()
            };
            let y2 = DualSolution::zeros(&case);
            let (a, b) = (rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0);
            let mut combo = y1.clone();
            let mix = |u: &mut Vec<f64>, v: &[f64]| {
                for (x, y) in u.iter_mut().zip(v) {
                    *x = a * *x + b * y;
                }
            };
            macro_rules! mix_all {
                ($($field:ident),*) => { $( mix(&mut combo.$field, &y2.$field); )* };
            }
            mix_all!(
                lambda_p, lambda_q, mu_pg_lo, mu_pg_hi, mu_qg_lo, mu_qg_hi, mu_w_lo, mu_w_hi,
                lambda_fr_p, lambda_fr_q, lambda_to_p, lambda_to_q, mu_theta_lo, mu_theta_hi,
                nu_fr_s, nu_fr_p, nu_fr_q, nu_to_s, nu_to_p, nu_to_q,
                omega_f, omega_t, omega_re, omega_im
            );
            let z1 = dual_objective(&case, &loads, &y1);
            let z2 = dual_objective(&case, &loads, &y2);
            let zc = dual_objective(&case, &loads, &combo);
            assert!(
                (zc - (a * z1 + b * z2)).abs() <= 1e-10 * (1.0 + zc.abs()),
                "linearity broken: {zc} vs {}",
                a * z1 + b * z2
            );
        }
    }

    #[test]
    fn dual_residuals_at_zero_report_cost_row() {
        let (case, constants, _) = setup();
        let y = DualSolution::zeros(&case);
        let report = dual_residuals(&case, &constants, &y).unwrap();
        let max_cost = case.gens.iter().map(|g| g.cost).fold(0.0, f64::max);
        let fam = report.family("gen_cost").unwrap();
        assert_eq!(fam.max_abs, max_cost);
        assert_eq!(report.family("sign").unwrap().max_abs, 0.0);
    }

    #[test]
    fn negative_cone_head_is_a_deficit() {
        let (case, constants, _) = setup();
        let mut y = DualSolution::zeros(&case);
        y.nu_fr_s[0] = -1.0;
        let report = dual_residuals(&case, &constants, &y).unwrap();
        assert!(report.family("thermal_cone").unwrap().max_abs >= 1.0);
    }

    #[test]
    fn primal_objective_examples() {
        let (case, _, _) = setup();
        let mut x = PrimalSolution {
            pg: vec![0.0; case.n_bus()],
            qg: vec![0.0; case.n_bus()],
            w: vec![1.0; case.n_bus()],
            w_re: vec![1.0; case.n_branch()],
            w_im: vec![0.0; case.n_branch()],
            p_fr: vec![0.0; case.n_branch()],
            p_to: vec![0.0; case.n_branch()],
            q_fr: vec![0.0; case.n_branch()],
            q_to: vec![0.0; case.n_branch()],
        };
        assert_eq!(primal_objective(&case, &x), 0.0);
        x.pg[0] = 1.0;
        assert_eq!(primal_objective(&case, &x), case.gens[0].cost);
    }

    #[test]
    fn fixture_primal_matches_reference_objective() {
        let (case, constants, _) = setup();
        let fx = case14_fixture().unwrap();
        let report = primal_residuals(&case, &constants, &fx.loads, &fx.primal).unwrap();
        assert!(report.max_violation() <= 1e-6, "{:?}", report.families);
        let obj = primal_objective(&case, &fx.primal);
        assert!((obj - fx.primal_objective).abs() <= 1e-8 * (1.0 + obj.abs()));
    }

    #[test]
    fn zero_primal_with_loads_violates_balance_by_demand() {
        let (case, constants, loads) = setup();
        let x = PrimalSolution {
            pg: vec![0.0; case.n_bus()],
            qg: vec![0.0; case.n_bus()],
            w: vec![0.0; case.n_bus()],
            w_re: vec![0.0; case.n_branch()],
            w_im: vec![0.0; case.n_branch()],
            p_fr: vec![0.0; case.n_branch()],
            p_to: vec![0.0; case.n_branch()],
            q_fr: vec![0.0; case.n_branch()],
            q_to: vec![0.0; case.n_branch()],
        };
        let report = primal_residuals(&case, &constants, &loads, &x).unwrap();
        let max_pd = loads.p_d.iter().cloned().fold(0.0, f64::max);
        assert_eq!(report.family("balance_p").unwrap().max_abs, max_pd);
        // On the cone boundary there is no deficit.
        let x_boundary = PrimalSolution {
            w: vec![1.0; case.n_bus()],
            w_re: vec![1.0; case.n_branch()],
            ..x
        };
        let report = primal_residuals(&case, &constants, &loads, &x_boundary).unwrap();
        assert_eq!(report.family("jabr").unwrap().max_abs, 0.0);
    }

    #[test]
    fn weak_duality_against_fixture_for_any_completion() {
        let (case, constants, _) = setup();
        let fx = case14_fixture().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for config in crate::selftest::all_configs() {
            for _ in 0..50 {
                let xi = crate::selftest::random_xi(&case, &config, &mut rng);
                let y = complete(&case, &constants, &fx.loads, &xi, &config).unwrap();
                let z = dual_objective(&case, &fx.loads, &y);
                assert!(z <= fx.primal_objective + 1e-6);
            }
        }
    }

    #[test]
    fn residuals_respond_only_to_their_family() {
        let (case, constants, loads) = setup();
        let config = CompletionConfig::default();
        let xi = IndependentVars::zeros(&case, &config);
        let y0 = complete(&case, &constants, &loads, &xi, &config).unwrap();
        let base = dual_residuals(&case, &constants, &y0).unwrap();
        // Perturb one thermal head component: only the flow equality that
        // contains it and the thermal cone can move.
        let mut y = y0.clone();
        y.nu_fr_p[3] += 1e-3;
        let moved = dual_residuals(&case, &constants, &y).unwrap();
        for ((name, a), (_, b)) in base.families.iter().zip(&moved.families) {
            let delta = (a.max_abs - b.max_abs).abs();
            match name.as_str() {
                "flow_fr_p" | "thermal_cone" => {
                    assert!(delta > 0.0, "{name} should have moved")
                }
                _ => assert!(delta <= 1e-15, "{name} moved by {delta}"),
            }
        }
    }

    #[test]
    fn gap_examples_and_errors() {
        assert_eq!(optimality_gap(100.0, 99.0).unwrap(), 0.01);
        assert_eq!(optimality_gap(42.0, 42.0).unwrap(), 0.0);
        assert!(matches!(optimality_gap(0.0, 1.0), Err(Error::UndefinedGap)));
        // Monotone decreasing in the bound.
        let g1 = optimality_gap(50.0, 40.0).unwrap();
        let g2 = optimality_gap(50.0, 45.0).unwrap();
        assert!(g2 < g1);
    }

    #[test]
    fn geometric_mean_examples() {
        let (v, clamped) = geometric_mean(&[1.0, 4.0]).unwrap();
        assert!((v - 2.0).abs() <= 1e-12 && clamped == 0);
        let (v, _) = geometric_mean(&[3.7, 3.7, 3.7]).unwrap();
        assert!((v - 3.7).abs() <= 1e-12);
        let (v, _) = geometric_mean(&[1e-8, 1e-2]).unwrap();
        assert!((v - 1e-5).abs() <= 1e-17);
        assert!(geometric_mean(&[-1.0, 2.0]).is_err());
        let (_, clamped) = geometric_mean(&[0.0, 1.0]).unwrap();
        assert_eq!(clamped, 1);
    }
}
