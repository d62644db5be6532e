//! Tape builders for the bound pipeline: independent variables in, completed
//! dual solution and objective out. Used by training and by the dual-ascent
//! baseline; the plain vector implementation in [`crate::completion`] is the
//! reference these graphs are cross-checked against.

use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::sync::Arc;

use crate::autodiff::{NodeId, Tape};
use crate::completion::{CompletionConfig, FlowChoice, IndependentVars, OmegaBlock, OmegaRepr};
use crate::grid::{BranchConstants, CaseData};
use crate::soc::DualSolution;
use crate::{Error, Result};

/// Small positive offset keeping the rectangular-repair denominator away
/// from an exact zero at the cone origin; far below every tolerance in use.
const RECT_DENOM_OFFSET: f64 = 1e-30;

/// Node handles of the independent-variable blocks.
#[derive(Debug, Clone, Copy)]
pub struct XiNodes {
    pub lambda_p: NodeId,
    pub lambda_q: NodeId,
    pub flow_fr_p: NodeId,
    pub flow_fr_q: NodeId,
    pub flow_to_p: NodeId,
    pub flow_to_q: NodeId,
    pub mu_theta_lo: NodeId,
    pub mu_theta_hi: NodeId,
    pub omega: OmegaNodes,
}

#[derive(Debug, Clone, Copy)]
pub enum OmegaNodes {
    Polar { phi: NodeId },
    Rectangular { f: NodeId, t: NodeId },
}

/// Node handles of every block of the completed dual solution.
#[derive(Debug, Clone, Copy)]
pub struct DualNodes {
    pub lambda_p: NodeId,
    pub lambda_q: NodeId,
    pub mu_pg_lo: NodeId,
    pub mu_pg_hi: NodeId,
    pub mu_qg_lo: NodeId,
    pub mu_qg_hi: NodeId,
    pub mu_w_lo: NodeId,
    pub mu_w_hi: NodeId,
    pub lambda_fr_p: NodeId,
    pub lambda_fr_q: NodeId,
    pub lambda_to_p: NodeId,
    pub lambda_to_q: NodeId,
    pub mu_theta_lo: NodeId,
    pub mu_theta_hi: NodeId,
    pub nu_fr_s: NodeId,
    pub nu_fr_p: NodeId,
    pub nu_fr_q: NodeId,
    pub nu_to_s: NodeId,
    pub nu_to_p: NodeId,
    pub nu_to_q: NodeId,
    pub omega_f: NodeId,
    pub omega_t: NodeId,
    pub omega_re: NodeId,
    pub omega_im: NodeId,
}

/// Precomputed constant vectors of one case, shared across graph builds.
struct CaseConsts {
    from_idx: Arc<Vec<usize>>,
    to_idx: Arc<Vec<usize>>,
    gamma_pr_fr: Arc<Vec<f64>>,
    gamma_pr_to: Arc<Vec<f64>>,
    gamma_qr_fr: Arc<Vec<f64>>,
    gamma_qr_to: Arc<Vec<f64>>,
    gamma_pi_fr: Arc<Vec<f64>>,
    gamma_pi_to: Arc<Vec<f64>>,
    gamma_qi_fr: Arc<Vec<f64>>,
    gamma_qi_to: Arc<Vec<f64>>,
    gamma_pw_fr: Arc<Vec<f64>>,
    gamma_pw_to: Arc<Vec<f64>>,
    gamma_qw_fr: Arc<Vec<f64>>,
    gamma_qw_to: Arc<Vec<f64>>,
    neg_tan_lo: Arc<Vec<f64>>,
    tan_hi: Arc<Vec<f64>>,
    neg_g_shunt: Arc<Vec<f64>>,
    b_shunt: Arc<Vec<f64>>,
    cost: Vec<f64>,
    p_min: Vec<f64>,
    p_max: Vec<f64>,
    q_min: Vec<f64>,
    q_max: Vec<f64>,
    v_min2: Vec<f64>,
    v_max2: Vec<f64>,
    s_max: Vec<f64>,
}

impl CaseConsts {
    fn build(case: &CaseData, constants: &BranchConstants) -> Result<Self> {
        let mut s_max = Vec::with_capacity(case.n_branch());
        for (e, br) in case.branches.iter().enumerate() {
            match br.s_max {
                Some(s) => s_max.push(s),
                None => {
                    return Err(Error::InfeasibleConfig(format!(
                        "branch {e} has no thermal limit; the differentiable bound \
                         pipeline requires limits on every branch"
                    )))
                }
            }
        }
        let g = &constants.gamma;
        let vecf = |f: &mut dyn FnMut(usize) -> f64| -> Arc<Vec<f64>> {
            Arc::new((0..case.n_branch()).map(f).collect())
        };
        Ok(CaseConsts {
            from_idx: Arc::new(case.branches.iter().map(|b| b.from).collect()),
            to_idx: Arc::new(case.branches.iter().map(|b| b.to).collect()),
            gamma_pr_fr: vecf(&mut |e| g[e].pr_fr),
            gamma_pr_to: vecf(&mut |e| g[e].pr_to),
            gamma_qr_fr: vecf(&mut |e| g[e].qr_fr),
            gamma_qr_to: vecf(&mut |e| g[e].qr_to),
            gamma_pi_fr: vecf(&mut |e| g[e].pi_fr),
            gamma_pi_to: vecf(&mut |e| g[e].pi_to),
            gamma_qi_fr: vecf(&mut |e| g[e].qi_fr),
            gamma_qi_to: vecf(&mut |e| g[e].qi_to),
            gamma_pw_fr: vecf(&mut |e| g[e].pw_fr),
            gamma_pw_to: vecf(&mut |e| g[e].pw_to),
            gamma_qw_fr: vecf(&mut |e| g[e].qw_fr),
            gamma_qw_to: vecf(&mut |e| g[e].qw_to),
            neg_tan_lo: vecf(&mut |e| -case.branches[e].angle_min.tan()),
            tan_hi: vecf(&mut |e| case.branches[e].angle_max.tan()),
            neg_g_shunt: Arc::new(case.buses.iter().map(|b| -b.g_shunt).collect()),
            b_shunt: Arc::new(case.buses.iter().map(|b| b.b_shunt).collect()),
            cost: case.gens.iter().map(|g| g.cost).collect(),
            p_min: case.gens.iter().map(|g| g.p_min).collect(),
            p_max: case.gens.iter().map(|g| g.p_max).collect(),
            q_min: case.gens.iter().map(|g| g.q_min).collect(),
            q_max: case.gens.iter().map(|g| g.q_max).collect(),
            v_min2: case.buses.iter().map(|b| b.v_min * b.v_min).collect(),
            v_max2: case.buses.iter().map(|b| b.v_max * b.v_max).collect(),
            s_max,
        })
    }
}

/// Append the completion to a tape, mapping the independent-variable nodes
/// to the full dual vector.
///
/// Every branch must carry a thermal limit: a branch without one has no
/// thermal dual and its flow duals are pinned, which this differentiable
/// path does not model (the plain [`crate::completion::complete`] does).
pub fn attach_completion(
    tape: &mut Tape,
    case: &CaseData,
    constants: &BranchConstants,
    config: &CompletionConfig,
    xi: &XiNodes,
) -> Result<DualNodes> {
    config.validate()?;
    let cc = CaseConsts::build(case, constants)?;

    // Flow duals in both conventions.
    let lp_from = tape.gather(xi.lambda_p, cc.from_idx.clone());
    let lq_from = tape.gather(xi.lambda_q, cc.from_idx.clone());
    let lp_to = tape.gather(xi.lambda_p, cc.to_idx.clone());
    let lq_to = tape.gather(xi.lambda_q, cc.to_idx.clone());
    let (lam_fr_p, lam_fr_q, lam_to_p, lam_to_q, nu_fr_p, nu_fr_q, nu_to_p, nu_to_q) =
        match config.flow_choice {
            FlowChoice::LambdaFlows => {
                let nu_fr_p = tape.add(lp_from, xi.flow_fr_p);
                let nu_fr_q = tape.add(lq_from, xi.flow_fr_q);
                let nu_to_p = tape.add(lp_to, xi.flow_to_p);
                let nu_to_q = tape.add(lq_to, xi.flow_to_q);
                (
                    xi.flow_fr_p, xi.flow_fr_q, xi.flow_to_p, xi.flow_to_q,
                    nu_fr_p, nu_fr_q, nu_to_p, nu_to_q,
                )
            }
            FlowChoice::NuFlows => {
                let lam_fr_p = tape.sub(xi.flow_fr_p, lp_from);
                let lam_fr_q = tape.sub(xi.flow_fr_q, lq_from);
                let lam_to_p = tape.sub(xi.flow_to_p, lp_to);
                let lam_to_q = tape.sub(xi.flow_to_q, lq_to);
                (
                    lam_fr_p, lam_fr_q, lam_to_p, lam_to_q,
                    xi.flow_fr_p, xi.flow_fr_q, xi.flow_to_p, xi.flow_to_q,
                )
            }
        };

    // Thermal-cone heads on the boundary.
    let nu_fr_s = {
        let p2 = tape.square(nu_fr_p);
        let q2 = tape.square(nu_fr_q);
        let s = tape.add(p2, q2);
        tape.sqrt(s)
    };
    let nu_to_s = {
        let p2 = tape.square(nu_to_p);
        let q2 = tape.square(nu_to_q);
        let s = tape.add(p2, q2);
        tape.sqrt(s)
    };

    // Cone tails from the per-branch equalities.
    let omega_re = {
        let t1 = tape.mul_coeff(cc.gamma_pr_fr.clone(), lam_fr_p);
        let t2 = tape.mul_coeff(cc.gamma_pr_to.clone(), lam_to_p);
        let t3 = tape.mul_coeff(cc.gamma_qr_fr.clone(), lam_fr_q);
        let t4 = tape.mul_coeff(cc.gamma_qr_to.clone(), lam_to_q);
        let t5 = tape.mul_coeff(cc.neg_tan_lo.clone(), xi.mu_theta_lo);
        let t6 = tape.mul_coeff(cc.tan_hi.clone(), xi.mu_theta_hi);
        let s12 = tape.add(t1, t2);
        let s34 = tape.add(t3, t4);
        let s56 = tape.add(t5, t6);
        let s = tape.add(s12, s34);
        let s = tape.add(s, s56);
        tape.neg(s)
    };
    let omega_im = {
        let t1 = tape.mul_coeff(cc.gamma_pi_fr.clone(), lam_fr_p);
        let t2 = tape.mul_coeff(cc.gamma_pi_to.clone(), lam_to_p);
        let t3 = tape.mul_coeff(cc.gamma_qi_fr.clone(), lam_fr_q);
        let t4 = tape.mul_coeff(cc.gamma_qi_to.clone(), lam_to_q);
        let s12 = tape.add(t1, t2);
        let s34 = tape.add(t3, t4);
        let s = tape.add(s12, s34);
        let s = tape.add(s, xi.mu_theta_lo);
        let s = tape.sub(s, xi.mu_theta_hi);
        tape.neg(s)
    };
    let k = {
        let r2 = tape.square(omega_re);
        let i2 = tape.square(omega_im);
        tape.add(r2, i2)
    };

    // Cone heads on the boundary, in the configured representation.
    let (omega_f, omega_t) = match xi.omega {
        OmegaNodes::Polar { phi } => {
            let two_phi = tape.scale(phi, 2.0);
            let s2 = tape.sin(two_phi);
            let ratio = tape.div(k, s2);
            let rho = tape.sqrt(ratio);
            let c = tape.cos(phi);
            let s = tape.sin(phi);
            (tape.mul(rho, c), tape.mul(rho, s))
        }
        OmegaNodes::Rectangular { f, t } => {
            let sum_ft = tape.add(f, t);
            let diff = tape.sub(f, t);
            let diff2 = tape.square(diff);
            let k2 = tape.scale(k, 2.0);
            let disc = tape.add(diff2, k2);
            let root = tape.sqrt(disc);
            let den = tape.add(sum_ft, root);
            let den = tape.offset(den, RECT_DENOM_OFFSET);
            let ft = tape.mul(f, t);
            let ft2 = tape.scale(ft, 2.0);
            let num = tape.sub(k, ft2);
            let delta = tape.div(num, den);
            (tape.add(f, delta), tape.add(t, delta))
        }
    };

    // Generation-bound duals.
    let cost = tape.constant(cc.cost.clone());
    let c_minus_lp = tape.sub(cost, xi.lambda_p);
    let mu_pg_lo = tape.max0(c_minus_lp);
    let lp_minus_c = tape.neg(c_minus_lp);
    let mu_pg_hi = tape.max0(lp_minus_c);
    let neg_lq = tape.neg(xi.lambda_q);
    let mu_qg_lo = tape.max0(neg_lq);
    let mu_qg_hi = tape.max0(xi.lambda_q);

    // Lifted-voltage equality remainder per bus, absorbed by the
    // voltage-bound duals.
    let remainder = {
        let shunt_p = tape.mul_coeff(cc.neg_g_shunt.clone(), xi.lambda_p);
        let shunt_q = tape.mul_coeff(cc.b_shunt.clone(), xi.lambda_q);
        let base = tape.add(shunt_p, shunt_q);
        let fr_p = tape.mul_coeff(cc.gamma_pw_fr.clone(), lam_fr_p);
        let fr_q = tape.mul_coeff(cc.gamma_qw_fr.clone(), lam_fr_q);
        let fr_w = tape.scale(omega_f, 1.0 / SQRT_2);
        let fr_sum = tape.add(fr_p, fr_q);
        let fr_sum = tape.add(fr_sum, fr_w);
        let fr_bus = tape.scatter_sum(fr_sum, cc.from_idx.clone(), case.n_bus());
        let to_p = tape.mul_coeff(cc.gamma_pw_to.clone(), lam_to_p);
        let to_q = tape.mul_coeff(cc.gamma_qw_to.clone(), lam_to_q);
        let to_w = tape.scale(omega_t, 1.0 / SQRT_2);
        let to_sum = tape.add(to_p, to_q);
        let to_sum = tape.add(to_sum, to_w);
        let to_bus = tape.scatter_sum(to_sum, cc.to_idx.clone(), case.n_bus());
        let s = tape.add(base, fr_bus);
        tape.add(s, to_bus)
    };
    let mu_w_hi = tape.max0(remainder);
    let neg_rem = tape.neg(remainder);
    let mu_w_lo = tape.max0(neg_rem);

    Ok(DualNodes {
        lambda_p: xi.lambda_p,
        lambda_q: xi.lambda_q,
        mu_pg_lo,
        mu_pg_hi,
        mu_qg_lo,
        mu_qg_hi,
        mu_w_lo,
        mu_w_hi,
        lambda_fr_p: lam_fr_p,
        lambda_fr_q: lam_fr_q,
        lambda_to_p: lam_to_p,
        lambda_to_q: lam_to_q,
        mu_theta_lo: xi.mu_theta_lo,
        mu_theta_hi: xi.mu_theta_hi,
        nu_fr_s,
        nu_fr_p,
        nu_fr_q,
        nu_to_s,
        nu_to_p,
        nu_to_q,
        omega_f,
        omega_t,
        omega_re,
        omega_im,
    })
}

/// Append the dual objective to a tape. `loads_p` / `loads_q` are per-bus
/// nodes (typically inputs).
pub fn attach_dual_objective(
    tape: &mut Tape,
    case: &CaseData,
    constants: &BranchConstants,
    loads_p: NodeId,
    loads_q: NodeId,
    dual: &DualNodes,
) -> Result<NodeId> {
    let cc = CaseConsts::build(case, constants)?;
    let p_min = tape.constant(cc.p_min.clone());
    let p_max = tape.constant(cc.p_max.clone());
    let q_min = tape.constant(cc.q_min.clone());
    let q_max = tape.constant(cc.q_max.clone());
    let v_min2 = tape.constant(cc.v_min2.clone());
    let v_max2 = tape.constant(cc.v_max2.clone());
    let s_max = tape.constant(cc.s_max.clone());

    let t_load_p = tape.dot(loads_p, dual.lambda_p);
    let t_load_q = tape.dot(loads_q, dual.lambda_q);
    let t_pg_lo = tape.dot(p_min, dual.mu_pg_lo);
    let t_pg_hi = tape.dot(p_max, dual.mu_pg_hi);
    let t_qg_lo = tape.dot(q_min, dual.mu_qg_lo);
    let t_qg_hi = tape.dot(q_max, dual.mu_qg_hi);
    let t_w_lo = tape.dot(v_min2, dual.mu_w_lo);
    let t_w_hi = tape.dot(v_max2, dual.mu_w_hi);
    let nu_s = tape.add(dual.nu_fr_s, dual.nu_to_s);
    let t_thermal = tape.dot(s_max, nu_s);

    let mut z = tape.add(t_load_p, t_load_q);
    z = tape.add(z, t_pg_lo);
    z = tape.sub(z, t_pg_hi);
    z = tape.add(z, t_qg_lo);
    z = tape.sub(z, t_qg_hi);
    z = tape.add(z, t_w_lo);
    z = tape.sub(z, t_w_hi);
    z = tape.sub(z, t_thermal);
    Ok(z)
}

/// A standalone bound pipeline with the independent variables as tape
/// inputs; used by the dual-ascent baseline and by the cross-checks.
pub struct BoundGraph {
    pub tape: Tape,
    pub config: CompletionConfig,
    pub loads_p: NodeId,
    pub loads_q: NodeId,
    pub xi: XiNodes,
    pub dual: DualNodes,
    pub objective: NodeId,
    n_bus: usize,
    n_branch: usize,
}

impl BoundGraph {
    pub fn build(
        case: &CaseData,
        constants: &BranchConstants,
        config: &CompletionConfig,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let n = case.n_bus();
        let m = case.n_branch();
        let loads_p = tape.input(n);
        let loads_q = tape.input(n);
        let xi = XiNodes {
            lambda_p: tape.input(n),
            lambda_q: tape.input(n),
            flow_fr_p: tape.input(m),
            flow_fr_q: tape.input(m),
            flow_to_p: tape.input(m),
            flow_to_q: tape.input(m),
            mu_theta_lo: tape.input(m),
            mu_theta_hi: tape.input(m),
            omega: match config.omega_repr {
                OmegaRepr::Polar => OmegaNodes::Polar { phi: tape.input(m) },
                OmegaRepr::Rectangular => OmegaNodes::Rectangular {
                    f: tape.input(m),
                    t: tape.input(m),
                },
            },
        };
        let dual = attach_completion(&mut tape, case, constants, config, &xi)?;
        let objective = attach_dual_objective(&mut tape, case, constants, loads_p, loads_q, &dual)?;
        Ok(BoundGraph {
            tape,
            config: *config,
            loads_p,
            loads_q,
            xi,
            dual,
            objective,
            n_bus: n,
            n_branch: m,
        })
    }

    /// Load instance demands into the graph inputs.
    pub fn set_loads(&mut self, p_d: &[f64], q_d: &[f64]) {
        self.tape.set_input(self.loads_p, p_d);
        self.tape.set_input(self.loads_q, q_d);
    }

    /// Load independent variables into the graph inputs.
    pub fn set_xi(&mut self, xi: &IndependentVars) {
        self.tape.set_input(self.xi.lambda_p, &xi.lambda_p);
        self.tape.set_input(self.xi.lambda_q, &xi.lambda_q);
        self.tape.set_input(self.xi.flow_fr_p, &xi.flow.fr_p);
        self.tape.set_input(self.xi.flow_fr_q, &xi.flow.fr_q);
        self.tape.set_input(self.xi.flow_to_p, &xi.flow.to_p);
        self.tape.set_input(self.xi.flow_to_q, &xi.flow.to_q);
        self.tape.set_input(self.xi.mu_theta_lo, &xi.mu_theta_lo);
        self.tape.set_input(self.xi.mu_theta_hi, &xi.mu_theta_hi);
        match (&self.xi.omega, &xi.omega) {
            (OmegaNodes::Polar { phi }, OmegaBlock::Polar { phi: v }) => {
                self.tape.set_input(*phi, v);
            }
            (OmegaNodes::Rectangular { f, t }, OmegaBlock::Rectangular { f: fv, t: tv }) => {
                self.tape.set_input(*f, fv);
                self.tape.set_input(*t, tv);
            }
            _ => panic!("omega block does not match graph configuration"),
        }
    }

    /// Evaluate the bound at the currently loaded inputs.
    pub fn forward(&mut self) -> Result<f64> {
        self.tape.forward()?;
        Ok(self.tape.value(self.objective)[0])
    }

    /// Gradient of the bound with respect to the independent variables;
    /// call after `forward`.
    pub fn backward_xi(&mut self) -> Result<IndependentVars> {
        self.tape.backward(self.objective)?;
        let g = |id: NodeId| self.tape.adjoint(id).to_vec();
        Ok(IndependentVars {
            lambda_p: g(self.xi.lambda_p),
            lambda_q: g(self.xi.lambda_q),
            flow: crate::completion::FlowBlock {
                fr_p: g(self.xi.flow_fr_p),
                fr_q: g(self.xi.flow_fr_q),
                to_p: g(self.xi.flow_to_p),
                to_q: g(self.xi.flow_to_q),
            },
            mu_theta_lo: g(self.xi.mu_theta_lo),
            mu_theta_hi: g(self.xi.mu_theta_hi),
            omega: match self.xi.omega {
                OmegaNodes::Polar { phi } => OmegaBlock::Polar { phi: g(phi) },
                OmegaNodes::Rectangular { f, t } => OmegaBlock::Rectangular {
                    f: g(f),
                    t: g(t),
                },
            },
        })
    }

    /// Read the completed dual solution out of the tape; call after
    /// `forward`.
    pub fn dual_solution(&self) -> DualSolution {
        let v = |id: NodeId| self.tape.value(id).to_vec();
        debug_assert_eq!(self.tape.value(self.dual.lambda_p).len(), self.n_bus);
        debug_assert_eq!(self.tape.value(self.dual.omega_f).len(), self.n_branch);
        DualSolution {
            lambda_p: v(self.dual.lambda_p),
            lambda_q: v(self.dual.lambda_q),
            mu_pg_lo: v(self.dual.mu_pg_lo),
            mu_pg_hi: v(self.dual.mu_pg_hi),
            mu_qg_lo: v(self.dual.mu_qg_lo),
            mu_qg_hi: v(self.dual.mu_qg_hi),
            mu_w_lo: v(self.dual.mu_w_lo),
            mu_w_hi: v(self.dual.mu_w_hi),
            lambda_fr_p: v(self.dual.lambda_fr_p),
            lambda_fr_q: v(self.dual.lambda_fr_q),
            lambda_to_p: v(self.dual.lambda_to_p),
            lambda_to_q: v(self.dual.lambda_to_q),
            mu_theta_lo: v(self.dual.mu_theta_lo),
            mu_theta_hi: v(self.dual.mu_theta_hi),
            nu_fr_s: v(self.dual.nu_fr_s),
            nu_fr_p: v(self.dual.nu_fr_p),
            nu_fr_q: v(self.dual.nu_fr_q),
            nu_to_s: v(self.dual.nu_to_s),
            nu_to_p: v(self.dual.nu_to_p),
            nu_to_q: v(self.dual.nu_to_q),
            omega_f: v(self.dual.omega_f),
            omega_t: v(self.dual.omega_t),
            omega_re: v(self.dual.omega_re),
            omega_im: v(self.dual.omega_im),
        }
    }
}

/// Clamp interval bounds for a polar angle head.
pub fn phi_interval(eps_phi: f64) -> (f64, f64) {
    (eps_phi, FRAC_PI_2 - eps_phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::completion::complete;
    use crate::grid::{derive_branch_constants, parse_matpower};
    use crate::selftest::{all_configs, random_xi};
    use crate::soc::{dual_objective, InstanceLoads};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_reproduces_plain_completion_exactly() {
        let case = parse_matpower(crate::CASE14_TEXT).unwrap();
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for config in all_configs() {
            let mut graph = BoundGraph::build(&case, &constants, &config).unwrap();
            graph.set_loads(&loads.p_d, &loads.q_d);
            for _ in 0..20 {
                let xi = random_xi(&case, &config, &mut rng);
                graph.set_xi(&xi);
                let z_graph = graph.forward().unwrap();
                let y_graph = graph.dual_solution();
                let y = complete(&case, &constants, &loads, &xi, &config).unwrap();
                let z = dual_objective(&case, &loads, &y);
                assert!(
                    (z_graph - z).abs() <= 1e-12 * (1.0 + z.abs()),
                    "objective mismatch {z_graph} vs {z}"
                );
                let close = |a: &[f64], b: &[f64], what: &str| {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - y).abs() <= 1e-12, "{what}: {x} vs {y}");
                    }
                };
                close(&y_graph.mu_pg_lo, &y.mu_pg_lo, "mu_pg_lo");
                close(&y_graph.mu_w_hi, &y.mu_w_hi, "mu_w_hi");
                close(&y_graph.nu_fr_s, &y.nu_fr_s, "nu_fr_s");
                close(&y_graph.omega_f, &y.omega_f, "omega_f");
                close(&y_graph.omega_t, &y.omega_t, "omega_t");
                close(&y_graph.omega_re, &y.omega_re, "omega_re");
                close(&y_graph.omega_im, &y.omega_im, "omega_im");
                close(&y_graph.lambda_fr_p, &y.lambda_fr_p, "lambda_fr_p");
            }
        }
    }

    #[test]
    fn bound_gradient_matches_finite_differences() {
        let case = parse_matpower(crate::CASE14_TEXT).unwrap();
        let constants = derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for config in all_configs() {
            let mut graph = BoundGraph::build(&case, &constants, &config).unwrap();
            graph.set_loads(&loads.p_d, &loads.q_d);
            let xi = random_xi(&case, &config, &mut rng);
            graph.set_xi(&xi);
            graph.forward().unwrap();
            let objective = graph.objective;
            for (name, input, len) in [
                ("lambda_p", graph.xi.lambda_p, case.n_bus()),
                ("flow_fr_p", graph.xi.flow_fr_p, case.n_branch()),
                ("mu_theta_lo", graph.xi.mu_theta_lo, case.n_branch()),
            ] {
                let coords: Vec<usize> = (0..len).collect();
                let report =
                    gradcheck(&mut graph.tape, name, input, objective, &coords, 1e-5).unwrap();
                assert!(
                    report.max_smooth_error() <= 1e-5,
                    "{name}: worst {:.2e}",
                    report.max_smooth_error()
                );
            }
        }
    }
}
