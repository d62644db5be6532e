//! Runtime invariant suite over the bundled 14-bus case: one line per
//! check, used by the `selftest` subcommand and exercised in CI.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::completion::{
    complete, extract_independent, CompletionConfig, FlowBlock, FlowChoice, IndependentVars,
    OmegaBlock, OmegaRepr,
};
use crate::graph::BoundGraph;
use crate::grid::{count_independent, derive_branch_constants, parse_matpower, CaseData};
use crate::io::case14_fixture;
use crate::soc::{dual_objective, dual_residuals, primal_objective, primal_residuals, InstanceLoads};
use crate::Result;

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Random prediction with the sign constraints applied; standard-normal
/// entries elsewhere. Used by the diagnostics and the acceptance sweeps.
pub fn random_xi<R: Rng>(case: &CaseData, config: &CompletionConfig, rng: &mut R) -> IndependentVars {
    let n = case.n_bus();
    let m = case.n_branch();
    let mut normal = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let lambda_p = normal(n);
    let lambda_q = normal(n);
    let flow = FlowBlock {
        fr_p: normal(m),
        fr_q: normal(m),
        to_p: normal(m),
        to_q: normal(m),
    };
    let mu_theta_lo: Vec<f64> = normal(m).into_iter().map(f64::abs).collect();
    let mu_theta_hi: Vec<f64> = normal(m).into_iter().map(f64::abs).collect();
    let omega = match config.omega_repr {
        OmegaRepr::Polar => {
            let (lo, hi) = crate::graph::phi_interval(config.eps_phi);
            OmegaBlock::Polar {
                phi: (0..m).map(|_| rng.gen_range(lo..hi)).collect(),
            }
        }
        OmegaRepr::Rectangular => OmegaBlock::Rectangular {
            f: normal(m).into_iter().map(f64::abs).collect(),
            t: normal(m).into_iter().map(f64::abs).collect(),
        },
    };
    IndependentVars {
        lambda_p,
        lambda_q,
        flow,
        mu_theta_lo,
        mu_theta_hi,
        omega,
    }
}

/// The four completion configurations under test.
pub fn all_configs() -> [CompletionConfig; 4] {
    let base = CompletionConfig::default();
    [
        CompletionConfig {
            flow_choice: FlowChoice::LambdaFlows,
            omega_repr: OmegaRepr::Rectangular,
            ..base
        },
        CompletionConfig {
            flow_choice: FlowChoice::LambdaFlows,
            omega_repr: OmegaRepr::Polar,
            ..base
        },
        CompletionConfig {
            flow_choice: FlowChoice::NuFlows,
            omega_repr: OmegaRepr::Rectangular,
            ..base
        },
        CompletionConfig {
            flow_choice: FlowChoice::NuFlows,
            omega_repr: OmegaRepr::Polar,
            ..base
        },
    ]
}

// Minimal complex arithmetic for the flow cross-check; the heavyweight
// oracle lives in the test suite.
#[derive(Clone, Copy)]
struct C(f64, f64);

impl C {
    fn polar(r: f64, th: f64) -> C {
        C(r * th.cos(), r * th.sin())
    }
    fn conj(self) -> C {
        C(self.0, -self.1)
    }
    fn norm_sqr(self) -> f64 {
        self.0 * self.0 + self.1 * self.1
    }
    fn mul(self, o: C) -> C {
        C(
            self.0 * o.0 - self.1 * o.1,
            self.0 * o.1 + self.1 * o.0,
        )
    }
    fn scale(self, s: f64) -> C {
        C(self.0 * s, self.1 * s)
    }
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: C) -> C {
        C(self.0 - o.0, self.1 - o.1)
    }
}

fn gamma_check(case: &CaseData, pairs: usize, seed: u64) -> (bool, String) {
    let constants = match derive_branch_constants(case) {
        Ok(c) => c,
        Err(e) => return (false, e.to_string()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for (e, br) in case.branches.iter().enumerate() {
        let gm = &constants.gamma[e];
        for _ in 0..pairs {
            let vi = C::polar(0.9 + 0.3 * rng.gen::<f64>(), rng.gen::<f64>() - 0.5);
            let vj = C::polar(0.9 + 0.3 * rng.gen::<f64>(), rng.gen::<f64>() - 0.5);
            let w_i = vi.norm_sqr();
            let w_j = vj.norm_sqr();
            let prod = vi.mul(vj.conj());
            let y = C(br.g, br.b);
            let t = C::polar(br.tap, br.shift);
            let yc_f = C(br.g_charge_from, br.b_charge_from);
            let yc_t = C(br.g_charge_to, br.b_charge_to);
            // forward: conj(Y + Yc) |Vi|^2 / |T|^2 - conj(Y) Vi conj(Vj) / T
            let t_inv = t.conj().scale(1.0 / t.norm_sqr());
            let s_fr = y
                .add(yc_f)
                .conj()
                .scale(w_i / t.norm_sqr())
                .sub(y.conj().mul(prod).mul(t_inv));
            let tc_inv = t.scale(1.0 / t.norm_sqr());
            let s_to = y
                .add(yc_t)
                .conj()
                .scale(w_j)
                .sub(y.conj().mul(prod.conj()).mul(tc_inv));
            let checks = [
                (gm.p_fr(w_i, prod.0, prod.1), s_fr.0),
                (gm.q_fr(w_i, prod.0, prod.1), s_fr.1),
                (gm.p_to(w_j, prod.0, prod.1), s_to.0),
                (gm.q_to(w_j, prod.0, prod.1), s_to.1),
            ];
            for (lin, exact) in checks {
                let rel = (lin - exact).abs() / (1.0 + exact.abs());
                worst = worst.max(rel);
            }
        }
    }
    (worst <= 1e-10, format!("worst relative deviation {worst:.2e}"))
}

/// Run the whole suite on the bundled 14-bus case.
pub fn run() -> Result<Vec<Check>> {
    let case = parse_matpower(crate::CASE14_TEXT)?;
    let constants = derive_branch_constants(&case)?;
    let loads = InstanceLoads::nominal(&case);
    let mut checks = Vec::new();

    // Case statistics.
    {
        let polar = count_independent(&case, &CompletionConfig::default());
        let pass = case.n_bus() == 14 && case.n_branch() == 20 && polar == 168;
        checks.push(Check {
            name: "case statistics",
            pass,
            detail: format!(
                "|N|={} |E|={} independent={polar}",
                case.n_bus(),
                case.n_branch()
            ),
        });
    }

    // Flow-coefficient cross-check against complex arithmetic.
    {
        let (pass, detail) = gamma_check(&case, 20, 97);
        checks.push(Check {
            name: "branch flow coefficients",
            pass,
            detail,
        });
    }

    // Completion feasibility across all four configurations.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        let mut pass = true;
        for config in all_configs() {
            for _ in 0..200 {
                let xi = random_xi(&case, &config, &mut rng);
                match complete(&case, &constants, &loads, &xi, &config) {
                    Ok(y) => {
                        let r = dual_residuals(&case, &constants, &y)?.max_violation();
                        worst = worst.max(r);
                    }
                    Err(_) => pass = false,
                }
            }
        }
        pass = pass && worst <= 1e-9;
        checks.push(Check {
            name: "completion feasibility",
            pass,
            detail: format!("worst residual {worst:.2e} over 800 random predictions"),
        });
    }

    // Cone-boundary exactness, complementarity, head exactness.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut worst_boundary: f64 = 0.0;
        let mut worst_comp: f64 = 0.0;
        let mut worst_head: f64 = 0.0;
        for config in all_configs() {
            for _ in 0..100 {
                let xi = random_xi(&case, &config, &mut rng);
                let y = complete(&case, &constants, &loads, &xi, &config)?;
                for e in 0..case.n_branch() {
                    let k = y.omega_re[e] * y.omega_re[e] + y.omega_im[e] * y.omega_im[e];
                    let gap = (2.0 * y.omega_f[e] * y.omega_t[e] - k).abs() / (1.0 + k);
                    worst_boundary = worst_boundary.max(gap);
                    let head = y.nu_fr_s[e] * y.nu_fr_s[e]
                        - y.nu_fr_p[e] * y.nu_fr_p[e]
                        - y.nu_fr_q[e] * y.nu_fr_q[e];
                    worst_head = worst_head.max(head.abs());
                }
                for i in 0..case.n_bus() {
                    worst_comp = worst_comp
                        .max(y.mu_pg_lo[i] * y.mu_pg_hi[i])
                        .max(y.mu_qg_lo[i] * y.mu_qg_hi[i])
                        .max(y.mu_w_lo[i] * y.mu_w_hi[i]);
                }
            }
        }
        checks.push(Check {
            name: "cone boundary exactness",
            pass: worst_boundary <= 1e-10,
            detail: format!("worst normalized boundary gap {worst_boundary:.2e}"),
        });
        checks.push(Check {
            name: "bound-dual complementarity",
            pass: worst_comp == 0.0,
            detail: format!("worst product {worst_comp:.2e}"),
        });
        checks.push(Check {
            name: "thermal head exactness",
            pass: worst_head <= 1e-10,
            detail: format!("worst head defect {worst_head:.2e}"),
        });
    }

    // Round trip: extract then complete reproduces the prediction.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for config in all_configs() {
            let xi = random_xi(&case, &config, &mut rng);
            let y = complete(&case, &constants, &loads, &xi, &config)?;
            let (xi2, _) = extract_independent(&y, &case, &config)?;
            let diff = |a: &[f64], b: &[f64]| -> f64 {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            };
            worst = worst
                .max(diff(&xi.lambda_p, &xi2.lambda_p))
                .max(diff(&xi.lambda_q, &xi2.lambda_q))
                .max(diff(&xi.flow.fr_p, &xi2.flow.fr_p))
                .max(diff(&xi.mu_theta_lo, &xi2.mu_theta_lo))
                .max(diff(&xi.mu_theta_hi, &xi2.mu_theta_hi));
        }
        checks.push(Check {
            name: "extract-complete round trip",
            pass: worst <= 1e-12,
            detail: format!("worst coordinate drift {worst:.2e}"),
        });
    }

    // Fixture: primal feasibility, weak duality, dual round trip.
    {
        match case14_fixture() {
            Ok(fx) => {
                let report = primal_residuals(&case, &constants, &fx.loads, &fx.primal)?;
                let primal_ok = report.max_violation() <= 1e-6;
                let obj = primal_objective(&case, &fx.primal);
                checks.push(Check {
                    name: "fixture primal feasibility",
                    pass: primal_ok && (obj - fx.primal_objective).abs() <= 1e-6 * (1.0 + obj.abs()),
                    detail: format!(
                        "max residual {:.2e}, objective {obj:.6}",
                        report.max_violation()
                    ),
                });

                let mut rng = ChaCha8Rng::seed_from_u64(8);
                let mut worst_violation: f64 = f64::NEG_INFINITY;
                for config in all_configs() {
                    for _ in 0..100 {
                        let xi = random_xi(&case, &config, &mut rng);
                        let y = complete(&case, &constants, &fx.loads, &xi, &config)?;
                        let z = dual_objective(&case, &fx.loads, &y);
                        worst_violation = worst_violation.max(z - fx.primal_objective);
                    }
                }
                checks.push(Check {
                    name: "weak duality against fixture",
                    pass: worst_violation <= 1e-6,
                    detail: format!("largest bound-minus-optimum {worst_violation:.2e}"),
                });

                let config = CompletionConfig::default();
                let (xi, _) = extract_independent(&fx.dual, &case, &config)?;
                let y = complete(&case, &constants, &fx.loads, &xi, &config)?;
                let z = dual_objective(&case, &fx.loads, &y);
                let rel = (z - fx.dual_objective).abs() / fx.dual_objective.abs().max(1.0);
                checks.push(Check {
                    name: "fixture dual round trip",
                    pass: rel <= 1e-6,
                    detail: format!("bound {z:.6} vs fixture {:.6}", fx.dual_objective),
                });
            }
            Err(e) => checks.push(Check {
                name: "fixture available",
                pass: false,
                detail: e.to_string(),
            }),
        }
    }

    // Differentiable pipeline agrees with the plain implementation.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut worst: f64 = 0.0;
        for config in all_configs() {
            let mut graph = BoundGraph::build(&case, &constants, &config)?;
            graph.set_loads(&loads.p_d, &loads.q_d);
            let xi = random_xi(&case, &config, &mut rng);
            graph.set_xi(&xi);
            let z_graph = graph.forward()?;
            let y = complete(&case, &constants, &loads, &xi, &config)?;
            let z_plain = dual_objective(&case, &loads, &y);
            worst = worst.max((z_graph - z_plain).abs());
        }
        checks.push(Check {
            name: "graph matches plain completion",
            pass: worst <= 1e-9,
            detail: format!("worst objective deviation {worst:.2e}"),
        });
    }

    Ok(checks)
}
