//! The bound-producing network: a shared fully-connected trunk over the
//! normalized loads, followed by one sub-network head per independent-
//! variable block. Head activations enforce the sign constraints of the
//! prediction, so composing the network with the completion yields a
//! dual-feasible solution for every parameter value.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::completion::{
    complete, CompletionConfig, FlowBlock, IndependentVars, OmegaBlock, OmegaRepr,
};
use crate::graph::{attach_completion, attach_dual_objective, phi_interval, DualNodes, OmegaNodes, XiNodes};
use crate::grid::{BranchConstants, CaseData};
use crate::soc::{dual_objective, DualSolution, InstanceLoads};
use crate::{Error, Result};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenAct {
    Softplus,
    Sigmoid,
}

/// Architecture description: widths, activation, per-block output scales
/// (powers of ten), and the init seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub trunk: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub activation: HiddenAct,
    pub scale_lambda: f64,
    pub scale_flow: f64,
    pub scale_mu: f64,
    pub scale_omega: f64,
    pub seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            trunk: vec![256, 256],
            head_hidden: vec![128],
            activation: HiddenAct::Softplus,
            scale_lambda: 1e2,
            scale_flow: 1e1,
            scale_mu: 1e1,
            scale_omega: 1e1,
            seed: 0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::Domain("layer widths must be at least 1".into()));
        }
        for (name, s) in [
            ("scale_lambda", self.scale_lambda),
            ("scale_flow", self.scale_flow),
            ("scale_mu", self.scale_mu),
            ("scale_omega", self.scale_omega),
        ] {
            if !(s > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Final-layer treatment of one head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Identity output times scale (balance and flow duals).
    Linear,
    /// Softplus output times scale (sign-constrained duals and cone heads).
    Softplus,
    /// Sigmoid mapped into the clamped angle interval; no scale.
    Angle,
}

/// One dense layer, row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Everything needed to evaluate the network: architecture, completion
/// configuration it was built for, input normalization constants, and the
/// layer tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyParams {
    pub arch: ArchConfig,
    pub completion: CompletionConfig,
    pub n_bus: usize,
    pub n_branch: usize,
    /// Reciprocal nominal loads (1.0 where the nominal is zero).
    pub inv_p: Vec<f64>,
    pub inv_q: Vec<f64>,
    pub trunk: Vec<LayerParams>,
    pub heads: Vec<HeadParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub name: String,
    pub kind: HeadKind,
    pub scale: f64,
    pub layers: Vec<LayerParams>,
}

/// Head layout for a case and completion configuration, in output order.
fn head_plan(case: &CaseData, config: &CompletionConfig, arch: &ArchConfig) -> Vec<(String, usize, HeadKind, f64)> {
    let n = case.n_bus();
    let m = case.n_branch();
    let mut plan = vec![
        ("lambda_p".to_string(), n, HeadKind::Linear, arch.scale_lambda),
        ("lambda_q".to_string(), n, HeadKind::Linear, arch.scale_lambda),
        ("flow_fr_p".to_string(), m, HeadKind::Linear, arch.scale_flow),
        ("flow_fr_q".to_string(), m, HeadKind::Linear, arch.scale_flow),
        ("flow_to_p".to_string(), m, HeadKind::Linear, arch.scale_flow),
        ("flow_to_q".to_string(), m, HeadKind::Linear, arch.scale_flow),
        ("mu_theta_lo".to_string(), m, HeadKind::Softplus, arch.scale_mu),
        ("mu_theta_hi".to_string(), m, HeadKind::Softplus, arch.scale_mu),
    ];
    match config.omega_repr {
        OmegaRepr::Polar => plan.push(("phi".to_string(), m, HeadKind::Angle, 1.0)),
        OmegaRepr::Rectangular => {
            plan.push(("omega_f".to_string(), m, HeadKind::Softplus, arch.scale_omega));
            plan.push(("omega_t".to_string(), m, HeadKind::Softplus, arch.scale_omega));
        }
    }
    plan
}

fn init_layer(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> LayerParams {
    // Uniform Glorot init; biases start at zero.
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let w = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    LayerParams {
        rows,
        cols,
        w,
        b: vec![0.0; rows],
    }
}

/// Deterministically initialize parameters for a case under the given
/// architecture and completion configuration.
pub fn init_proxy(
    case: &CaseData,
    arch: &ArchConfig,
    config: &CompletionConfig,
) -> Result<ProxyParams> {
    arch.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
    let n = case.n_bus();
    let input_dim = 2 * n;

    let mut trunk = Vec::new();
    let mut prev = input_dim;
    for &width in &arch.trunk {
        trunk.push(init_layer(&mut rng, width, prev));
        prev = width;
    }
    let trunk_out = prev;

    let mut heads = Vec::new();
    for (name, dim, kind, scale) in head_plan(case, config, arch) {
        let mut layers = Vec::new();
        let mut prev = trunk_out;
        for &width in &arch.head_hidden {
            layers.push(init_layer(&mut rng, width, prev));
            prev = width;
        }
        layers.push(init_layer(&mut rng, dim, prev));
        heads.push(HeadParams {
            name,
            kind,
            scale,
            layers,
        });
    }

    let guard = |v: &f64| if *v != 0.0 { 1.0 / *v } else { 1.0 };
    Ok(ProxyParams {
        arch: arch.clone(),
        completion: *config,
        n_bus: n,
        n_branch: case.n_branch(),
        inv_p: case.ref_p_load.iter().map(guard).collect(),
        inv_q: case.ref_q_load.iter().map(guard).collect(),
        trunk,
        heads,
    })
}

impl ProxyParams {
    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.w.len() + t.b.len()).sum()
    }

    /// All layers in a fixed order (trunk first, then heads in plan order).
    pub fn tensors(&self) -> Vec<&LayerParams> {
        self.trunk
            .iter()
            .chain(self.heads.iter().flat_map(|h| h.layers.iter()))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut LayerParams> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flat_map(|h| h.layers.iter_mut()))
            .collect()
    }

    fn check_case(&self, case: &CaseData) -> Result<()> {
        if self.n_bus != case.n_bus() || self.n_branch != case.n_branch() {
            return Err(Error::Dimension(format!(
                "parameters built for {}x{} do not match case {}x{}",
                self.n_bus,
                self.n_branch,
                case.n_bus(),
                case.n_branch()
            )));
        }
        Ok(())
    }
}

fn act(kind: HiddenAct, z: &mut [f64]) {
    match kind {
        HiddenAct::Softplus => {
            for v in z.iter_mut() {
                *v = if *v > 30.0 {
                    *v
                } else if *v < -30.0 {
                    v.exp()
                } else {
                    v.exp().ln_1p()
                };
            }
        }
        HiddenAct::Sigmoid => {
            for v in z.iter_mut() {
                *v = if *v >= 0.0 {
                    1.0 / (1.0 + (-*v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                };
            }
        }
    }
}

fn matvec(layer: &LayerParams, x: &[f64]) -> Vec<f64> {
    let mut out = layer.b.clone();
    for r in 0..layer.rows {
        let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
        let mut acc = 0.0;
        for (c, &xv) in x.iter().enumerate() {
            acc += row[c] * xv;
        }
        out[r] += acc;
    }
    out
}

/// Evaluate the network on one instance, producing the independent
/// variables. Sign constraints hold by construction of the head
/// activations.
pub fn forward_proxy(
    params: &ProxyParams,
    case: &CaseData,
    loads: &InstanceLoads,
) -> Result<IndependentVars> {
    params.check_case(case)?;
    loads.validate(case)?;

    let mut x: Vec<f64> = Vec::with_capacity(2 * params.n_bus);
    for (v, inv) in loads.p_d.iter().zip(&params.inv_p) {
        x.push(v * inv);
    }
    for (v, inv) in loads.q_d.iter().zip(&params.inv_q) {
        x.push(v * inv);
    }

    for layer in &params.trunk {
        let mut z = matvec(layer, &x);
        act(params.arch.activation, &mut z);
        x = z;
    }

    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let mut h = x.clone();
        let (hidden, last) = head.layers.split_at(head.layers.len() - 1);
        for layer in hidden {
            let mut z = matvec(layer, &h);
            act(params.arch.activation, &mut z);
            h = z;
        }
        let mut out = matvec(&last[0], &h);
        match head.kind {
            HeadKind::Linear => {
                for v in out.iter_mut() {
                    *v *= head.scale;
                }
            }
            HeadKind::Softplus => {
                act(HiddenAct::Softplus, &mut out);
                for v in out.iter_mut() {
                    *v *= head.scale;
                }
            }
            HeadKind::Angle => {
                let (lo, hi) = phi_interval(params.completion.eps_phi);
                act(HiddenAct::Sigmoid, &mut out);
                for v in out.iter_mut() {
                    *v = lo + (hi - lo) * *v;
                }
            }
        }
        outputs.push(out);
    }

    let mut it = outputs.into_iter();
    let lambda_p = it.next().unwrap();
    let lambda_q = it.next().unwrap();
    let flow = FlowBlock {
        fr_p: it.next().unwrap(),
        fr_q: it.next().unwrap(),
        to_p: it.next().unwrap(),
        to_q: it.next().unwrap(),
    };
    let mu_theta_lo = it.next().unwrap();
    let mu_theta_hi = it.next().unwrap();
    let omega = match params.completion.omega_repr {
        OmegaRepr::Polar => OmegaBlock::Polar {
            phi: it.next().unwrap(),
        },
        OmegaRepr::Rectangular => OmegaBlock::Rectangular {
            f: it.next().unwrap(),
            t: it.next().unwrap(),
        },
    };

    Ok(IndependentVars {
        lambda_p,
        lambda_q,
        flow,
        mu_theta_lo,
        mu_theta_hi,
        omega,
    })
}

/// Run the full pipeline on one instance: predict, complete, evaluate.
/// The returned bound is a valid lower bound for the instance's relaxation.
pub fn proxy_bound(
    params: &ProxyParams,
    case: &CaseData,
    constants: &BranchConstants,
    loads: &InstanceLoads,
    config: &CompletionConfig,
) -> Result<(DualSolution, f64)> {
    if *config != params.completion {
        return Err(Error::Domain(
            "completion configuration does not match the one the parameters were built for".into(),
        ));
    }
    let xi = forward_proxy(params, case, loads)?;
    let y = complete(case, constants, loads, &xi, config)?;
    let bound = dual_objective(case, loads, &y);
    Ok((y, bound))
}

/// Loss normalizer: total nominal active load times the mean cost over
/// generating buses, floored away from zero. Fixed per case.
pub fn loss_normalizer(case: &CaseData) -> f64 {
    let gen_costs: Vec<f64> = case
        .gens
        .iter()
        .filter(|g| g.p_max > 0.0)
        .map(|g| g.cost)
        .collect();
    let mean_cost = if gen_costs.is_empty() {
        1.0
    } else {
        gen_costs.iter().sum::<f64>() / gen_costs.len() as f64
    };
    (case.total_p_load() * mean_cost).abs().max(1e-9)
}

/// Mean self-supervised loss of a batch: the negated normalized bound,
/// averaged over instances. Lower loss means larger mean bound.
pub fn loss(
    params: &ProxyParams,
    case: &CaseData,
    constants: &BranchConstants,
    batch: &[InstanceLoads],
    config: &CompletionConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("loss over an empty batch".into()));
    }
    let normalizer = loss_normalizer(case);
    let mut total = 0.0;
    for loads in batch {
        let (_, bound) = proxy_bound(params, case, constants, loads, config)?;
        total += -bound / normalizer;
    }
    Ok(total / batch.len() as f64)
}

/// The trainable pipeline on a tape: parameters and loads as inputs, the
/// bound and normalized loss as outputs.
pub struct ProxyGraph {
    pub tape: Tape,
    pub loads_p: NodeId,
    pub loads_q: NodeId,
    /// One node per layer tensor pair, ordered like
    /// [`ProxyParams::tensors`]: (weights, bias).
    pub param_nodes: Vec<(NodeId, NodeId)>,
    pub dual: DualNodes,
    pub objective: NodeId,
    pub loss: NodeId,
}

impl ProxyGraph {
    pub fn build(
        params: &ProxyParams,
        case: &CaseData,
        constants: &BranchConstants,
    ) -> Result<Self> {
        params.check_case(case)?;
        let mut tape = Tape::new();
        let n = case.n_bus();
        let loads_p = tape.input(n);
        let loads_q = tape.input(n);
        let mut param_nodes = Vec::new();

        let inv_p = tape.mul_coeff(std::sync::Arc::new(params.inv_p.clone()), loads_p);
        let inv_q = tape.mul_coeff(std::sync::Arc::new(params.inv_q.clone()), loads_q);
        let mut x = tape.concat(inv_p, inv_q);

        let hidden = |tape: &mut Tape, act: HiddenAct, z: NodeId| match act {
            HiddenAct::Softplus => tape.softplus(z),
            HiddenAct::Sigmoid => tape.sigmoid(z),
        };

        for layer in &params.trunk {
            let w = tape.input(layer.rows * layer.cols);
            let b = tape.input(layer.rows);
            param_nodes.push((w, b));
            let z = tape.affine(w, x, b, layer.rows, layer.cols);
            x = hidden(&mut tape, params.arch.activation, z);
        }

        let mut head_out = Vec::new();
        for head in &params.heads {
            let mut h = x;
            let (hidden_layers, last) = head.layers.split_at(head.layers.len() - 1);
            for layer in hidden_layers {
                let w = tape.input(layer.rows * layer.cols);
                let b = tape.input(layer.rows);
                param_nodes.push((w, b));
                let z = tape.affine(w, h, b, layer.rows, layer.cols);
                h = hidden(&mut tape, params.arch.activation, z);
            }
            let layer = &last[0];
            let w = tape.input(layer.rows * layer.cols);
            let b = tape.input(layer.rows);
            param_nodes.push((w, b));
            let z = tape.affine(w, h, b, layer.rows, layer.cols);
            let out = match head.kind {
                HeadKind::Linear => tape.scale(z, head.scale),
                HeadKind::Softplus => {
                    let s = tape.softplus(z);
                    tape.scale(s, head.scale)
                }
                HeadKind::Angle => {
                    let (lo, hi) = phi_interval(params.completion.eps_phi);
                    let s = tape.sigmoid(z);
                    let scaled = tape.scale(s, hi - lo);
                    tape.offset(scaled, lo)
                }
            };
            head_out.push(out);
        }

        let xi = XiNodes {
            lambda_p: head_out[0],
            lambda_q: head_out[1],
            flow_fr_p: head_out[2],
            flow_fr_q: head_out[3],
            flow_to_p: head_out[4],
            flow_to_q: head_out[5],
            mu_theta_lo: head_out[6],
            mu_theta_hi: head_out[7],
            omega: match params.completion.omega_repr {
                OmegaRepr::Polar => OmegaNodes::Polar { phi: head_out[8] },
                OmegaRepr::Rectangular => OmegaNodes::Rectangular {
                    f: head_out[8],
                    t: head_out[9],
                },
            },
        };

        let dual = attach_completion(&mut tape, case, constants, &params.completion, &xi)?;
        let objective =
            attach_dual_objective(&mut tape, case, constants, loads_p, loads_q, &dual)?;
        let loss = tape.scale(objective, -1.0 / loss_normalizer(case));

        Ok(ProxyGraph {
            tape,
            loads_p,
            loads_q,
            param_nodes,
            dual,
            objective,
            loss,
        })
    }

    /// Copy parameter tensors into the graph inputs.
    pub fn set_params(&mut self, params: &ProxyParams) {
        let tensors = params.tensors();
        assert_eq!(tensors.len(), self.param_nodes.len());
        for (t, &(w, b)) in tensors.iter().zip(&self.param_nodes) {
            self.tape.set_input(w, &t.w);
            self.tape.set_input(b, &t.b);
        }
    }

    pub fn set_loads(&mut self, loads: &InstanceLoads) {
        self.tape.set_input(self.loads_p, &loads.p_d);
        self.tape.set_input(self.loads_q, &loads.q_d);
    }

    /// Evaluate; returns (bound, loss).
    pub fn forward(&mut self) -> Result<(f64, f64)> {
        self.tape.forward()?;
        Ok((
            self.tape.value(self.objective)[0],
            self.tape.value(self.loss)[0],
        ))
    }

    /// Accumulate loss gradients for every parameter tensor, in
    /// [`ProxyParams::tensors`] order as (weight grad, bias grad) pairs.
    pub fn backward_params(&mut self) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.tape.backward(self.loss)?;
        Ok(self
            .param_nodes
            .iter()
            .map(|&(w, b)| {
                (
                    self.tape.adjoint(w).to_vec(),
                    self.tape.adjoint(b).to_vec(),
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_matpower;
    use crate::soc::dual_residuals;
    use crate::trainer::BOUND_RESIDUAL_TOL;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn setup() -> (CaseData, BranchConstants, InstanceLoads) {
        let case = parse_matpower(crate::CASE14_TEXT).unwrap();
        let constants = crate::grid::derive_branch_constants(&case).unwrap();
        let loads = InstanceLoads::nominal(&case);
        (case, constants, loads)
    }

    fn small_arch(seed: u64) -> ArchConfig {
        ArchConfig {
            trunk: vec![32, 32],
            head_hidden: vec![16],
            seed,
            ..ArchConfig::default()
        }
    }

    #[test]
    fn same_seed_means_identical_parameters() {
        let (case, _, _) = setup();
        let config = CompletionConfig::default();
        let a = init_proxy(&case, &small_arch(9), &config).unwrap();
        let b = init_proxy(&case, &small_arch(9), &config).unwrap();
        assert_eq!(a, b);
        let c = init_proxy(&case, &small_arch(10), &config).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_is_stable_and_matches_shapes() {
        let (case, _, _) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &small_arch(0), &config).unwrap();
        let by_shape: usize = params
            .tensors()
            .iter()
            .map(|t| t.rows * t.cols + t.rows)
            .sum();
        assert_eq!(params.param_count(), by_shape);
        // 28->32->32 trunk, nine heads 32->16->dim with dims
        // (14,14,20,20,20,20,20,20,20).
        let trunk = 32 * 28 + 32 + 32 * 32 + 32;
        let head_dims = [14, 14, 20, 20, 20, 20, 20, 20, 20];
        let heads: usize = head_dims
            .iter()
            .map(|d| 16 * 32 + 16 + d * 16 + d)
            .sum();
        assert_eq!(params.param_count(), trunk + heads);
    }

    #[test]
    fn zero_network_outputs_the_documented_prediction() {
        let (case, _, loads) = setup();
        let config = CompletionConfig::default();
        let mut params = init_proxy(&case, &small_arch(1), &config).unwrap();
        for t in params.tensors_mut() {
            t.w.iter_mut().for_each(|v| *v = 0.0);
            t.b.iter_mut().for_each(|v| *v = 0.0);
        }
        let xi = forward_proxy(&params, &case, &loads).unwrap();
        assert!(xi.lambda_p.iter().all(|&v| v == 0.0));
        assert!(xi.flow.fr_p.iter().all(|&v| v == 0.0));
        let softplus0 = 2.0_f64.ln() * params.arch.scale_mu;
        for &v in &xi.mu_theta_lo {
            assert!((v - softplus0).abs() <= 1e-12);
        }
        let OmegaBlock::Polar { phi } = &xi.omega else {
            panic!("polar default expected")
        };
        for &v in phi {
            assert!((v - FRAC_PI_4).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_parameters_always_give_feasible_completions() {
        let (case, constants, loads) = setup();
        for config in crate::selftest::all_configs() {
            for seed in 0..8 {
                let mut arch = small_arch(seed);
                arch.seed = seed;
                let mut params = init_proxy(&case, &arch, &config).unwrap();
                // Exaggerate the weights to stress the activation ranges.
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                for t in params.tensors_mut() {
                    for v in t.w.iter_mut() {
                        *v *= 1.0 + 4.0 * rng.gen::<f64>();
                    }
                    for v in t.b.iter_mut() {
                        *v = rng.gen::<f64>() * 2.0 - 1.0;
                    }
                }
                let xi = forward_proxy(&params, &case, &loads).unwrap();
                xi.validate(&case, &config).unwrap();
                let (y, bound) = proxy_bound(&params, &case, &constants, &loads, &config).unwrap();
                assert!(bound.is_finite());
                let resid = dual_residuals(&case, &constants, &y).unwrap().max_violation();
                assert!(resid <= BOUND_RESIDUAL_TOL, "residual {resid:.2e}");
            }
        }
    }

    #[test]
    fn untrained_bound_respects_weak_duality_against_fixture() {
        let (case, constants, _) = setup();
        let fx = crate::io::case14_fixture().unwrap();
        let config = CompletionConfig::default();
        for seed in 0..10 {
            let params = init_proxy(&case, &small_arch(seed), &config).unwrap();
            let (_, bound) =
                proxy_bound(&params, &case, &constants, &fx.loads, &config).unwrap();
            assert!(bound <= fx.primal_objective + 1e-6);
        }
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let (case, constants, loads) = setup();
        for config in crate::selftest::all_configs() {
            let params = init_proxy(&case, &small_arch(4), &config).unwrap();
            let mut graph = ProxyGraph::build(&params, &case, &constants).unwrap();
            graph.set_params(&params);
            graph.set_loads(&loads);
            let (bound_graph, loss_graph) = graph.forward().unwrap();
            let (_, bound_plain) =
                proxy_bound(&params, &case, &constants, &loads, &config).unwrap();
            assert!(
                (bound_graph - bound_plain).abs() <= 1e-10 * (1.0 + bound_plain.abs()),
                "graph {bound_graph} vs plain {bound_plain}"
            );
            let expected_loss = -bound_plain / loss_normalizer(&case);
            assert!((loss_graph - expected_loss).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_is_negated_mean_normalized_bound() {
        let (case, constants, loads) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &small_arch(2), &config).unwrap();
        let (_, b1) = proxy_bound(&params, &case, &constants, &loads, &config).unwrap();
        let mut loads2 = loads.clone();
        for v in loads2.p_d.iter_mut() {
            *v *= 1.05;
        }
        let (_, b2) = proxy_bound(&params, &case, &constants, &loads2, &config).unwrap();
        let batch = vec![loads.clone(), loads2.clone()];
        let l = loss(&params, &case, &constants, &batch, &config).unwrap();
        let n = loss_normalizer(&case);
        assert!((l - (-(b1 + b2) / (2.0 * n))).abs() <= 1e-12);
        assert!(loss(&params, &case, &constants, &[], &config).is_err());
    }

    #[test]
    fn batch_evaluation_preserves_order() {
        let (case, constants, loads) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &small_arch(6), &config).unwrap();
        let mut batch = Vec::new();
        for k in 0..5 {
            let mut l = loads.clone();
            l.p_d.iter_mut().for_each(|v| *v *= 0.9 + 0.05 * k as f64);
            l.q_d.iter_mut().for_each(|v| *v *= 0.9 + 0.05 * k as f64);
            batch.push(l);
        }
        let bounds: Vec<f64> = batch
            .iter()
            .map(|l| proxy_bound(&params, &case, &constants, l, &config).unwrap().1)
            .collect();
        // Re-evaluating any single element reproduces its slot.
        for (k, l) in batch.iter().enumerate() {
            let (_, b) = proxy_bound(&params, &case, &constants, l, &config).unwrap();
            assert_eq!(b, bounds[k]);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (case, constants, loads) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &small_arch(7), &config).unwrap();
        let mut graph = ProxyGraph::build(&params, &case, &constants).unwrap();
        graph.set_params(&params);
        graph.set_loads(&loads);
        graph.forward().unwrap();
        // Sample coordinates of the first trunk weight matrix.
        let (w0, _) = graph.param_nodes[0];
        let len = params.tensors()[0].w.len();
        let coords: Vec<usize> = (0..64).map(|k| (k * 13) % len).collect();
        let loss_node = graph.loss;
        let report = crate::autodiff::gradcheck(
            &mut graph.tape,
            "loss/trunk_w0",
            w0,
            loss_node,
            &coords,
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_smooth_error() <= 1e-5,
            "worst {:.2e}",
            report.max_smooth_error()
        );
        assert!(report.kinks <= coords.len() / 20);
    }

    #[test]
    fn mismatched_completion_config_is_rejected() {
        let (case, constants, loads) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &small_arch(3), &config).unwrap();
        let other = CompletionConfig {
            omega_repr: OmegaRepr::Rectangular,
            ..config
        };
        assert!(proxy_bound(&params, &case, &constants, &loads, &other).is_err());
    }
}
