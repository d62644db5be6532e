//! Self-supervised training of the proxy, a learning-free projected
//! dual-ascent baseline, and evaluation reports.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::completion::{CompletionConfig, IndependentVars, OmegaBlock, OmegaRepr};
use crate::graph::{phi_interval, BoundGraph};
use crate::grid::{BranchConstants, CaseData};
use crate::proxy::{proxy_bound, ProxyGraph, ProxyParams};
use crate::soc::{dual_residuals, geometric_mean, optimality_gap, InstanceLoads};
use crate::{Error, Result};

/// Residual ceiling on every emitted bound; a completed solution whose
/// residuals exceed this is a bug, not a bound.
pub const BOUND_RESIDUAL_TOL: f64 = 1e-9;

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Train / validation / test fractions; must sum to one.
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 100,
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            fractions: (0.9, 0.05, 0.05),
            seed: 0,
        }
    }
}

/// Instances plus the index split they were partitioned into.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<InstanceLoads>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub mean_val_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_bound: f64,
    /// Set when training stopped early on a non-finite loss; the returned
    /// parameters are the last good checkpoint.
    pub diverged_at: Option<usize>,
    pub wall_seconds: f64,
}

struct Adam {
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
    t: usize,
}

impl Adam {
    fn new(params: &ProxyParams) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = params
            .tensors()
            .iter()
            .map(|t| (vec![0.0; t.w.len()], vec![0.0; t.b.len()]))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ProxyParams, grads: &[(Vec<f64>, Vec<f64>)], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (k, tensor) in params.tensors_mut().into_iter().enumerate() {
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            };
            update(&mut tensor.w, &grads[k].0, &mut self.m[k].0, &mut self.v[k].0);
            update(&mut tensor.b, &grads[k].1, &mut self.m[k].1, &mut self.v[k].1);
        }
    }
}

/// Train with Adam on the self-supervised loss; validation runs after
/// every epoch and the best-validation parameters are returned. A
/// non-finite loss stops training and returns the last good checkpoint,
/// recorded in the history.
pub fn train(
    params: &ProxyParams,
    case: &CaseData,
    constants: &BranchConstants,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ProxyParams, TrainHistory)> {
    if dataset.train_idx.is_empty() {
        return Err(Error::Domain("empty training split".into()));
    }
    let start = Instant::now();
    let mut params = params.clone();
    let mut graph = ProxyGraph::build(&params, case, constants)?;
    let mut adam = Adam::new(&params);

    let val_mean_bound = |graph: &mut ProxyGraph, p: &ProxyParams| -> Result<f64> {
        if dataset.val_idx.is_empty() {
            return Ok(f64::NEG_INFINITY);
        }
        graph.set_params(p);
        let mut total = 0.0;
        for &i in &dataset.val_idx {
            graph.set_loads(&dataset.instances[i]);
            let (bound, _) = graph.forward()?;
            total += bound;
        }
        Ok(total / dataset.val_idx.len() as f64)
    };

    let mut best_params = params.clone();
    let mut best_val = val_mean_bound(&mut graph, &params)?;
    let mut best_epoch = 0usize;
    let mut history = Vec::new();
    let mut diverged_at = None;

    let n_tensors = params.tensors().len();
    'epochs: for epoch in 1..=cfg.epochs {
        let mut order = dataset.train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut acc: Vec<(Vec<f64>, Vec<f64>)> = params
                .tensors()
                .iter()
                .map(|t| (vec![0.0; t.w.len()], vec![0.0; t.b.len()]))
                .collect();
            graph.set_params(&params);
            let mut batch_loss = 0.0;
            for &i in chunk {
                graph.set_loads(&dataset.instances[i]);
                let (_, loss) = match graph.forward() {
                    Ok(v) => v,
                    Err(Error::NonFinite(_)) => {
                        diverged_at = Some(epoch);
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                batch_loss += loss;
                let grads = graph.backward_params()?;
                for k in 0..n_tensors {
                    for (a, g) in acc[k].0.iter_mut().zip(&grads[k].0) {
                        *a += g;
                    }
                    for (a, g) in acc[k].1.iter_mut().zip(&grads[k].1) {
                        *a += g;
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for pair in acc.iter_mut() {
                pair.0.iter_mut().for_each(|g| *g *= scale);
                pair.1.iter_mut().for_each(|g| *g *= scale);
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                diverged_at = Some(epoch);
                break 'epochs;
            }
            adam.step(&mut params, &acc, cfg);
            epoch_loss += batch_loss;
            n_batches += 1;
        }

        let val_bound = val_mean_bound(&mut graph, &params)?;
        history.push(EpochStats {
            epoch,
            mean_train_loss: epoch_loss / n_batches.max(1) as f64,
            mean_val_bound: val_bound,
        });
        if val_bound > best_val {
            best_val = val_bound;
            best_params = params.clone();
            best_epoch = epoch;
        }
    }

    Ok((
        best_params,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_val_bound: best_val,
            diverged_at,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Step rule of the ascent baseline: the base first-order rate, halved
/// when the best bound stalls for `patience` consecutive steps (an
/// improvement below 0.1% relative counts as a stall), a bounded number
/// of times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub initial_step: f64,
    pub max_halvings: usize,
    pub patience: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule {
            initial_step: 0.4,
            max_halvings: 5,
            patience: 120,
        }
    }
}

/// Relative improvement below this counts as a stall for the halving rule.
const ASCENT_SIGNIFICANT: f64 = 1e-3;
/// Rate multiplier of the balance-dual block: those coordinates must
/// travel to the cost level while the flow and angle duals stay near the
/// origin valley.
const ASCENT_BALANCE_BOOST: f64 = 3.0;
/// Rate multiplier of the polar-angle block, which only needs to move
/// within a narrow interval.
const ASCENT_ANGLE_SCALE: f64 = 0.1;

/// Project a candidate onto the sign constraints of the independent
/// variables.
fn project_xi(xi: &mut IndependentVars, config: &CompletionConfig) {
    for v in xi.mu_theta_lo.iter_mut().chain(xi.mu_theta_hi.iter_mut()) {
        *v = v.max(0.0);
    }
    match &mut xi.omega {
        OmegaBlock::Polar { phi } => {
            let (lo, hi) = phi_interval(config.eps_phi);
            for v in phi.iter_mut() {
                *v = v.clamp(lo, hi);
            }
        }
        OmegaBlock::Rectangular { f, t } => {
            for v in f.iter_mut().chain(t.iter_mut()) {
                *v = v.max(config.eps_omega);
            }
        }
    }
}

/// Flatten the blocks in a fixed order for the optimizer state.
fn flatten_xi(xi: &IndependentVars) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend(&xi.lambda_p);
    v.extend(&xi.lambda_q);
    v.extend(&xi.flow.fr_p);
    v.extend(&xi.flow.fr_q);
    v.extend(&xi.flow.to_p);
    v.extend(&xi.flow.to_q);
    v.extend(&xi.mu_theta_lo);
    v.extend(&xi.mu_theta_hi);
    match &xi.omega {
        OmegaBlock::Polar { phi } => v.extend(phi),
        OmegaBlock::Rectangular { f, t } => {
            v.extend(f);
            v.extend(t);
        }
    }
    v
}

fn unflatten_xi(template: &IndependentVars, v: &[f64]) -> IndependentVars {
    let mut xi = template.clone();
    let mut k = 0usize;
    let mut take = |n: usize| {
        let s = v[k..k + n].to_vec();
        k += n;
        s
    };
    let n = xi.lambda_p.len();
    let m = xi.flow.fr_p.len();
    xi.lambda_p = take(n);
    xi.lambda_q = take(n);
    xi.flow.fr_p = take(m);
    xi.flow.fr_q = take(m);
    xi.flow.to_p = take(m);
    xi.flow.to_q = take(m);
    xi.mu_theta_lo = take(m);
    xi.mu_theta_hi = take(m);
    match &mut xi.omega {
        OmegaBlock::Polar { phi } => *phi = take(m),
        OmegaBlock::Rectangular { f, t } => {
            *f = take(m);
            *t = take(m);
        }
    }
    xi
}

/// Instance-wise projected first-order ascent on the bound through the
/// completion, with per-coordinate moment scaling and per-block rate
/// multipliers. Every iterate is completed, hence dual-feasible, hence
/// every visited bound is valid; the returned trajectory tracks the best
/// bound seen so far and is nondecreasing by construction.
///
/// The objective is piecewise-smooth with its maximizer sitting on many
/// constraint kinks at once, which makes plain fixed-step subgradient
/// steps oscillate without progress; the moment scaling is what lets a
/// 500-step budget reach a few percent of the optimum.
pub fn dual_ascent(
    case: &CaseData,
    constants: &BranchConstants,
    loads: &InstanceLoads,
    xi0: IndependentVars,
    steps: usize,
    rule: &StepRule,
    config: &CompletionConfig,
) -> Result<(IndependentVars, Vec<f64>)> {
    let mut graph = BoundGraph::build(case, constants, config)?;
    graph.set_loads(&loads.p_d, &loads.q_d);

    let mut xi = xi0;
    project_xi(&mut xi, config);
    graph.set_xi(&xi);
    let mut z = graph.forward()?;
    let mut best = z;
    let mut best_xi = xi.clone();
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(best);

    let n2 = 2 * case.n_bus();
    let angle_start = match config.omega_repr {
        OmegaRepr::Polar => Some(n2 + 6 * case.n_branch()),
        OmegaRepr::Rectangular => None,
    };
    let mut x = flatten_xi(&xi);
    let mut mom = vec![0.0; x.len()];
    let mut vel = vec![0.0; x.len()];
    let (b1, b2, eps): (f64, f64, f64) = (0.95, 0.999, 1e-8);

    let mut step = rule.initial_step;
    let mut halvings = 0usize;
    let mut stalled = 0usize;
    for t in 1..=steps {
        // Forward state is already at the current iterate.
        let grad = graph.backward_xi()?;
        let gf = flatten_xi(&grad);
        let bc1 = 1.0 - b1.powi(t.min(1_000) as i32);
        let bc2 = 1.0 - b2.powi(t.min(100_000) as i32);
        for i in 0..x.len() {
            mom[i] = b1 * mom[i] + (1.0 - b1) * gf[i];
            vel[i] = b2 * vel[i] + (1.0 - b2) * gf[i] * gf[i];
            let rate = if i < n2 {
                ASCENT_BALANCE_BOOST
            } else if angle_start.is_some_and(|a| i >= a) {
                ASCENT_ANGLE_SCALE
            } else {
                1.0
            };
            x[i] += step * rate * (mom[i] / bc1) / ((vel[i] / bc2).sqrt() + eps);
        }
        xi = unflatten_xi(&xi, &x);
        project_xi(&mut xi, config);
        x = flatten_xi(&xi);
        graph.set_xi(&xi);
        z = graph.forward()?;
        if z > best {
            let significant = z - best >= ASCENT_SIGNIFICANT * (1.0 + best.abs());
            best = z;
            best_xi = xi.clone();
            if significant {
                stalled = 0;
            } else {
                stalled += 1;
            }
        } else {
            stalled += 1;
        }
        if stalled >= rule.patience && halvings < rule.max_halvings {
            step /= 2.0;
            halvings += 1;
            stalled = 0;
        }
        traj.push(best);
    }
    Ok((best_xi, traj))
}

/// Evaluation of a trained proxy on a test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub bounds: Vec<f64>,
    /// Present when reference objectives were supplied.
    pub gaps: Option<Vec<f64>>,
    pub mean_gap: Option<f64>,
    pub std_gap: Option<f64>,
    pub max_gap: Option<f64>,
    pub geo_mean_gap: Option<f64>,
    pub geo_mean_clamped: usize,
    /// Wall-clock seconds for the whole batch of bound evaluations.
    pub batch_seconds: f64,
    pub max_residual: f64,
}

/// Evaluate the proxy on every instance, checking that each completed
/// solution is feasible to [`BOUND_RESIDUAL_TOL`], and compute gap
/// statistics against reference objectives when given.
pub fn evaluate(
    params: &ProxyParams,
    case: &CaseData,
    constants: &BranchConstants,
    testset: &[InstanceLoads],
    refs: Option<&[f64]>,
    config: &CompletionConfig,
) -> Result<EvalReport> {
    if let Some(r) = refs {
        if r.len() != testset.len() {
            return Err(Error::MissingRefs(format!(
                "{} references for {} instances",
                r.len(),
                testset.len()
            )));
        }
    }
    let start = Instant::now();
    let mut bounds = Vec::with_capacity(testset.len());
    let mut max_residual: f64 = 0.0;
    for loads in testset {
        let (y, bound) = proxy_bound(params, case, constants, loads, config)?;
        let resid = dual_residuals(case, constants, &y)?.max_violation();
        if resid > BOUND_RESIDUAL_TOL {
            return Err(Error::Validation(format!(
                "completed solution violates dual feasibility by {resid:.3e}"
            )));
        }
        max_residual = max_residual.max(resid);
        bounds.push(bound);
    }
    let batch_seconds = start.elapsed().as_secs_f64();

    let mut report = EvalReport {
        bounds,
        gaps: None,
        mean_gap: None,
        std_gap: None,
        max_gap: None,
        geo_mean_gap: None,
        geo_mean_clamped: 0,
        batch_seconds,
        max_residual,
    };
    if let Some(refs) = refs {
        let mut gaps = Vec::with_capacity(refs.len());
        for (z_ref, z_hat) in refs.iter().zip(&report.bounds) {
            gaps.push(optimality_gap(*z_ref, *z_hat)?);
        }
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
        let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let positive: Vec<f64> = gaps.iter().copied().map(|g| g.max(0.0)).collect();
        let (geo, clamped) = geometric_mean(&positive)?;
        report.mean_gap = Some(mean);
        report.std_gap = Some(var.sqrt());
        report.max_gap = Some(max);
        report.geo_mean_gap = Some(geo);
        report.geo_mean_clamped = clamped;
        report.gaps = Some(gaps);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{derive_branch_constants, parse_matpower};
    use crate::proxy::{init_proxy, ArchConfig};
    use crate::sampler::{sample_instances, split_dataset, SamplerConfig};

    fn setup() -> (CaseData, BranchConstants) {
        let case = parse_matpower(crate::CASE14_TEXT).unwrap();
        let constants = derive_branch_constants(&case).unwrap();
        (case, constants)
    }

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            trunk: vec![16],
            head_hidden: vec![8],
            scale_lambda: 1e1,
            scale_flow: 1e0,
            scale_mu: 1e0,
            seed: 5,
            ..ArchConfig::default()
        }
    }

    fn tiny_dataset(case: &CaseData, n: usize) -> Dataset {
        let sampler = SamplerConfig {
            n_instances: n,
            seed: 13,
            ..SamplerConfig::default()
        };
        let instances = sample_instances(case, &sampler).unwrap();
        let (train_idx, val_idx, test_idx) =
            split_dataset(instances.len(), (0.8, 0.1, 0.1), 13).unwrap();
        Dataset {
            instances,
            train_idx,
            val_idx,
            test_idx,
        }
    }

    #[test]
    fn zero_step_leaves_parameters_unchanged() {
        let (case, constants) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &tiny_arch(), &config).unwrap();
        let dataset = tiny_dataset(&case, 8);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            step_size: 0.0,
            seed: 13,
            ..TrainConfig::default()
        };
        let (out, history) = train(&params, &case, &constants, &dataset, &cfg).unwrap();
        assert_eq!(out, params);
        assert_eq!(history.epochs.len(), 1);
        assert!(history.diverged_at.is_none());
    }

    #[test]
    fn training_improves_validation_bound_and_is_deterministic() {
        let (case, constants) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &tiny_arch(), &config).unwrap();
        let dataset = tiny_dataset(&case, 64);
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 16,
            step_size: 1e-3,
            seed: 13,
            ..TrainConfig::default()
        };
        let (best_a, hist_a) = train(&params, &case, &constants, &dataset, &cfg).unwrap();
        assert!(
            hist_a.best_val_bound > hist_a.epochs.first().unwrap().mean_val_bound,
            "validation bound should improve over the first epoch"
        );
        // Checkpoint selection makes the best-so-far curve monotone.
        let mut best_seen = f64::NEG_INFINITY;
        for e in &hist_a.epochs {
            best_seen = best_seen.max(e.mean_val_bound);
        }
        assert_eq!(best_seen, hist_a.best_val_bound);

        let (best_b, hist_b) = train(&params, &case, &constants, &dataset, &cfg).unwrap();
        assert_eq!(best_a, best_b, "same seed and data must give identical parameters");
        assert_eq!(
            hist_a.epochs.last().unwrap().mean_train_loss,
            hist_b.epochs.last().unwrap().mean_train_loss
        );
    }

    #[test]
    fn ascent_with_zero_steps_returns_the_start_bound() {
        let (case, constants) = setup();
        let config = CompletionConfig::default();
        let loads = InstanceLoads::nominal(&case);
        let xi0 = IndependentVars::zeros(&case, &config);
        let (_, traj) = dual_ascent(
            &case,
            &constants,
            &loads,
            xi0,
            0,
            &StepRule::default(),
            &config,
        )
        .unwrap();
        let floor: f64 = case.gens.iter().map(|g| g.p_min * g.cost).sum();
        assert_eq!(traj, vec![floor]);
    }

    #[test]
    fn ascent_trajectory_is_monotone_and_iterates_are_feasible() {
        let (case, constants) = setup();
        let config = CompletionConfig::default();
        let loads = InstanceLoads::nominal(&case);
        let xi0 = IndependentVars::zeros(&case, &config);
        let (best_xi, traj) = dual_ascent(
            &case,
            &constants,
            &loads,
            xi0,
            60,
            &StepRule::default(),
            &config,
        )
        .unwrap();
        assert_eq!(traj.len(), 61);
        assert!(traj.windows(2).all(|w| w[1] >= w[0]));
        let floor: f64 = case.gens.iter().map(|g| g.p_min * g.cost).sum();
        assert!(*traj.last().unwrap() >= floor);
        // The returned prediction completes to a feasible point whose
        // objective equals the reported best.
        let y = crate::completion::complete(&case, &constants, &loads, &best_xi, &config).unwrap();
        let resid = dual_residuals(&case, &constants, &y).unwrap().max_violation();
        assert!(resid <= BOUND_RESIDUAL_TOL);
        let z = crate::soc::dual_objective(&case, &loads, &y);
        assert!((z - traj.last().unwrap()).abs() <= 1e-9 * (1.0 + z.abs()));
    }

    #[test]
    fn evaluate_gap_statistics() {
        let (case, constants) = setup();
        let config = CompletionConfig::default();
        let params = init_proxy(&case, &tiny_arch(), &config).unwrap();
        let dataset = tiny_dataset(&case, 6);
        let report = evaluate(&params, &case, &constants, &dataset.instances, None, &config).unwrap();
        assert_eq!(report.bounds.len(), 6);
        assert!(report.gaps.is_none());

        // Refs equal to the bounds themselves: all gaps zero.
        let refs = report.bounds.clone();
        let with_refs = evaluate(&params, &case, &constants, &dataset.instances, Some(&refs), &config)
            .unwrap();
        let gaps = with_refs.gaps.unwrap();
        assert!(gaps.iter().all(|g| g.abs() <= 1e-12));
        assert_eq!(with_refs.geo_mean_clamped, gaps.len());

        // A hand-built pair: z* = 100, bound 98 -> max gap 0.02.
        let one = vec![dataset.instances[0].clone()];
        let single = evaluate(&params, &case, &constants, &one, Some(&[100.0]), &config);
        // The bound is whatever the untrained net yields; force the check
        // through optimality_gap directly instead.
        assert!(single.is_ok());
        assert_eq!(optimality_gap(100.0, 98.0).unwrap(), 0.02);

        // Mismatched reference length is an error.
        assert!(matches!(
            evaluate(&params, &case, &constants, &dataset.instances, Some(&[1.0]), &config),
            Err(Error::MissingRefs(_))
        ));
    }
}
