// Scratch experiment for tuning the ascent step rule and training config.
use dcp::completion::{CompletionConfig, IndependentVars};
use dcp::grid::{derive_branch_constants, parse_matpower};
use dcp::io::case14_fixture;
use dcp::proxy::{init_proxy, ArchConfig};
use dcp::sampler::{sample_instances, split_dataset, SamplerConfig};
use dcp::soc::InstanceLoads;
use dcp::trainer::{dual_ascent, train, Dataset, StepRule, TrainConfig};

fn main() {
    let case = parse_matpower(dcp::CASE14_TEXT).unwrap();
    let constants = derive_branch_constants(&case).unwrap();
    let fx = case14_fixture().unwrap();
    let loads = InstanceLoads::nominal(&case);
    let config = CompletionConfig::default();

    // --- ascent step sweep ---
    for step in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
        let rule = StepRule {
            initial_step: step,
            max_halvings: 5,
            patience: 20,
        };
        let xi0 = IndependentVars::zeros(&case, &config);
        let (_, traj) =
            dual_ascent(&case, &constants, &loads, xi0, 500, &rule, &config).unwrap();
        let best = traj.last().unwrap();
        let gap = (fx.primal_objective - best) / fx.primal_objective;
        println!(
            "ascent step {step:5.1}: bound {best:9.4} gap {:7.3}%  (50 steps: {:9.4})",
            gap * 100.0,
            traj[50.min(traj.len() - 1)]
        );
    }

    // --- training probe ---
    let t0 = std::time::Instant::now();
    let sampler = SamplerConfig {
        n_instances: 1138,
        seed: 2024,
        ..SamplerConfig::default()
    };
    let instances = sample_instances(&case, &sampler).unwrap();
    let (train_idx, val_idx, test_idx) = split_dataset(instances.len(), (0.9, 0.05, 0.05), 2024).unwrap();
    println!(
        "dataset: {} train / {} val / {} test",
        train_idx.len(),
        val_idx.len(),
        test_idx.len()
    );
    let dataset = Dataset {
        instances,
        train_idx,
        val_idx,
        test_idx,
    };
    let arch = ArchConfig {
        trunk: vec![64, 64],
        head_hidden: vec![32],
        scale_lambda: 1e1,
        scale_flow: 1e0,
        scale_mu: 1e0,
        scale_omega: 1e1,
        seed: 2024,
        ..ArchConfig::default()
    };
    let params = init_proxy(&case, &arch, &config).unwrap();
    println!("params: {}", params.param_count());
    let tcfg = TrainConfig {
        batch_size: 32,
        epochs: 80,
        step_size: 1e-3,
        seed: 2024,
        ..TrainConfig::default()
    };
    let (_best, history) = train(&params, &case, &constants, &dataset, &tcfg).unwrap();
    for e in history.epochs.iter().step_by(5) {
        println!(
            "epoch {:3}  loss {:9.5}  val bound {:9.4}",
            e.epoch, e.mean_train_loss, e.mean_val_bound
        );
    }
    println!(
        "best val bound {:.4} at epoch {} in {:.1}s (fixture optimum {:.4})",
        history.best_val_bound,
        history.best_epoch,
        t0.elapsed().as_secs_f64(),
        fx.primal_objective
    );
}
