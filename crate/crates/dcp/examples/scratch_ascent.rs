// Acceptance-flow probe: pinned training config vs committed refs.
use dcp::completion::CompletionConfig;
use dcp::grid::{derive_branch_constants, parse_matpower};
use dcp::proxy::{init_proxy, ArchConfig, HiddenAct};
use dcp::sampler::{sample_instances, split_dataset, SamplerConfig};
use dcp::soc::InstanceLoads;
use dcp::trainer::{evaluate, train, Dataset, TrainConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let case = parse_matpower(dcp::CASE14_TEXT).unwrap();
    let constants = derive_branch_constants(&case).unwrap();
    let config = CompletionConfig::default();
    let sampler = SamplerConfig {
        n_instances: 1138,
        alpha_min: 0.8,
        alpha_max: 1.12,
        sigma: 0.05,
        seed: 7,
    };
    let instances = sample_instances(&case, &sampler).unwrap();
    let (train_idx, val_idx, test_idx) = split_dataset(instances.len(), (0.9, 0.05, 0.05), 7).unwrap();
    let dataset = Dataset { instances, train_idx, val_idx, test_idx };
    let arch = ArchConfig {
        trunk: vec![64, 64],
        head_hidden: vec![32],
        activation: HiddenAct::Softplus,
        scale_lambda: 1e1,
        scale_flow: 1e0,
        scale_mu: 1e0,
        scale_omega: 1e1,
        seed: 7,
    };
    let params = init_proxy(&case, &arch, &config).unwrap();
    let tcfg = TrainConfig {
        batch_size: 32,
        epochs: 120,
        step_size: 1e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let (best, history) = train(&params, &case, &constants, &dataset, &tcfg).unwrap();
    println!("trained in {:.1}s, best val bound {:.4} at epoch {}", history.wall_seconds, history.best_val_bound, history.best_epoch);

    // refs file
    let refs: dcp::io::TestRefs = dcp::io::load_json(std::path::Path::new("crates/dcp/fixtures/case14_testrefs.json")).unwrap();
    let testset: Vec<InstanceLoads> = refs.refs.iter().map(|r| dataset.instances[r.index].clone()).collect();
    for (r, inst) in refs.refs.iter().zip(&testset) {
        assert!((inst.total_p() - r.total_p).abs() <= 1e-12, "ref alignment broken");
    }
    let ref_objs: Vec<f64> = refs.refs.iter().map(|r| r.objective).collect();
    let report = evaluate(&best, &case, &constants, &testset, Some(&ref_objs), &config).unwrap();
    println!(
        "test: mean gap {:.4}%  std {:.4}%  max {:.4}%  geo {:.4}%  min gap {:.4}%",
        report.mean_gap.unwrap() * 100.0,
        report.std_gap.unwrap() * 100.0,
        report.max_gap.unwrap() * 100.0,
        report.geo_mean_gap.unwrap() * 100.0,
        report.gaps.as_ref().unwrap().iter().cloned().fold(f64::INFINITY, f64::min) * 100.0,
    );
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
