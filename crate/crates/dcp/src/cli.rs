//! Command-line surface. The `dcp` binary is a thin wrapper around
//! [`dispatch`]; every subcommand is also reachable through the library
//! and the examples.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::completion::{CompletionConfig, FlowChoice, IndependentVars, OmegaRepr};
use crate::graph::BoundGraph;
use crate::grid::{count_independent, derive_branch_constants, parse_matpower, CaseData};
use crate::io::{self, Artifact};
use crate::proxy::{init_proxy, ArchConfig, ProxyParams};
use crate::sampler::{sample_instances, split_dataset, SamplerConfig};
use crate::soc::InstanceLoads;
use crate::trainer::{dual_ascent, evaluate, train, Dataset, StepRule, TrainConfig};
use crate::{Error, Result};

/// Optional JSON configuration file consumed by `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FileConfig {
    pub completion: Option<CompletionConfig>,
    pub arch: Option<ArchConfig>,
    pub train: Option<TrainConfig>,
    pub sampler: Option<SamplerConfig>,
    pub ascent: Option<StepRule>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FlowArg {
    Lambda,
    Nu,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OmegaArg {
    Rect,
    Polar,
}

#[derive(Debug, Clone, Args)]
struct ConfigArgs {
    /// JSON configuration file (completion / arch / train / sampler blocks).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which flow-dual block the model predicts.
    #[arg(long, value_enum)]
    flow: Option<FlowArg>,
    /// Representation of the rotated-cone heads.
    #[arg(long, value_enum)]
    omega: Option<OmegaArg>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(FileConfig, CompletionConfig)> {
        let file: FileConfig = match &self.config {
            Some(path) => io::load_json(path)?,
            None => FileConfig::default(),
        };
        let mut completion = file.completion.unwrap_or_default();
        if let Some(flow) = self.flow {
            completion.flow_choice = match flow {
                FlowArg::Lambda => FlowChoice::LambdaFlows,
                FlowArg::Nu => FlowChoice::NuFlows,
            };
        }
        if let Some(omega) = self.omega {
            completion.omega_repr = match omega {
                OmegaArg::Rect => OmegaRepr::Rectangular,
                OmegaArg::Polar => OmegaRepr::Polar,
            };
        }
        Ok((file, completion))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dcp",
    version = crate::VERSION,
    about = "Certified lower bounds for AC optimal power flow via its second-order cone relaxation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a case file and print its statistics.
    Inspect {
        #[arg(long)]
        case: PathBuf,
        /// Directory for the canonical case.json dump.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample load instances into dataset.jsonl.
    Sample {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Self-supervised training; writes model.json, history.json and
    /// dataset.jsonl (when sampled here).
    Train {
        #[arg(long)]
        case: PathBuf,
        /// Existing dataset.jsonl; sampled fresh when absent.
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a trained model on instances; writes eval.json.
    Eval {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        /// JSON array of reference objectives aligned with the instances.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Projected gradient ascent on one instance from a zero prediction.
    Ascent {
        #[arg(long)]
        case: PathBuf,
        /// dataset.jsonl; the nominal instance is used when absent.
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Repair an external dual solution and certify its bound.
    Certify {
        #[arg(long)]
        case: PathBuf,
        /// dual.json with the external solution.
        #[arg(long)]
        dual: PathBuf,
        /// instance.json with the demands; nominal loads when absent.
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference check of the bound gradient; writes
    /// gradreport.json.
    Gradcheck {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the invariant suite on the bundled 14-bus case.
    Selftest,
}

/// DCP_SEED overrides any `--seed` value when set.
fn resolve_seed(cli_seed: Option<u64>, default: u64) -> u64 {
    if let Ok(env) = std::env::var("DCP_SEED") {
        if let Ok(v) = env.parse::<u64>() {
            return v;
        }
    }
    cli_seed.unwrap_or(default)
}

fn read_case(path: &Path) -> Result<CaseData> {
    let text = std::fs::read_to_string(path)?;
    parse_matpower(&text)
}

/// Parse and run; returns the process exit code (0 success, 1 domain
/// error, 2 usage error).
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Inspect { case, out } => {
            let case = read_case(&case)?;
            let polar = count_independent(&case, &CompletionConfig::default());
            let rect = count_independent(
                &case,
                &CompletionConfig {
                    omega_repr: OmegaRepr::Rectangular,
                    ..CompletionConfig::default()
                },
            );
            println!("case        : {}", case.name);
            println!("buses       : {}", case.n_bus());
            println!("branches    : {}", case.n_branch());
            println!("independent : {polar} (polar) / {rect} (rectangular)");
            println!("total load  : {:.4} + j{:.4} pu", case.total_p_load(), case.total_q_load());
            for w in &case.warnings {
                println!("warning     : {w}");
            }
            if let Some(dir) = out {
                let path = dir.join("case.json");
                io::save_json(&path, &Artifact::new(json!({}), &case))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Sample { case, seed, n, out, cfg } => {
            let case = read_case(&case)?;
            let (file, _) = cfg.load()?;
            let mut sampler = file.sampler.unwrap_or_default();
            sampler.n_instances = n;
            sampler.seed = resolve_seed(seed, sampler.seed);
            let instances = sample_instances(&case, &sampler)?;
            let path = out.join("dataset.jsonl");
            io::save_dataset(&path, &instances)?;
            println!("wrote {} instances to {}", instances.len(), path.display());
        }
        Command::Train {
            case,
            instances,
            seed,
            epochs,
            batch,
            out,
            cfg,
        } => {
            let case = read_case(&case)?;
            let constants = derive_branch_constants(&case)?;
            let (file, completion) = cfg.load()?;
            let seed = resolve_seed(seed, 0);

            let instance_list = match &instances {
                Some(path) => io::load_dataset(path)?,
                None => {
                    let mut sampler = file.sampler.unwrap_or_default();
                    sampler.seed = seed;
                    let list = sample_instances(&case, &sampler)?;
                    io::save_dataset(&out.join("dataset.jsonl"), &list)?;
                    list
                }
            };

            let mut tcfg = file.train.unwrap_or_default();
            tcfg.seed = seed;
            if let Some(e) = epochs {
                tcfg.epochs = e;
            }
            if let Some(b) = batch {
                tcfg.batch_size = b;
            }
            let (train_idx, val_idx, test_idx) =
                split_dataset(instance_list.len(), tcfg.fractions, tcfg.seed)?;
            let dataset = Dataset {
                instances: instance_list,
                train_idx,
                val_idx,
                test_idx,
            };

            let mut arch = file.arch.unwrap_or_default();
            arch.seed = seed;
            let params = init_proxy(&case, &arch, &completion)?;
            println!(
                "training {} parameters on {} instances ({} epochs, batch {})",
                params.param_count(),
                dataset.train_idx.len(),
                tcfg.epochs,
                tcfg.batch_size
            );
            let (best, history) = train(&params, &case, &constants, &dataset, &tcfg)?;
            let config_echo = json!({
                "completion": completion,
                "arch": arch,
                "train": tcfg,
            });
            io::save_json(&out.join("model.json"), &Artifact::new(config_echo.clone(), &best))?;
            io::save_json(&out.join("history.json"), &Artifact::new(config_echo, &history))?;
            println!(
                "best validation bound {:.6} at epoch {} ({:.1}s)",
                history.best_val_bound, history.best_epoch, history.wall_seconds
            );

            let testset: Vec<InstanceLoads> = dataset
                .test_idx
                .iter()
                .map(|&i| dataset.instances[i].clone())
                .collect();
            if !testset.is_empty() {
                let report = evaluate(&best, &case, &constants, &testset, None, &completion)?;
                io::save_json(
                    &out.join("eval.json"),
                    &Artifact::new(json!({"completion": completion}), &report),
                )?;
            }
        }
        Command::Eval {
            case,
            model,
            instances,
            refs,
            out,
        } => {
            let case = read_case(&case)?;
            let constants = derive_branch_constants(&case)?;
            let artifact: Artifact<ProxyParams> = io::load_json(&model)?;
            let params = artifact.data;
            let instances = io::load_dataset(&instances)?;
            let ref_values: Option<Vec<f64>> = match &refs {
                Some(path) => Some(io::load_json(path)?),
                None => None,
            };
            let report = evaluate(
                &params,
                &case,
                &constants,
                &instances,
                ref_values.as_deref(),
                &params.completion,
            )?;
            if let (Some(mean), Some(max)) = (report.mean_gap, report.max_gap) {
                println!("mean gap {:.4e}  max gap {:.4e}", mean, max);
            }
            println!(
                "{} bounds in {:.3}s",
                report.bounds.len(),
                report.batch_seconds
            );
            io::save_json(
                &out.join("eval.json"),
                &Artifact::new(json!({"completion": params.completion}), &report),
            )?;
        }
        Command::Ascent {
            case,
            instances,
            steps,
            out,
            cfg,
        } => {
            let case = read_case(&case)?;
            let constants = derive_branch_constants(&case)?;
            let (file, completion) = cfg.load()?;
            let rule = file.ascent.unwrap_or_default();
            let loads = match &instances {
                Some(path) => io::load_dataset(path)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Domain("empty instance file".into()))?,
                None => InstanceLoads::nominal(&case),
            };
            let xi0 = IndependentVars::zeros(&case, &completion);
            let (xi, traj) = dual_ascent(&case, &constants, &loads, xi0, steps, &rule, &completion)?;
            println!(
                "bound {:.6} -> {:.6} after {} steps",
                traj.first().copied().unwrap_or(f64::NAN),
                traj.last().copied().unwrap_or(f64::NAN),
                steps
            );
            io::save_json(
                &out.join("ascent.json"),
                &Artifact::new(
                    json!({"completion": completion, "rule": rule}),
                    &json!({"trajectory": traj}),
                ),
            )?;
            io::save_json(
                &out.join("xi.json"),
                &io::XiFile {
                    config: completion,
                    xi,
                },
            )?;
        }
        Command::Certify {
            case,
            dual,
            instances,
            out,
            cfg,
        } => {
            let case = read_case(&case)?;
            let constants = derive_branch_constants(&case)?;
            let (_, completion) = cfg.load()?;
            let hash = io::sha256_file(&dual).ok();
            let y_ext = io::load_json(&dual)?;
            let loads = match &instances {
                Some(path) => {
                    let inst: InstanceLoads = io::load_json(path)?;
                    inst
                }
                None => InstanceLoads::nominal(&case),
            };
            let cert = crate::certify::certify(&case, &constants, &loads, &y_ext, &completion, hash)?;
            println!(
                "certified bound {:.6} (pre-repair residual {:.2e}, post {:.2e})",
                cert.bound,
                cert.pre_repair.max_violation(),
                cert.post_repair.max_violation()
            );
            io::save_json(
                &out.join("certified.json"),
                &Artifact::new(json!({"completion": completion}), &cert),
            )?;
        }
        Command::Gradcheck { case, seed, out, cfg } => {
            let case = read_case(&case)?;
            let constants = derive_branch_constants(&case)?;
            let (_, completion) = cfg.load()?;
            let seed = resolve_seed(seed, 0);
            let report = gradcheck_bound(&case, &constants, &completion, seed)?;
            println!(
                "{} coordinates, worst smooth relative error {:.2e}, {} kinks",
                report.entries.len(),
                report.max_smooth_error(),
                report.kinks
            );
            io::save_json(
                &out.join("gradreport.json"),
                &Artifact::new(json!({"completion": completion}), &report),
            )?;
        }
        Command::Selftest => {
            let checks = crate::selftest::run()?;
            let mut all_pass = true;
            for c in &checks {
                println!("{} {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                all_pass &= c.pass;
            }
            if !all_pass {
                return Err(Error::Validation("selftest failed".into()));
            }
        }
    }
    Ok(())
}

/// Central-difference check of the bound gradient with respect to the
/// balance duals at a random sign-feasible prediction.
pub fn gradcheck_bound(
    case: &CaseData,
    constants: &crate::grid::BranchConstants,
    config: &CompletionConfig,
    seed: u64,
) -> Result<crate::autodiff::GradReport> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = BoundGraph::build(case, constants, config)?;
    let loads = InstanceLoads::nominal(case);
    graph.set_loads(&loads.p_d, &loads.q_d);
    let xi = crate::selftest::random_xi(case, config, &mut rng);
    graph.set_xi(&xi);
    graph.forward()?;

    let n = case.n_bus();
    let coords: Vec<usize> = (0..64.min(n)).map(|k| k % n).collect();
    let input = graph.xi.lambda_p;
    let objective = graph.objective;
    crate::autodiff::gradcheck(
        &mut graph.tape,
        "bound/lambda_p",
        input,
        objective,
        &coords,
        1e-5,
    )
}
