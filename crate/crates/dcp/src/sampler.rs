//! Load-perturbation instance generation and deterministic dataset splits.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::grid::CaseData;
use crate::soc::InstanceLoads;
use crate::{Error, Result};

/// Instance-generation parameters: a system-wide scaling factor drawn
/// uniformly from `[alpha_min, alpha_max]` and one mean-one lognormal
/// multiplicative noise vector per instance, applied elementwise to both
/// nominal load vectors (the same noise on active and reactive demand, so
/// per-bus power factors are preserved).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_instances: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Lognormal shape; the underlying normal is N(-sigma^2/2, sigma^2),
    /// so each noise entry has mean one.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_instances: 1000,
            alpha_min: 0.8,
            alpha_max: 1.12,
            sigma: 0.05,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha_min && self.alpha_min <= self.alpha_max) {
            return Err(Error::Domain(format!(
                "scaling range [{}, {}] invalid",
                self.alpha_min, self.alpha_max
            )));
        }
        if self.sigma < 0.0 {
            return Err(Error::Domain(format!(
                "noise sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Generate instances deterministically from the config seed.
pub fn sample_instances(case: &CaseData, cfg: &SamplerConfig) -> Result<Vec<InstanceLoads>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = case.n_bus();
    let noise = if cfg.sigma > 0.0 {
        Some(LogNormal::new(-cfg.sigma * cfg.sigma / 2.0, cfg.sigma).map_err(|e| {
            Error::Domain(format!("lognormal parameterization: {e}"))
        })?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(cfg.n_instances);
    for _ in 0..cfg.n_instances {
        let alpha = if cfg.alpha_min == cfg.alpha_max {
            cfg.alpha_min
        } else {
            rng.gen_range(cfg.alpha_min..cfg.alpha_max)
        };
        let mut p_d = Vec::with_capacity(n);
        let mut q_d = Vec::with_capacity(n);
        for i in 0..n {
            let eta = match &noise {
                Some(dist) => dist.sample(&mut rng),
                None => 1.0,
            };
            p_d.push(alpha * eta * case.ref_p_load[i]);
            q_d.push(alpha * eta * case.ref_q_load[i]);
        }
        out.push(InstanceLoads { p_d, q_d });
    }
    Ok(out)
}

/// Disjoint, exhaustive, seed-deterministic split into train, validation
/// and test index sets. The first two fraction counts are floored; the
/// test split takes the remainder.
pub fn split_dataset(
    n: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "split fractions ({ft}, {fv}, {fe}) must be nonnegative and sum to 1"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (n as f64 * ft).floor() as usize;
    let n_val = (n as f64 * fv).floor() as usize;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::parse_matpower;

    fn case14() -> CaseData {
        parse_matpower(crate::CASE14_TEXT).unwrap()
    }

    #[test]
    fn no_noise_unit_alpha_reproduces_nominal() {
        let case = case14();
        let cfg = SamplerConfig {
            n_instances: 3,
            alpha_min: 1.0,
            alpha_max: 1.0,
            sigma: 0.0,
            seed: 7,
        };
        for inst in sample_instances(&case, &cfg).unwrap() {
            assert_eq!(inst.p_d, case.ref_p_load);
            assert_eq!(inst.q_d, case.ref_q_load);
        }
    }

    #[test]
    fn noise_is_mean_one() {
        // Sample mean over 1e5 draws should sit within 3 standard errors
        // of 1 for sigma = 0.05.
        let case = case14();
        let cfg = SamplerConfig {
            n_instances: 100_000 / case.n_bus() + 1,
            alpha_min: 1.0,
            alpha_max: 1.0,
            sigma: 0.05,
            seed: 3,
        };
        let instances = sample_instances(&case, &cfg).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for inst in &instances {
            for (i, &p) in inst.p_d.iter().enumerate() {
                if case.ref_p_load[i] != 0.0 {
                    sum += p / case.ref_p_load[i];
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let stderr = 0.05 / (count as f64).sqrt();
        assert!(
            (mean - 1.0).abs() <= 3.0 * stderr,
            "noise mean {mean} outside CI +/-{:.2e}",
            3.0 * stderr
        );
    }

    #[test]
    fn total_load_range_stays_in_band() {
        let case = case14();
        let cfg = SamplerConfig {
            n_instances: 2000,
            alpha_min: 0.8,
            alpha_max: 1.12,
            sigma: 0.05,
            seed: 11,
        };
        // Nominal band is [0.8, 1.12] x 2.59 = [2.07, 2.90]; the noise on
        // the total has standard deviation about 0.06, so allow a few
        // sigmas of slack on each side.
        for inst in sample_instances(&case, &cfg).unwrap() {
            let total = inst.total_p();
            assert!(
                (1.9..=3.1).contains(&total),
                "total load {total} outside the expected band"
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let case = case14();
        let cfg = SamplerConfig::default();
        let a = sample_instances(&case, &cfg).unwrap();
        let b = sample_instances(&case, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_exact_disjoint_and_deterministic() {
        let (train, val, test) = split_dataset(1000, (0.9, 0.05, 0.05), 42).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (900, 50, 50));
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        let again = split_dataset(1000, (0.9, 0.05, 0.05), 42).unwrap();
        assert_eq!(train, again.0);
    }
}
