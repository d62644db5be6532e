//! Repair of external dual vectors to exact feasibility.
//!
//! An external solution (for example one produced by an interior-point
//! solver at loose tolerance) is projected onto the feasible set by
//! extracting its independent coordinates and re-running the completion.
//! The repaired point satisfies every dual constraint at roundoff level,
//! so its objective is a valid bound regardless of how violated the input
//! was. Different completion configurations may repair the same input to
//! different bounds; the configuration is echoed in the output.

use serde::{Deserialize, Serialize};

use crate::completion::{complete, extract_independent, CompletionConfig};
use crate::grid::{BranchConstants, CaseData};
use crate::soc::{dual_objective, dual_residuals, DualSolution, InstanceLoads, ResidualReport};
use crate::trainer::BOUND_RESIDUAL_TOL;
use crate::{Error, Result};

/// Outcome of a repair: the certified bound with before/after residual
/// reports and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifiedBound {
    pub bound: f64,
    pub pre_repair: ResidualReport,
    pub post_repair: ResidualReport,
    pub config: CompletionConfig,
    /// SHA-256 of the input dual file, when it came from disk.
    pub input_sha256: Option<String>,
    pub clamped_coordinates: usize,
    pub version: String,
}

/// Repair `y_ext` to exact dual feasibility and certify its bound.
///
/// The input only needs the right dimensions; no feasibility is assumed.
/// Fails rather than returning a bound if the repaired residuals exceed
/// [`BOUND_RESIDUAL_TOL`].
pub fn certify(
    case: &CaseData,
    constants: &BranchConstants,
    loads: &InstanceLoads,
    y_ext: &DualSolution,
    config: &CompletionConfig,
    input_sha256: Option<String>,
) -> Result<CertifiedBound> {
    let pre_repair = dual_residuals(case, constants, y_ext)?;
    let (xi, clamped) = extract_independent(y_ext, case, config)?;
    let repaired = complete(case, constants, loads, &xi, config)?;
    let post_repair = dual_residuals(case, constants, &repaired)?;
    let worst = post_repair.max_violation();
    if worst > BOUND_RESIDUAL_TOL {
        return Err(Error::Validation(format!(
            "repair left residual {worst:.3e} above {BOUND_RESIDUAL_TOL:.0e}; refusing to certify"
        )));
    }
    Ok(CertifiedBound {
        bound: dual_objective(case, loads, &repaired),
        pre_repair,
        post_repair,
        config: *config,
        input_sha256,
        clamped_coordinates: clamped,
        version: crate::VERSION.to_string(),
    })
}
