//! Per-unit grid data model and the real branch-flow coefficients of the
//! lifted (w, w_re, w_im) formulation.

mod constants;
mod matpower;

pub use constants::{derive_branch_constants, BranchConstants, BranchGamma};
pub use matpower::parse_matpower;

use serde::{Deserialize, Serialize};

use crate::completion::{CompletionConfig, OmegaRepr};

/// One bus of the network, in per-unit on the system base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External id from the case file.
    pub ext_id: usize,
    /// Active / reactive shunt admittance (g_s, b_s), per-unit.
    pub g_shunt: f64,
    pub b_shunt: f64,
    /// Voltage magnitude bounds, per-unit. `v_min > 0`.
    pub v_min: f64,
    pub v_max: f64,
}

/// One oriented branch (arc) of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Internal (dense) endpoint indices.
    pub from: usize,
    pub to: usize,
    /// Series admittance g + jb, per-unit.
    pub g: f64,
    pub b: f64,
    /// Charging admittance on the from / to side (conductance, susceptance).
    pub g_charge_from: f64,
    pub b_charge_from: f64,
    pub g_charge_to: f64,
    pub b_charge_to: f64,
    /// Tap magnitude, strictly positive (1.0 for plain lines).
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
    /// Apparent-power limit in per-unit; `None` means unbounded
    /// (a zero rating in the file).
    pub s_max: Option<f64>,
    /// Angle-difference bounds in radians, clamped inside (-pi/2, pi/2)
    /// so their tangents are finite.
    pub angle_min: f64,
    pub angle_max: f64,
}

/// Aggregated generation at one bus. Buses without generators carry a
/// dummy entry with zero bounds and zero cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggGen {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Linear cost coefficient per unit of per-unit active generation.
    pub cost: f64,
}

/// Validated per-unit description of one network.
///
/// All power quantities are per-unit on `base_mva`; angles are radians.
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseData {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Exactly one aggregated generator per bus.
    pub gens: Vec<AggGen>,
    /// Nominal active / reactive demand per bus, per-unit.
    pub ref_p_load: Vec<f64>,
    pub ref_q_load: Vec<f64>,
    /// Non-fatal irregularities found while building the case
    /// (aggregation fallbacks, clamped angle bounds, ...).
    pub warnings: Vec<String>,
}

impl CaseData {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branch(&self) -> usize {
        self.branches.len()
    }

    /// Total nominal active load, per-unit.
    pub fn total_p_load(&self) -> f64 {
        self.ref_p_load.iter().sum()
    }

    /// Total nominal reactive load, per-unit.
    pub fn total_q_load(&self) -> f64 {
        self.ref_q_load.iter().sum()
    }

    /// Arcs leaving / entering each bus, by branch index.
    pub fn incidence(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut out = vec![Vec::new(); self.n_bus()];
        let mut inc = vec![Vec::new(); self.n_bus()];
        for (e, br) in self.branches.iter().enumerate() {
            out[br.from].push(e);
            inc[br.to].push(e);
        }
        (out, inc)
    }
}

/// Number of independent dual variables the completion expects.
///
/// Polar omega handling predicts one angle per branch; rectangular predicts
/// both cone heads, so it carries one extra variable per branch.
pub fn count_independent(case: &CaseData, config: &CompletionConfig) -> usize {
    let n = case.n_bus();
    let m = case.n_branch();
    match config.omega_repr {
        OmegaRepr::Polar => 2 * n + 7 * m,
        OmegaRepr::Rectangular => 2 * n + 8 * m,
    }
}
