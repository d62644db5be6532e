//! Parser for the MATPOWER `.m` subset used by the bundled cases:
//! `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch`, `mpc.gencost`.
//! Comments, the version line, and unknown `mpc.*` fields are ignored.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use crate::grid::{AggGen, Branch, Bus, CaseData};
use crate::{Error, Result};

/// Angle bounds are clamped inside +/-(pi/2 - ANGLE_MARGIN) so tangents
/// stay finite in the angle-difference constraints.
const ANGLE_MARGIN: f64 = 1e-3;

// MATPOWER column positions.
const BUS_I: usize = 0;
const BUS_PD: usize = 2;
const BUS_QD: usize = 3;
const BUS_GS: usize = 4;
const BUS_BS: usize = 5;
const BUS_VMAX: usize = 11;
const BUS_VMIN: usize = 12;

const GEN_BUS: usize = 0;
const GEN_QMAX: usize = 3;
const GEN_QMIN: usize = 4;
const GEN_STATUS: usize = 7;
const GEN_PMAX: usize = 8;
const GEN_PMIN: usize = 9;

const BR_F: usize = 0;
const BR_T: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const BR_RATE_A: usize = 5;
const BR_TAP: usize = 8;
const BR_SHIFT: usize = 9;
const BR_STATUS: usize = 10;
const BR_ANGMIN: usize = 11;
const BR_ANGMAX: usize = 12;

/// One numeric row with the source line it started on.
struct Row {
    line: usize,
    vals: Vec<f64>,
}

struct RawCase {
    name: String,
    base_mva: Option<f64>,
    tables: HashMap<String, Vec<Row>>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn scan(text: &str) -> Result<RawCase> {
    let mut raw = RawCase {
        name: String::new(),
        base_mva: None,
        tables: HashMap::new(),
    };
    let mut open_name: Option<String> = None;
    let mut rows: Vec<Row> = Vec::new();
    let mut pending: Vec<f64> = Vec::new();
    let mut pending_line = 0usize;

    for (idx, full_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut line = strip_comment(full_line).trim();
        if line.is_empty() {
            continue;
        }

        if open_name.is_none() {
            if let Some(rest) = line.strip_prefix("function") {
                raw.name = rest.rsplit('=').next().unwrap_or("").trim().to_string();
                continue;
            }
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some((field, tail)) = rest.split_once('=') else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected '=' after mpc field: {line}"),
                });
            };
            let field = field.trim().to_string();
            let tail = tail.trim();
            if field == "baseMVA" {
                let v = tail.trim_end_matches(';').trim();
                let mva: f64 = v.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid baseMVA value '{v}'"),
                })?;
                raw.base_mva = Some(mva);
                continue;
            }
            match tail.strip_prefix('[') {
                Some(body) => {
                    open_name = Some(field);
                    rows = Vec::new();
                    pending = Vec::new();
                    pending_line = lineno;
                    line = body.trim();
                    if line.is_empty() {
                        continue;
                    }
                }
                None => continue, // scalar or string field; ignored
            }
        }

        // Inside a table: rows end at ';'; the table ends at ']'.
        let (content, closes) = match line.find(']') {
            Some(pos) => (line[..pos].trim(), true),
            None => (line, false),
        };
        for piece in content.split_inclusive(';') {
            let ends_row = piece.ends_with(';');
            for tok in piece.trim_end_matches(';').split_whitespace() {
                if pending.is_empty() {
                    pending_line = lineno;
                }
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid numeric token '{tok}'"),
                })?;
                pending.push(v);
            }
            if ends_row && !pending.is_empty() {
                rows.push(Row {
                    line: pending_line,
                    vals: std::mem::take(&mut pending),
                });
            }
        }
        if closes {
            if !pending.is_empty() {
                rows.push(Row {
                    line: pending_line,
                    vals: std::mem::take(&mut pending),
                });
            }
            let name = open_name.take().expect("table open");
            raw.tables.insert(name, std::mem::take(&mut rows));
        }
    }

    if let Some(name) = open_name {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("table mpc.{name} not closed with ']'"),
        });
    }
    Ok(raw)
}

fn get(row: &Row, col: usize) -> Result<f64> {
    row.vals.get(col).copied().ok_or_else(|| Error::Parse {
        line: row.line,
        msg: format!(
            "row has {} columns, expected at least {}",
            row.vals.len(),
            col + 1
        ),
    })
}

/// Parse MATPOWER-style case text into a validated per-unit [`CaseData`].
///
/// Out-of-service branches and generators are dropped; generators are
/// aggregated to one per bus (bounds summed, minimum in-service cost kept);
/// buses without a generator receive a dummy zero-capacity entry. Only
/// polynomial costs with a zero quadratic coefficient are accepted.
pub fn parse_matpower(text: &str) -> Result<CaseData> {
    let raw = scan(text)?;
    let mut warnings = Vec::new();

    let base_mva = raw
        .base_mva
        .ok_or_else(|| Error::Validation("missing mpc.baseMVA".into()))?;
    if !(base_mva > 0.0) {
        return Err(Error::Validation(format!(
            "baseMVA must be positive, got {base_mva}"
        )));
    }

    let bus_rows = raw
        .tables
        .get("bus")
        .ok_or_else(|| Error::Validation("missing mpc.bus table".into()))?;
    let gen_rows = raw
        .tables
        .get("gen")
        .ok_or_else(|| Error::Validation("missing mpc.gen table".into()))?;
    let branch_rows = raw
        .tables
        .get("branch")
        .ok_or_else(|| Error::Validation("missing mpc.branch table".into()))?;
    let cost_rows = raw
        .tables
        .get("gencost")
        .ok_or_else(|| Error::Validation("missing mpc.gencost table".into()))?;

    // Buses.
    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut ref_p_load = Vec::with_capacity(bus_rows.len());
    let mut ref_q_load = Vec::with_capacity(bus_rows.len());
    let mut index_of: HashMap<usize, usize> = HashMap::new();
    for row in bus_rows {
        let ext_id = get(row, BUS_I)? as usize;
        let v_max = get(row, BUS_VMAX)?;
        let v_min = get(row, BUS_VMIN)?;
        if !(v_min > 0.0) {
            return Err(Error::Validation(format!(
                "bus {ext_id}: v_min must be positive, got {v_min}"
            )));
        }
        if v_max < v_min {
            return Err(Error::Validation(format!(
                "bus {ext_id}: v_max {v_max} below v_min {v_min}"
            )));
        }
        if index_of.insert(ext_id, buses.len()).is_some() {
            return Err(Error::Validation(format!("duplicate bus id {ext_id}")));
        }
        ref_p_load.push(get(row, BUS_PD)? / base_mva);
        ref_q_load.push(get(row, BUS_QD)? / base_mva);
        buses.push(Bus {
            ext_id,
            g_shunt: get(row, BUS_GS)? / base_mva,
            b_shunt: get(row, BUS_BS)? / base_mva,
            v_min,
            v_max,
        });
    }
    let n_bus = buses.len();

    // Generator costs: one row per generator (optionally followed by
    // reactive-cost rows, which are ignored), polynomial model with a zero
    // quadratic term. Piecewise-linear data is rejected outright.
    if cost_rows.len() != gen_rows.len() && cost_rows.len() != 2 * gen_rows.len() {
        return Err(Error::Validation(format!(
            "gencost has {} rows for {} generators",
            cost_rows.len(),
            gen_rows.len()
        )));
    }
    let mut lin_cost = Vec::with_capacity(gen_rows.len());
    for row in cost_rows.iter().take(gen_rows.len()) {
        let model = get(row, 0)?;
        if model != 2.0 {
            return Err(Error::UnsupportedCost(format!(
                "line {}: only polynomial cost model 2 is supported, got model {model}",
                row.line
            )));
        }
        let ncost = get(row, 3)? as usize;
        let coeffs = &row.vals[4..];
        if coeffs.len() < ncost {
            return Err(Error::Parse {
                line: row.line,
                msg: format!(
                    "gencost row declares {ncost} coefficients, found {}",
                    coeffs.len()
                ),
            });
        }
        // Coefficients are highest order first; anything above linear must
        // be exactly zero. Constant terms are dropped (the objective is
        // linear in generation).
        let c1 = match ncost {
            0 | 1 => 0.0,
            d => {
                for (k, &c) in coeffs[..d - 2].iter().enumerate() {
                    if c != 0.0 {
                        return Err(Error::UnsupportedCost(format!(
                            "line {}: nonzero degree-{} cost coefficient {c}",
                            row.line,
                            d - 1 - k
                        )));
                    }
                }
                coeffs[d - 2]
            }
        };
        lin_cost.push(c1);
    }

    // In-service generators, aggregated per bus.
    #[derive(Default, Clone)]
    struct Agg {
        p_min: f64,
        p_max: f64,
        q_min: f64,
        q_max: f64,
        costs: Vec<f64>,
    }
    let mut agg: Vec<Agg> = vec![Agg::default(); n_bus];
    for (g, row) in gen_rows.iter().enumerate() {
        if get(row, GEN_STATUS)? == 0.0 {
            continue;
        }
        let ext = get(row, GEN_BUS)? as usize;
        let &bus = index_of.get(&ext).ok_or_else(|| {
            Error::Validation(format!(
                "generator at line {} references undefined bus {ext}",
                row.line
            ))
        })?;
        let a = &mut agg[bus];
        a.p_min += get(row, GEN_PMIN)? / base_mva;
        a.p_max += get(row, GEN_PMAX)? / base_mva;
        a.q_min += get(row, GEN_QMIN)? / base_mva;
        a.q_max += get(row, GEN_QMAX)? / base_mva;
        a.costs.push(lin_cost[g]);
    }
    let mut gens = Vec::with_capacity(n_bus);
    for (i, a) in agg.iter().enumerate() {
        if a.costs.is_empty() {
            gens.push(AggGen {
                p_min: 0.0,
                p_max: 0.0,
                q_min: 0.0,
                q_max: 0.0,
                cost: 0.0,
            });
            continue;
        }
        let cost = a.costs.iter().copied().fold(f64::INFINITY, f64::min);
        let heterogeneous = a.costs.iter().any(|&c| c != cost);
        if heterogeneous {
            warnings.push(format!(
                "bus {}: {} generators with distinct costs aggregated at the minimum {cost}",
                buses[i].ext_id,
                a.costs.len()
            ));
            if a.p_min < 0.0 {
                warnings.push(format!(
                    "bus {}: negative aggregated p_min {} with heterogeneous costs; \
                     bound validity relies on nonnegative costs",
                    buses[i].ext_id, a.p_min
                ));
            }
        }
        if a.p_max < a.p_min || a.q_max < a.q_min {
            return Err(Error::Validation(format!(
                "bus {}: inverted generation bounds after aggregation",
                buses[i].ext_id
            )));
        }
        gens.push(AggGen {
            p_min: a.p_min,
            p_max: a.p_max,
            q_min: a.q_min,
            q_max: a.q_max,
            cost,
        });
    }

    // Branches.
    let clamp = FRAC_PI_2 - ANGLE_MARGIN;
    let mut branches = Vec::new();
    for row in branch_rows {
        if get(row, BR_STATUS)? == 0.0 {
            continue;
        }
        let f_ext = get(row, BR_F)? as usize;
        let t_ext = get(row, BR_T)? as usize;
        let &from = index_of.get(&f_ext).ok_or_else(|| {
            Error::Validation(format!(
                "branch at line {} references undefined bus {f_ext}",
                row.line
            ))
        })?;
        let &to = index_of.get(&t_ext).ok_or_else(|| {
            Error::Validation(format!(
                "branch at line {} references undefined bus {t_ext}",
                row.line
            ))
        })?;
        if from == to {
            return Err(Error::Validation(format!(
                "branch at line {} is a self-loop on bus {f_ext}",
                row.line
            )));
        }
        let r = get(row, BR_R)?;
        let x = get(row, BR_X)?;
        let z2 = r * r + x * x;
        if z2 == 0.0 {
            return Err(Error::Validation(format!(
                "branch at line {} has zero series impedance",
                row.line
            )));
        }
        let (g, b) = (r / z2, -x / z2);
        let b_charge = get(row, BR_B)?;
        let tap_raw = get(row, BR_TAP)?;
        let tap = if tap_raw == 0.0 { 1.0 } else { tap_raw };
        if tap < 0.0 {
            return Err(Error::Validation(format!(
                "branch at line {}: negative tap {tap}",
                row.line
            )));
        }
        let rate = get(row, BR_RATE_A)?;
        let s_max = if rate > 0.0 {
            Some(rate / base_mva)
        } else {
            None
        };

        let mut ang_min = get(row, BR_ANGMIN)?.to_radians();
        let mut ang_max = get(row, BR_ANGMAX)?.to_radians();
        if ang_min == 0.0 && ang_max == 0.0 {
            // MATPOWER convention: both zero means unconstrained.
            ang_min = -clamp;
            ang_max = clamp;
        }
        if ang_min < -clamp || ang_max > clamp {
            warnings.push(format!(
                "branch {f_ext}-{t_ext}: angle bounds clamped inside +/-{clamp:.4} rad"
            ));
        }
        ang_min = ang_min.max(-clamp);
        ang_max = ang_max.min(clamp);
        if ang_min >= ang_max {
            return Err(Error::Validation(format!(
                "branch at line {}: empty angle interval after clamping",
                row.line
            )));
        }

        branches.push(Branch {
            from,
            to,
            g,
            b,
            g_charge_from: 0.0,
            b_charge_from: b_charge / 2.0,
            g_charge_to: 0.0,
            b_charge_to: b_charge / 2.0,
            tap,
            shift: get(row, BR_SHIFT)?.to_radians(),
            s_max,
            angle_min: ang_min,
            angle_max: ang_max,
        });
    }

    Ok(CaseData {
        name: raw.name,
        base_mva,
        buses,
        branches,
        gens,
        ref_p_load,
        ref_q_load,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::{CompletionConfig, OmegaRepr};
    use crate::grid::count_independent;

    const TOY: &str = r#"
function mpc = toy3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1  3  10  2  0  0  1  1.0  0  0  1  1.05  0.95;
    2  1  20  5  0  0  1  1.0  0  0  1  1.05  0.95;
    3  2   0  0  0  0  1  1.0  0  0  1  1.05  0.95;
];
mpc.gen = [
    1  30  0  15  -15  1.0  100  1  60  5;
    1  10  0  10  -10  1.0  100  1  40  0;
    3  10  0  10  -10  1.0  100  0  40  0;
    3  10  0  10  -10  1.0  100  1  50  0;
];
mpc.branch = [
    1  2  0.01  0.05  0.02  80  0  0  0     0  1  -30  30;
    2  3  0.02  0.06  0.00  60  0  0  0.98  2  1    0   0;
    1  3  0.01  0.04  0.00   0  0  0  0     0  0  -20  20;
];
mpc.gencost = [
    2  0  0  3  0  12  0;
    2  0  0  3  0  18  0;
    2  0  0  2  25  0  0;
    2  0  0  3  0  25  0;
];
"#;

    #[test]
    fn case14_statistics_match_reference_table() {
        let case = parse_matpower(crate::CASE14_TEXT).unwrap();
        assert_eq!(case.n_bus(), 14);
        assert_eq!(case.n_branch(), 20);
        assert!((case.total_p_load() - 2.59).abs() <= 1e-12);
        assert_eq!(
            count_independent(&case, &CompletionConfig::default()),
            168
        );
        assert_eq!(
            count_independent(
                &case,
                &CompletionConfig {
                    omega_repr: OmegaRepr::Rectangular,
                    ..CompletionConfig::default()
                }
            ),
            188
        );
    }

    #[test]
    fn parse_is_deterministic() {
        let a = parse_matpower(crate::CASE14_TEXT).unwrap();
        let b = parse_matpower(crate::CASE14_TEXT).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toy_case_aggregation_and_defaults() {
        let case = parse_matpower(TOY).unwrap();
        assert_eq!(case.n_bus(), 3);
        // Out-of-service branch dropped.
        assert_eq!(case.n_branch(), 2);
        // Bus 1: two units aggregated, min cost kept, bounds summed.
        assert_eq!(case.gens[0].p_max, 1.0);
        assert_eq!(case.gens[0].p_min, 0.05);
        assert_eq!(case.gens[0].cost, 12.0);
        // Bus 2: no generator, dummy entry.
        let dummy = &case.gens[1];
        assert_eq!(
            (dummy.p_min, dummy.p_max, dummy.q_min, dummy.q_max, dummy.cost),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        // Bus 3: out-of-service unit dropped, survivor keeps its cost.
        assert_eq!(case.gens[2].p_max, 0.5);
        assert_eq!(case.gens[2].cost, 25.0);
        // Aggregation conserves total in-service capacity.
        let total: f64 = case.gens.iter().map(|g| g.p_max).sum();
        assert!((total - (0.6 + 0.4 + 0.5)).abs() <= 1e-12);
        // Aggregated distinct costs produce a warning.
        assert!(case.warnings.iter().any(|w| w.contains("distinct costs")));
        // Zero rating means unbounded; zero angles mean unconstrained.
        assert_eq!(case.branches[0].s_max, Some(0.8));
        assert!(case.branches[1].angle_max > 1.5);
        assert_eq!(case.branches[1].tap, 0.98);
        assert!((case.branches[1].shift - 2.0_f64.to_radians()).abs() <= 1e-15);
        // Degree-1 polynomial (constant-only) cost parses as zero slope.
        // (generator 3 in the file, dropped; survivor at bus 3 is linear)
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let bad = TOY.replace("2  3  0.02  0.06", "2  3  0.02  oops");
        match parse_matpower(&bad) {
            Err(Error::Parse { line, msg }) => {
                assert!(msg.contains("oops"));
                assert!(line > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn quadratic_costs_are_rejected() {
        let bad = TOY.replace("2  0  0  3  0  12  0;", "2  0  0  3  0.1  12  0;");
        assert!(matches!(
            parse_matpower(&bad),
            Err(Error::UnsupportedCost(_))
        ));
        let pwl = TOY.replace("2  0  0  3  0  12  0;", "1  0  0  2  0 0 1 12;");
        assert!(matches!(parse_matpower(&pwl), Err(Error::UnsupportedCost(_))));
    }

    #[test]
    fn undefined_bus_references_are_rejected() {
        let bad = TOY.replace("1  2  0.01  0.05", "1  9  0.01  0.05");
        assert!(matches!(parse_matpower(&bad), Err(Error::Validation(_))));
        let bad_gen = TOY.replace(
            "1  30  0  15  -15  1.0  100  1  60  5;",
            "7  30  0  15  -15  1.0  100  1  60  5;",
        );
        assert!(matches!(parse_matpower(&bad_gen), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_tables_are_rejected() {
        let no_cost = TOY.split("mpc.gencost").next().unwrap();
        assert!(matches!(parse_matpower(no_cost), Err(Error::Validation(m)) if m.contains("gencost")));
    }
}
