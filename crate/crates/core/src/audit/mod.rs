//! Quantitative certification of the non-resonance conditions.
//!
//! Qualitative conditions ("≠ 0", "< ∞") are replaced by thresholds: a gap passes if
//! it exceeds `gap_min`, a quotient bound if it stays below `bound_max`.

mod quadratic;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dispersion::{derivatives, DispersionData};
use crate::error::{Error, Result};
use crate::system::SystemSpec;

pub use quadratic::{check_quadratic_inf, check_quadratic_inf_all, check_weakened_quotient, check_weakened_quotient_all, manufactured_nr3_failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionId {
    NR1,
    NR2,
    NR3,
    NR1a,
    NR1b,
    NR1c,
    NR1d,
    NR2a,
    NR3a,
}

impl ConditionId {
    pub fn name(self) -> &'static str {
        match self {
            ConditionId::NR1 => "NR1",
            ConditionId::NR2 => "NR2",
            ConditionId::NR3 => "NR3",
            ConditionId::NR1a => "NR1a",
            ConditionId::NR1b => "NR1b",
            ConditionId::NR1c => "NR1c",
            ConditionId::NR1d => "NR1d",
            ConditionId::NR2a => "NR2a",
            ConditionId::NR3a => "NR3a",
        }
    }

    /// Gap-type conditions pass above `gap_min`; NR3/NR3a are bounds.
    pub fn is_bound(self) -> bool {
        matches!(self, ConditionId::NR3 | ConditionId::NR3a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub gap_min: f64,
    pub bound_max: f64,
    pub v_min: f64,
    /// Divisors below this are treated as zero in quotient scans.
    pub divisor_floor: f64,
    /// Required numerator size where the divisor vanishes.
    pub small_numerator: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            gap_min: 1e-3,
            bound_max: 1e6,
            v_min: 1e-3,
            divisor_floor: 1e-10,
            small_numerator: 1e-8,
        }
    }
}

/// Where a minimum (or maximum) was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Branch indices in the order the condition lists them.
    pub branches: Vec<usize>,
    /// Harmonic `m` or sign tuple `r`.
    pub harmonics: Vec<i32>,
    pub k: Option<f64>,
}

/// One named sub-minimum of a condition, e.g. a single harmonic of NR1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub label: String,
    pub value: f64,
    pub witness: Option<Witness>,
}

/// Large-`|k|` estimate: sampled values and the limit from the `E`-free symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub samples: Vec<(f64, f64)>,
    pub limit: f64,
    pub witness: Option<Witness>,
    pub settled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub id: ConditionId,
    /// Minimal gap, or maximal quotient for bound-type conditions.
    pub value: f64,
    pub witness: Option<Witness>,
    pub entries: Vec<Entry>,
    pub tail: Option<TailEstimate>,
    pub pass: bool,
    pub required: bool,
    pub note: String,
}

impl ConditionRecord {
    fn gap(id: ConditionId, value: f64, witness: Option<Witness>, th: &Thresholds) -> Self {
        Self {
            id,
            value,
            witness,
            entries: Vec::new(),
            tail: None,
            pass: value > th.gap_min,
            required: false,
            note: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub k_min: f64,
    pub k_max: f64,
    pub dk: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub system: String,
    pub n0: usize,
    pub k0: f64,
    pub thresholds: Thresholds,
    pub grid: GridMeta,
    /// Branches left out of every enumeration because the nonlinearity never reaches them.
    pub inert: Vec<usize>,
    pub records: Vec<ConditionRecord>,
}

impl ResonanceReport {
    pub fn record(&self, id: ConditionId) -> Option<&ConditionRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// True iff every required condition passes.
    pub fn pass(&self) -> bool {
        self.records.iter().all(|r| !r.required || r.pass)
    }

    pub fn failures(&self) -> Vec<ConditionId> {
        self.records.iter().filter(|r| r.required && !r.pass).map(|r| r.id).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system {}  n0 = {}  k0 = {}", self.system, self.n0, self.k0);
        let _ = writeln!(out, "{:<6} {:>14} {:>5} {:>9}  witness", "cond", "value", "pass", "required");
        for r in &self.records {
            let w = r.witness.as_ref().map(fmt_witness).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<6} {:>14.6e} {:>5} {:>9}  {}",
                r.id.name(),
                r.value,
                if r.pass { "yes" } else { "NO" },
                if r.required { "yes" } else { "no" },
                w
            );
            for e in &r.entries {
                let _ = writeln!(out, "  {:<12} {:>14.6e}", e.label, e.value);
            }
        }
        out
    }
}

fn fmt_witness(w: &Witness) -> String {
    match w.k {
        Some(k) => format!("n={:?} r={:?} k={k:.6}", w.branches, w.harmonics),
        None => format!("n={:?} r={:?}", w.branches, w.harmonics),
    }
}

/// Which approximation result the audit certifies for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    SinglePacket,
    MultiPacket,
}

/// Conditions the approximation result relies on. Without quadratic terms no normal
/// form is needed, so NR3 drops out; NR2 is never required since NR3 weakens it.
pub fn required_conditions(theorem: Theorem, has_quadratic: bool) -> Vec<ConditionId> {
    let mut ids = match theorem {
        Theorem::SinglePacket => vec![ConditionId::NR1],
        Theorem::MultiPacket => vec![ConditionId::NR1, ConditionId::NR1a, ConditionId::NR1b, ConditionId::NR1c, ConditionId::NR1d],
    };
    if has_quadratic {
        ids.push(match theorem {
            Theorem::SinglePacket => ConditionId::NR3,
            Theorem::MultiPacket => ConditionId::NR3a,
        });
    }
    ids
}

/// Branches the enumerations run over: all of them for linear systems, otherwise the
/// ones the nonlinearity reaches.
pub fn active_branches(data: &DispersionData, spec: &SystemSpec) -> Vec<usize> {
    let inert = data.inert_branches(spec);
    (0..data.dim()).filter(|&b| !inert[b]).collect()
}

/// Keep the smaller value; on ties the witness with the smaller `|k|`, then the earlier one.
pub(crate) fn better(cur: &Option<(f64, Witness)>, value: f64, k: Option<f64>) -> bool {
    match cur {
        None => true,
        Some((v, w)) => value < *v || (value == *v && k.map(f64::abs).unwrap_or(0.0) < w.k.map(f64::abs).unwrap_or(0.0)),
    }
}

/// NR1: `|omega_n(m k0) - m omega_{n0}(k0)|` over `|m| <= m_star`, all active `n`,
/// excluding the carrier itself (`(n0, 1)` and its conjugate `(n0, -1)`).
pub fn check_harmonics(data: &DispersionData, active: &[usize], n0: usize, k0: f64, m_star: i32, th: &Thresholds) -> Result<ConditionRecord> {
    let w0 = data.omega_at(n0, k0)?;
    let mut best: Option<(f64, Witness)> = None;
    let mut entries = Vec::new();
    for m in -m_star..=m_star {
        let k = m as f64 * k0;
        let modes = data.branch_at(k)?;
        let mut local: Option<(f64, Witness)> = None;
        for &n in active {
            if n == n0 && m.abs() == 1 {
                continue;
            }
            let gap = (modes.omega[n] - m as f64 * w0).abs();
            if better(&local, gap, Some(k)) {
                local = Some((
                    gap,
                    Witness {
                        branches: vec![n],
                        harmonics: vec![m],
                        k: Some(k),
                    },
                ));
            }
        }
        if let Some((v, w)) = local {
            if better(&best, v, w.k) {
                best = Some((v, w.clone()));
            }
            entries.push(Entry {
                label: format!("m={m}"),
                value: v,
                witness: Some(w),
            });
        }
    }
    let (value, witness) = match best {
        Some((v, w)) => (v, Some(w)),
        None => (f64::INFINITY, None),
    };
    let mut rec = ConditionRecord::gap(ConditionId::NR1, value, witness, th);
    rec.entries = entries;
    Ok(rec)
}

/// Every sign tuple of the given length, lexicographic from all `-1`.
fn sign_tuples(len: usize) -> Vec<Vec<i32>> {
    (0..1usize << len)
        .map(|bits| (0..len).map(|i| if bits >> (len - 1 - i) & 1 == 1 { 1 } else { -1 }).collect())
        .collect()
}

/// Every index tuple of the given length over `active`.
fn index_tuples(active: &[usize], len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|t| {
                active.iter().map(move |&a| {
                    let mut t = t.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    out
}

/// Number of `(n, j_1..j_order, r_1..r_order)` tuples a mixed-combination check enumerates.
pub fn mixed_tuple_count(branches: usize, order: usize) -> usize {
    let signs = sign_tuples(order).into_iter().filter(|r| admissible(r)).count();
    branches.pow(order as u32 + 1) * signs
}

/// Cubic combinations whose sum is `±1` feed the carrier and are handled by the NLS.
fn admissible(r: &[i32]) -> bool {
    r.len() != 3 || !matches!(r.iter().sum::<i32>(), -1 | 1)
}

/// NR1a (order 2), NR1b (order 3), NR1c (order 4):
/// `|omega_n(sum r k0) - sum omega_{j_i}(r_i k0)|`.
pub fn check_mixed_combinations(data: &DispersionData, active: &[usize], k0: f64, order: usize, th: &Thresholds) -> Result<ConditionRecord> {
    let id = match order {
        2 => ConditionId::NR1a,
        3 => ConditionId::NR1b,
        4 => ConditionId::NR1c,
        _ => return Err(Error::Config(format!("mixed combinations of order {order} are not defined"))),
    };
    let mut cache = std::collections::BTreeMap::new();
    for m in -(order as i32)..=order as i32 {
        cache.insert(m, data.branch_at(m as f64 * k0)?.omega);
    }
    let mut best: Option<(f64, Witness)> = None;
    let mut count = 0usize;
    for r in sign_tuples(order).into_iter().filter(|r| admissible(r)) {
        let total: i32 = r.iter().sum();
        for n in active {
            for js in index_tuples(active, order) {
                count += 1;
                let mut g = cache[&total][*n];
                for (j, ri) in js.iter().zip(&r) {
                    g -= cache[ri][*j];
                }
                let gap = g.abs();
                let k = total as f64 * k0;
                if better(&best, gap, Some(k)) {
                    let mut branches = vec![*n];
                    branches.extend(&js);
                    best = Some((
                        gap,
                        Witness {
                            branches,
                            harmonics: r.clone(),
                            k: Some(k),
                        },
                    ));
                }
            }
        }
    }
    let (value, witness) = match best {
        Some((v, w)) => (v, Some(w)),
        None => (f64::INFINITY, None),
    };
    let mut rec = ConditionRecord::gap(id, value, witness, th);
    rec.note = format!("{count} tuples");
    Ok(rec)
}

/// NR1d: minimal pairwise group-velocity separation at `k0`.
pub fn check_group_velocities(data: &DispersionData, active: &[usize], k0: f64, th: &Thresholds) -> Result<ConditionRecord> {
    let v: Vec<f64> = active
        .iter()
        .map(|&n| derivatives(data, n, k0).map(|d| d.group_velocity))
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, Witness)> = None;
    for a in 0..active.len() {
        for b in a + 1..active.len() {
            let gap = (v[a] - v[b]).abs();
            if better(&best, gap, Some(k0)) {
                best = Some((
                    gap,
                    Witness {
                        branches: vec![active[a], active[b]],
                        harmonics: vec![],
                        k: Some(k0),
                    },
                ));
            }
        }
    }
    let (value, witness) = match best {
        Some((v, w)) => (v, Some(w)),
        None => (f64::INFINITY, None),
    };
    let mut rec = ConditionRecord::gap(ConditionId::NR1d, value, witness, th);
    rec.pass = value > th.v_min;
    rec.entries = active
        .iter()
        .zip(&v)
        .map(|(&n, &vel)| Entry {
            label: format!("v_{n}"),
            value: vel,
            witness: None,
        })
        .collect();
    Ok(rec)
}

/// Settings of a full audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub n0: usize,
    pub k0: f64,
    pub m_star: i32,
    pub theorem: Theorem,
    pub thresholds: Thresholds,
    /// Largest `|k|` sampled by the far-field estimates.
    pub tail_k_max: f64,
}

impl AuditOptions {
    pub fn new(n0: usize, k0: f64) -> Self {
        Self {
            n0,
            k0,
            m_star: 3,
            theorem: Theorem::SinglePacket,
            thresholds: Thresholds::default(),
            tail_k_max: 1e6,
        }
    }
}

/// Every condition, with the required ones flagged for `opts.theorem`.
pub fn audit(spec: &SystemSpec, data: &DispersionData, opts: &AuditOptions) -> Result<ResonanceReport> {
    let th = &opts.thresholds;
    let active = active_branches(data, spec);
    let inert: Vec<usize> = (0..data.dim()).filter(|b| !active.contains(b)).collect();
    let mut records = vec![check_harmonics(data, &active, opts.n0, opts.k0, opts.m_star, th)?];
    records.push(check_quadratic_inf(data, &active, opts.n0, opts.k0, opts.tail_k_max, th)?);
    records.push(check_weakened_quotient(data, spec, &active, opts.n0, opts.k0, opts.tail_k_max, th)?);
    for order in 2..=4 {
        records.push(check_mixed_combinations(data, &active, opts.k0, order, th)?);
    }
    records.push(check_group_velocities(data, &active, opts.k0, th)?);
    records.push(check_quadratic_inf_all(data, &active, opts.k0, opts.tail_k_max, th)?);
    records.push(check_weakened_quotient_all(data, spec, &active, opts.k0, opts.tail_k_max, th)?);
    let required = required_conditions(opts.theorem, spec.has_quadratic());
    for r in &mut records {
        r.required = required.contains(&r.id);
    }
    let dk = if data.k_grid.len() > 1 { data.k_grid[1] - data.k_grid[0] } else { 0.0 };
    Ok(ResonanceReport {
        system: spec.label.clone(),
        n0: opts.n0,
        k0: opts.k0,
        thresholds: *th,
        grid: GridMeta {
            k_min: data.k_min(),
            k_max: data.k_max(),
            dk,
            nodes: data.k_grid.len(),
        },
        inert,
        records,
    })
}
