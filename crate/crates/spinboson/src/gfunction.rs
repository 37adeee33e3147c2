//! The generalized G-function: coefficient recurrence, series evaluation,
//! and pole enumeration.
//!
//! For a linear N-mode model the spectrum in each parity sector is the zero
//! set of
//!
//! ```text
//! G^±(X) = sum_n B_n (1 ∓ Delta/(X - n.omega)) (g1/w1)^n1 ... (gN/wN)^nN
//! ```
//!
//! where the `B_n` solve a level-by-level linear recurrence with the
//! permutation-symmetric boundary closure `B_(n,0,..) = B_(0,..,n)` (and its
//! sorted-multiset generalization for N >= 3). `X` relates to energy through
//! `E = X - sum_j g_j^2/omega_j`.
//!
//! The series carries simple poles at every `X = n.omega`; evaluation refuses
//! to approach a pole closer than a configurable guard.

use crate::model::{binomial, ModelParams, MultiIndex, ParitySector};
use thiserror::Error;

/// Default absolute pole guard around every `X = n.omega`.
pub const DEFAULT_POLE_GUARD: f64 = 1e-10;
/// Default hard cap on the series level.
pub const DEFAULT_MAX_LEVEL: usize = 500;
/// Couplings closer than this (relatively) are treated as degenerate by the
/// evaluation path and split apart before the level solve.
pub const COUPLING_DEGENERACY_TOL: f64 = 1e-7;
/// Relative size of the symmetric-breaking split applied to degenerate
/// couplings.
pub const COUPLING_NUDGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GError {
    #[error("X = {x} is within {distance:e} of the pole at {pole} (guard {guard:e})")]
    PoleProximity {
        x: f64,
        pole: f64,
        distance: f64,
        guard: f64,
    },
    #[error(
        "series gate: max_j g_j/omega_j = {max_ratio} >= 1; the coefficient series has no \
         convergence guarantee there (pass force to override)"
    )]
    ConvergenceGate { max_ratio: f64 },
    #[error("level system is rank deficient at level {level} (pivot {pivot:e})")]
    RankDeficient { level: usize, pivot: f64 },
    #[error("level system residual {residual:e} exceeds threshold {threshold:e} at level {level}")]
    ResidualTooLarge {
        level: usize,
        residual: f64,
        threshold: f64,
    },
}

/// Knobs for coefficient construction and series evaluation.
#[derive(Debug, Clone)]
pub struct GSettings {
    pub pole_guard: f64,
    pub max_level: usize,
    /// Override the `max_j g_j/omega_j < 1` gate.
    pub force_convergence_gate: bool,
}

impl Default for GSettings {
    fn default() -> Self {
        GSettings {
            pole_guard: DEFAULT_POLE_GUARD,
            max_level: DEFAULT_MAX_LEVEL,
            force_convergence_gate: false,
        }
    }
}

/// `f_n(X) = 2 sum_j g_j^2/omega_j + (n.omega - X + Delta^2/(X - n.omega))/2`.
pub fn f_term(params: &ModelParams, x: f64, n: &MultiIndex) -> Result<f64, GError> {
    f_term_guarded(params, x, n.dot(params.omegas()), DEFAULT_POLE_GUARD)
}

fn f_term_guarded(params: &ModelParams, x: f64, n_dot_omega: f64, guard: f64) -> Result<f64, GError> {
    let dist = (x - n_dot_omega).abs();
    if dist <= guard {
        return Err(GError::PoleProximity {
            x,
            pole: n_dot_omega,
            distance: dist,
            guard,
        });
    }
    let twice_shift = 2.0 * params.x_shift();
    let delta = params.delta();
    Ok(twice_shift + 0.5 * (n_dot_omega - x + delta * delta / (x - n_dot_omega)))
}

/// Coefficient table `n -> B_n` stored densely per level in lexicographic
/// rank order. `B_0 = 1` always; absent entries are zero.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    n_modes: usize,
    x_value: f64,
    by_level: Vec<Vec<f64>>,
}

impl CoefficientTable {
    /// Assemble a table from per-level dense coefficient vectors (level `p`
    /// must hold `binomial(p + N - 1, N - 1)` entries in lex-rank order).
    pub fn from_levels(n_modes: usize, x_value: f64, by_level: Vec<Vec<f64>>) -> Self {
        for (p, level) in by_level.iter().enumerate() {
            assert_eq!(level.len(), binomial(p + n_modes - 1, n_modes - 1));
        }
        CoefficientTable {
            n_modes,
            x_value,
            by_level,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn x_value(&self) -> f64 {
        self.x_value
    }

    /// Highest completed level.
    pub fn max_level(&self) -> usize {
        self.by_level.len() - 1
    }

    pub fn level(&self, p: usize) -> Option<&[f64]> {
        self.by_level.get(p).map(|v| v.as_slice())
    }

    pub fn get(&self, n: &MultiIndex) -> f64 {
        let p = n.level() as usize;
        match self.by_level.get(p) {
            Some(level) => level[n.lex_rank()],
            None => 0.0,
        }
    }
}

/// Build the coefficient table through `max_level`.
///
/// `N = 1` runs the scalar three-term recurrence; `N = 2` closes each level
/// with `B_(p,0) = B_(0,p)` and solves the resulting chain by banded
/// elimination with partial pivoting; `N >= 3` assembles a square per-level
/// system from the recurrence rows plus just enough sorted-multiset boundary
/// ties and solves it densely.
///
/// Exactly equal couplings make even levels of the N = 2 closure singular
/// (`RankDeficient`); `evaluate_g` works around that by splitting degenerate
/// couplings, this builder reports it.
pub fn build_coefficients(
    params: &ModelParams,
    x: f64,
    max_level: usize,
) -> Result<CoefficientTable, GError> {
    build_coefficients_with(params, x, max_level, &GSettings::default())
}

pub fn build_coefficients_with(
    params: &ModelParams,
    x: f64,
    max_level: usize,
    settings: &GSettings,
) -> Result<CoefficientTable, GError> {
    check_gate(params, settings)?;
    let mut builder = CoefficientBuilder::new(params.clone(), x, settings.pole_guard);
    if !builder.short_circuit {
        for _ in 0..max_level {
            builder.push_level()?;
        }
    }
    Ok(builder.into_table())
}

fn check_gate(params: &ModelParams, settings: &GSettings) -> Result<(), GError> {
    if !settings.force_convergence_gate && params.max_ratio() >= 1.0 {
        return Err(GError::ConvergenceGate {
            max_ratio: params.max_ratio(),
        });
    }
    Ok(())
}

/// Incremental level-by-level builder. Levels only ever reference the two
/// levels below them, but the full table is kept for the series sum.
struct CoefficientBuilder {
    params: ModelParams,
    x: f64,
    guard: f64,
    levels: Vec<Vec<f64>>,
    /// All couplings zero: the table is just `B_0 = 1`.
    short_circuit: bool,
}

impl CoefficientBuilder {
    fn new(params: ModelParams, x: f64, guard: f64) -> Self {
        let short_circuit = params.couplings().iter().all(|&g| g == 0.0);
        CoefficientBuilder {
            params,
            x,
            guard,
            levels: vec![vec![1.0]],
            short_circuit,
        }
    }

    fn into_table(self) -> CoefficientTable {
        CoefficientTable {
            n_modes: self.params.n_modes(),
            x_value: self.x,
            by_level: self.levels,
        }
    }

    fn built_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// f values for every multi-index of the given level, by lex rank.
    fn f_level(&self, p: usize) -> Result<Vec<f64>, GError> {
        MultiIndex::enumerate_level(self.params.n_modes(), p as u32)
            .iter()
            .map(|n| f_term_guarded(&self.params, self.x, n.dot(self.params.omegas()), self.guard))
            .collect()
    }

    fn push_level(&mut self) -> Result<&[f64], GError> {
        debug_assert!(!self.short_circuit);
        let next = match self.params.n_modes() {
            1 => self.next_level_single_mode()?,
            2 => self.next_level_two_mode()?,
            _ => self.next_level_general()?,
        };
        self.levels.push(next);
        Ok(self.levels.last().unwrap().as_slice())
    }

    /// `g p B_p = f_(p-1) B_(p-1) - g B_(p-2)`.
    fn next_level_single_mode(&self) -> Result<Vec<f64>, GError> {
        let p = self.built_level() + 1;
        let g = self.params.couplings()[0];
        let f_prev = self.f_level(p - 1)?[0];
        let b1 = self.levels[p - 1][0];
        let b2 = if p >= 2 { self.levels[p - 2][0] } else { 0.0 };
        Ok(vec![(f_prev * b1 - g * b2) / (g * p as f64)])
    }

    /// Level q unknowns `u_k = B_(k, q-k)` are linked pairwise by the stage
    /// p = q+1 equations
    ///
    /// ```text
    /// g1 i u_i + g2 (p-i) u_(i-1) = R_i,   i = 1..q
    /// ```
    ///
    /// closed by the tie `u_q = u_0`. Forward substitution on the chain is
    /// unstable (its transfer coefficients grow binomially), so the
    /// bordered bidiagonal system is eliminated with partial pivoting,
    /// which stays O(q) because each step only ever carries one fill row
    /// with entries in the current column and the tie column.
    fn next_level_two_mode(&self) -> Result<Vec<f64>, GError> {
        let q = self.built_level() + 1;
        let p = q + 1;
        let g1 = self.params.couplings()[0];
        let g2 = self.params.couplings()[1];
        let f_prev = self.f_level(q - 1)?;
        let level_1 = &self.levels[q - 1]; // length q
        let empty = Vec::new();
        let level_2 = if q >= 2 { &self.levels[q - 2] } else { &empty }; // length q-1

        let rhs_of = |i: usize| -> f64 {
            // R_i = f_(i-1, q-i) B_(i-1, q-i) - g1 B_(i-2, q-i) - g2 B_(i-1, q-i-1)
            let mut r = f_prev[i - 1] * level_1[i - 1];
            if i >= 2 {
                r -= g1 * level_2[i - 2];
            }
            if i <= q - 1 && q >= 2 {
                r -= g2 * level_2[i - 1];
            }
            r
        };
        let a = |i: usize| g1 * i as f64; // coefficient on u_i
        let b = |i: usize| g2 * (p - i) as f64; // coefficient on u_(i-1)

        // Pivot rows recorded for back substitution: coefficients on
        // (col k, col k+1, col q) and the right-hand side.
        struct PivotRow {
            lo: f64,
            mid: f64,
            hi: f64,
            rhs: f64,
        }
        let mut pivots: Vec<PivotRow> = Vec::with_capacity(q);
        // Carry row starts as the tie u_0 - u_q = 0.
        let mut c_lo = 1.0f64;
        let mut c_hi = -1.0f64;
        let mut c_rhs = 0.0f64;

        let mut scale = 1.0f64;
        for k in 0..q {
            let i = k + 1;
            let band_lo = b(i);
            let band_mid = a(i);
            let band_rhs = rhs_of(i);
            scale = scale.max(band_rhs.abs()).max(band_mid.abs()).max(band_lo.abs());
            let last = i == q; // band's mid entry sits in the tie column
            if band_lo.abs() >= c_lo.abs() {
                // band row pivots; eliminate carry against it
                let m = c_lo / band_lo;
                let fill = -m * band_mid;
                c_rhs -= m * band_rhs;
                if last {
                    c_lo = c_hi + fill;
                    c_hi = 0.0;
                } else {
                    c_lo = fill;
                }
                pivots.push(PivotRow {
                    lo: band_lo,
                    mid: if last { 0.0 } else { band_mid },
                    hi: if last { band_mid } else { 0.0 },
                    rhs: band_rhs,
                });
            } else {
                // carry row pivots; band row becomes the new carry
                let m = band_lo / c_lo;
                let new_hi = -m * c_hi;
                let new_rhs = band_rhs - m * c_rhs;
                pivots.push(PivotRow {
                    lo: c_lo,
                    mid: 0.0,
                    hi: c_hi,
                    rhs: c_rhs,
                });
                if last {
                    c_lo = band_mid + new_hi;
                    c_hi = 0.0;
                } else {
                    c_lo = band_mid;
                    c_hi = new_hi;
                }
                c_rhs = new_rhs;
            }
        }

        // Remaining 1x1 system in u_q.
        let pivot_tol = 1e-12 * scale.max(1.0);
        if c_lo.abs() <= pivot_tol {
            return Err(GError::RankDeficient { level: q, pivot: c_lo });
        }
        let mut u = vec![0.0f64; q + 1];
        u[q] = c_rhs / c_lo;
        for k in (0..q).rev() {
            let row = &pivots[k];
            u[k] = (row.rhs - row.mid * u[k + 1] - row.hi * u[q]) / row.lo;
        }
        // Enforce the closure bit-identically.
        u[0] = u[q];

        // Residual sanity on the recurrence rows.
        let mut resid = 0.0f64;
        for i in 1..=q {
            let r = a(i) * u[i] + b(i) * u[i - 1] - rhs_of(i);
            resid = resid.max(r.abs());
        }
        let threshold = 1e-9 * (q as f64 + 1.0) * scale.max(1.0);
        if resid > threshold {
            return Err(GError::ResidualTooLarge {
                level: q,
                residual: resid,
                threshold,
            });
        }
        Ok(u)
    }

    /// General-N level solve: recurrence rows for every interior stage index
    /// plus the minimal number of sorted-multiset boundary ties needed to
    /// square the system.
    fn next_level_general(&self) -> Result<Vec<f64>, GError> {
        let n_modes = self.params.n_modes();
        let level = self.built_level() + 1;
        let unknowns = MultiIndex::enumerate_level(n_modes, level as u32);
        let m = unknowns.len();
        let g = self.params.couplings();

        let mut matrix = vec![0.0f64; m * m];
        let mut rhs = vec![0.0f64; m];
        let mut row = 0usize;

        // Interior stage indices n = 1 + n', |n'| = level - 1.
        let f_prev = self.f_level(level - 1)?;
        let interior_seeds = MultiIndex::enumerate_level(n_modes, level as u32 - 1);
        for seed in &interior_seeds {
            let n: Vec<u32> = seed.entries().iter().map(|&v| v + 1).collect();
            // unknown columns: n - 1 + e_j at this level
            for j in 0..n_modes {
                let mut col_idx: Vec<u32> = seed.entries().to_vec();
                col_idx[j] += 1;
                let col = MultiIndex::new(col_idx).lex_rank();
                matrix[row * m + col] += g[j] * n[j] as f64;
            }
            // right-hand side from levels below
            let prev = seed; // n - 1, level-1
            let mut r = f_prev[prev.lex_rank()] * self.levels[level - 1][prev.lex_rank()];
            if level >= 2 {
                for j in 0..n_modes {
                    if prev.entries()[j] >= 1 {
                        let mut low = prev.entries().to_vec();
                        low[j] -= 1;
                        r -= g[j] * self.levels[level - 2][MultiIndex::new(low).lex_rank()];
                    }
                }
            }
            rhs[row] = r;
            row += 1;
        }

        // Boundary ties in canonical order until the system is square.
        let needed = m - row;
        let mut added = 0usize;
        'groups: for group in boundary_groups(&unknowns) {
            for pair in group.windows(2) {
                if added == needed {
                    break 'groups;
                }
                matrix[row * m + pair[0]] = 1.0;
                matrix[row * m + pair[1]] = -1.0;
                rhs[row] = 0.0;
                row += 1;
                added += 1;
            }
        }
        if added < needed {
            return Err(GError::RankDeficient {
                level,
                pivot: 0.0,
            });
        }

        let saved_matrix = matrix.clone();
        let saved_rhs = rhs.clone();
        let mut u = rhs;
        solve_dense_pp(&mut matrix, &mut u, m).map_err(|pivot| GError::RankDeficient {
            level,
            pivot,
        })?;

        // Residual check against the saved system.
        let mut resid = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..m {
            let mut acc = -saved_rhs[i];
            let mut mag = saved_rhs[i].abs();
            for j in 0..m {
                let t = saved_matrix[i * m + j] * u[j];
                acc += t;
                mag = mag.max(t.abs());
            }
            resid = resid.max(acc.abs());
            scale = scale.max(mag);
        }
        let threshold = 1e-8 * m as f64 * scale.max(1.0);
        if resid > threshold {
            return Err(GError::ResidualTooLarge {
                level,
                residual: resid,
                threshold,
            });
        }
        Ok(u)
    }
}

/// Group the lex ranks of level indices that contain at least one zero entry
/// by their sorted entry multiset; groups in lex order of the sorted tuple,
/// members lex-sorted.
fn boundary_groups(level_indices: &[MultiIndex]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(Vec<u32>, Vec<usize>)> = Vec::new();
    for (rank, idx) in level_indices.iter().enumerate() {
        if !idx.entries().contains(&0) {
            continue;
        }
        let mut key = idx.entries().to_vec();
        key.sort_unstable();
        match groups.binary_search_by(|(k, _)| k.cmp(&key)) {
            Ok(pos) => groups[pos].1.push(rank),
            Err(pos) => groups.insert(pos, (key, vec![rank])),
        }
    }
    groups.into_iter().map(|(_, members)| members).collect()
}

/// In-place dense LU with partial pivoting; `a` is row-major m x m.
/// Returns the offending pivot on singularity.
fn solve_dense_pp(a: &mut [f64], rhs: &mut [f64], m: usize) -> Result<(), f64> {
    for k in 0..m {
        let mut piv = k;
        let mut best = a[k * m + k].abs();
        for r in (k + 1)..m {
            let v = a[r * m + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return Err(a[piv * m + k]);
        }
        if piv != k {
            for c in 0..m {
                a.swap(k * m + c, piv * m + c);
            }
            rhs.swap(k, piv);
        }
        let d = a[k * m + k];
        for r in (k + 1)..m {
            let factor = a[r * m + k] / d;
            if factor == 0.0 {
                continue;
            }
            a[r * m + k] = 0.0;
            for c in (k + 1)..m {
                a[r * m + c] -= factor * a[k * m + c];
            }
            rhs[r] -= factor * rhs[k];
        }
    }
    for k in (0..m).rev() {
        let mut acc = rhs[k];
        for c in (k + 1)..m {
            acc -= a[k * m + c] * rhs[c];
        }
        rhs[k] = acc / a[k * m + k];
    }
    Ok(())
}

/// One evaluation of `G^±(X)`.
#[derive(Debug, Clone)]
pub struct GEvaluation {
    pub x: f64,
    pub sector: ParitySector,
    pub value: f64,
    /// Highest series level accumulated.
    pub max_level: usize,
    /// Geometric-envelope bound on the dropped tail.
    pub tail_estimate: f64,
    pub converged: bool,
}

/// Evaluate `G^±(X)` by accumulating level contributions until three
/// consecutive ones fall below `tol` and the geometric tail bound
/// `|S_last| / (1 - max_j g_j/omega_j)` does too.
///
/// Returns `converged = false` (not an error) when the level cap is hit.
/// Modes with zero coupling drop out of the series exactly and are removed
/// up front; exactly equal couplings are split by a relative 1e-6 before the
/// level solve because the symmetric closure is singular there.
pub fn evaluate_g(
    params: &ModelParams,
    sector: ParitySector,
    x: f64,
    tol: f64,
) -> Result<GEvaluation, GError> {
    evaluate_g_with(params, sector, x, tol, &GSettings::default())
}

pub fn evaluate_g_with(
    params: &ModelParams,
    sector: ParitySector,
    x: f64,
    tol: f64,
    settings: &GSettings,
) -> Result<GEvaluation, GError> {
    check_gate(params, settings)?;
    let (reduced, _) = params.active_modes();
    let reduced = match reduced {
        None => {
            // Only the n = 0 term survives: G = 1 -/+ Delta/X.
            if x.abs() <= settings.pole_guard {
                return Err(GError::PoleProximity {
                    x,
                    pole: 0.0,
                    distance: x.abs(),
                    guard: settings.pole_guard,
                });
            }
            let value = 1.0 - sector.sign() * params.delta() / x;
            return Ok(GEvaluation {
                x,
                sector,
                value,
                max_level: 0,
                tail_estimate: 0.0,
                converged: true,
            });
        }
        Some(r) => regularize_equal_couplings(&r),
    };

    let omegas = reduced.omegas().to_vec();
    let weights: Vec<f64> = reduced.ratios().to_vec();
    let delta = reduced.delta();
    let sign = sector.sign();
    let max_ratio = reduced.max_ratio();

    let mut builder = CoefficientBuilder::new(reduced, x, settings.pole_guard);
    let mut value = 0.0f64;
    let mut consecutive_small = 0usize;
    let mut tail = f64::INFINITY;
    let mut converged = false;
    let mut level = 0usize;

    loop {
        let coeffs: &[f64] = if level == 0 {
            builder.levels[0].as_slice()
        } else {
            builder.push_level()?
        };
        let indices = MultiIndex::enumerate_level(weights.len(), level as u32);
        let mut level_sum = 0.0f64;
        for (idx, &b) in indices.iter().zip(coeffs) {
            let pole = idx.dot(&omegas);
            let dist = (x - pole).abs();
            if dist <= settings.pole_guard {
                return Err(GError::PoleProximity {
                    x,
                    pole,
                    distance: dist,
                    guard: settings.pole_guard,
                });
            }
            let mut monomial = 1.0f64;
            for (&w, &n) in weights.iter().zip(idx.entries()) {
                monomial *= w.powi(n as i32);
            }
            level_sum += b * (1.0 - sign * delta / (x - pole)) * monomial;
        }
        value += level_sum;

        if level_sum.abs() < tol {
            consecutive_small += 1;
        } else {
            consecutive_small = 0;
        }
        tail = if max_ratio < 1.0 {
            level_sum.abs() / (1.0 - max_ratio)
        } else {
            f64::INFINITY
        };
        if consecutive_small >= 3 && tail <= tol {
            converged = true;
            break;
        }
        if level >= settings.max_level {
            break;
        }
        level += 1;
    }

    Ok(GEvaluation {
        x,
        sector,
        value,
        max_level: level,
        tail_estimate: tail,
        converged,
    })
}

/// Split exactly (or nearly) equal positive couplings apart by a relative
/// `COUPLING_NUDGE`; the k-th member of an equal cluster gets factor
/// `1 + k * nudge`. Deterministic, so mirrored parameter orders produce
/// mirrored problems.
pub fn regularize_equal_couplings(params: &ModelParams) -> ModelParams {
    let g = params.couplings();
    let n = g.len();
    if n < 2 {
        return params.clone();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap().then(a.cmp(&b)));
    let mut new_g = g.to_vec();
    let mut changed = false;
    let mut cluster_start = 0usize;
    for k in 1..=n {
        let same = k < n && {
            let (lo, hi) = (g[order[cluster_start]], g[order[k]]);
            lo > 0.0 && (hi - lo).abs() <= COUPLING_DEGENERACY_TOL * hi.max(lo)
        };
        if !same {
            if k - cluster_start > 1 {
                for (pos, &idx) in order[cluster_start..k].iter().enumerate() {
                    if pos > 0 {
                        new_g[idx] *= 1.0 + pos as f64 * COUPLING_NUDGE;
                        changed = true;
                    }
                }
            }
            cluster_start = k;
        }
    }
    if !changed {
        return params.clone();
    }
    ModelParams::validated(
        params.omegas().to_vec(),
        new_g,
        params.delta(),
        params.kind(),
    )
    .expect("nudged params stay valid")
}

/// A pole location with every multi-index that lands on it (within the
/// clustering tolerance).
#[derive(Debug, Clone, PartialEq)]
pub struct PoleEntry {
    pub x_pole: f64,
    pub indices: Vec<MultiIndex>,
}

#[derive(Debug, Clone, Default)]
pub struct PoleList {
    pub entries: Vec<PoleEntry>,
}

pub const POLE_CLUSTER_TOL: f64 = 1e-9;

/// All poles `X = n.omega <= x_max` of the series for `params`, restricted
/// to modes with nonzero coupling (zero-coupling modes contribute no pole
/// terms), clustered within `POLE_CLUSTER_TOL`. `n = 0` (the `X = 0` pole
/// from the Delta/X term) is always present when `x_max >= 0`.
pub fn poles(params: &ModelParams, x_max: f64) -> PoleList {
    let (reduced, kept) = params.active_modes();
    let n_modes = params.n_modes();
    let mut raw: Vec<(f64, MultiIndex)> = Vec::new();
    match reduced {
        None => {
            if x_max >= 0.0 {
                raw.push((0.0, MultiIndex::zeros(n_modes)));
            }
        }
        Some(r) => {
            let mut entries = vec![0u32; r.n_modes()];
            collect_poles(r.omegas(), 0, 0.0, x_max, &mut entries, &mut raw, &kept, n_modes);
        }
    }
    raw.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut entries: Vec<PoleEntry> = Vec::new();
    for (x, idx) in raw {
        match entries.last_mut() {
            Some(last) if x - last.x_pole <= POLE_CLUSTER_TOL => last.indices.push(idx),
            _ => entries.push(PoleEntry {
                x_pole: x,
                indices: vec![idx],
            }),
        }
    }
    PoleList { entries }
}

#[allow(clippy::too_many_arguments)]
fn collect_poles(
    omegas: &[f64],
    mode: usize,
    acc: f64,
    x_max: f64,
    entries: &mut Vec<u32>,
    out: &mut Vec<(f64, MultiIndex)>,
    kept: &[usize],
    full_n_modes: usize,
) {
    if mode == omegas.len() {
        // expand back to the full mode count
        let mut full = vec![0u32; full_n_modes];
        for (r, &orig) in kept.iter().enumerate() {
            full[orig] = entries[r];
        }
        out.push((acc, MultiIndex::new(full)));
        return;
    }
    let mut k = 0u32;
    loop {
        let x = acc + k as f64 * omegas[mode];
        if x > x_max {
            break;
        }
        entries[mode] = k;
        collect_poles(omegas, mode + 1, x, x_max, entries, out, kept, full_n_modes);
        k += 1;
    }
    entries[mode] = 0;
}

impl PoleList {
    /// Distance from `x` to the nearest pole, with that pole's position.
    pub fn nearest(&self, x: f64) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .map(|e| ((x - e.x_pole).abs(), e.x_pole))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn fig2() -> ModelParams {
        ModelParams::linear(vec![1.0, 0.92], vec![0.7, 0.78], 0.68).unwrap()
    }

    fn single() -> ModelParams {
        ModelParams::linear(vec![1.0], vec![0.7], 0.68).unwrap()
    }

    #[test]
    fn f_term_single_mode_value() {
        // 2*0.49 + (0 - 0.5 + 0.4624/0.5)/2
        let p = single();
        let n = MultiIndex::zeros(1);
        let f = f_term(&p, 0.5, &n).unwrap();
        assert!((f - 1.1924).abs() < 1e-12, "f = {f}");
    }

    #[test]
    fn f_term_delta_zero_drops_pole_term() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.3, 0.2], 0.0).unwrap();
        let n = MultiIndex::new(vec![1, 2]);
        let expect = 2.0 * p.x_shift() + 0.5 * (n.dot(p.omegas()) - 0.37);
        assert!((f_term(&p, 0.37, &n).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn f_term_pole_guard() {
        let p = single();
        let n = MultiIndex::new(vec![2]);
        let err = f_term(&p, 2.0, &n).unwrap_err();
        assert!(matches!(err, GError::PoleProximity { .. }));
    }

    // Independent scalar oracle: Braak-style K_n with n K_n = (f/g) K_(n-1) - K_(n-2).
    fn rabi_recurrence_oracle(p: &ModelParams, x: f64, levels: usize) -> Vec<f64> {
        let g = p.couplings()[0];
        let w = p.omegas()[0];
        let d = p.delta();
        let eff = |n: f64| 2.0 * g + (n * w - x + d * d / (x - n * w)) / (2.0 * g);
        let mut k = vec![1.0f64, eff(0.0)];
        for n in 2..=levels {
            let kn = (eff(n as f64 - 1.0) * k[n - 1] - k[n - 2]) / n as f64;
            k.push(kn);
        }
        k
    }

    #[test]
    fn single_mode_matches_scalar_recurrence() {
        let p = single();
        for &x in &[0.3, 0.55, 1.37, 2.61, -0.4] {
            let table = build_coefficients(&p, x, 40).unwrap();
            let oracle = rabi_recurrence_oracle(&p, x, 40);
            for n in 0..=40 {
                let b = table.level(n).unwrap()[0];
                let scale = oracle[n].abs().max(1.0);
                assert!(
                    (b - oracle[n]).abs() <= 1e-12 * scale,
                    "x={x} n={n}: {b} vs {}",
                    oracle[n]
                );
            }
        }
    }

    #[test]
    fn two_mode_first_level_closure() {
        let p = fig2();
        let x = 0.5;
        let table = build_coefficients(&p, x, 1).unwrap();
        let f0 = f_term(&p, x, &MultiIndex::zeros(2)).unwrap();
        let expect = f0 / (0.7 + 0.78);
        let level1 = table.level(1).unwrap();
        assert!((level1[0] - expect).abs() < 1e-14);
        assert!((level1[1] - expect).abs() < 1e-14);
    }

    #[test]
    fn two_mode_boundary_tie_bit_identical() {
        let table = build_coefficients(&fig2(), 0.47, 30).unwrap();
        for q in 1..=30 {
            let level = table.level(q).unwrap();
            assert_eq!(level[0].to_bits(), level[q].to_bits(), "level {q}");
        }
    }

    // Every recurrence row at every stage must hold for the built table.
    fn check_recurrence_rows(p: &ModelParams, table: &CoefficientTable, x: f64, tol: f64) {
        let n_modes = p.n_modes();
        let g = p.couplings();
        for stage in n_modes as u32.. {
            let level = stage as usize + 1 - n_modes;
            if level > table.max_level() {
                break;
            }
            if level == 0 {
                continue;
            }
            for seed in MultiIndex::enumerate_level(n_modes, stage - n_modes as u32) {
                let mut lhs = 0.0;
                for j in 0..n_modes {
                    let mut up = seed.entries().to_vec();
                    up[j] += 1;
                    lhs += g[j] * (seed.entries()[j] + 1) as f64 * table.get(&MultiIndex::new(up));
                }
                let mut rhs = f_term(p, x, &seed).unwrap() * table.get(&seed);
                for j in 0..n_modes {
                    if seed.entries()[j] >= 1 {
                        let mut low = seed.entries().to_vec();
                        low[j] -= 1;
                        rhs -= g[j] * table.get(&MultiIndex::new(low));
                    }
                }
                let scale = lhs.abs().max(rhs.abs()).max(1.0);
                assert!(
                    (lhs - rhs).abs() <= tol * scale,
                    "stage {stage} seed {seed}: lhs {lhs} rhs {rhs}"
                );
            }
        }
    }

    #[test]
    fn two_mode_recurrence_rows_satisfied() {
        let p = fig2();
        for &x in &[0.5, 1.43, 2.77, -0.3] {
            let table = build_coefficients(&p, x, 25).unwrap();
            check_recurrence_rows(&p, &table, x, 1e-9);
        }
    }

    #[test]
    fn three_mode_recurrence_rows_and_tie_counts() {
        let p = ModelParams::linear(
            vec![1.0, 0.92, 0.87],
            vec![0.3, 0.25, 0.2],
            0.4,
        )
        .unwrap();
        let x = 0.61;
        let table = build_coefficients(&p, x, 12).unwrap();
        check_recurrence_rows(&p, &table, x, 1e-9);

        // effective equations per stage p: binomial(p-1, N-1); they are fewer
        // than the unknowns but enough once ties are added
        for level in 1..=12usize {
            let stage = level + 2;
            let unknowns = binomial(level + 2, 2);
            let equations = binomial(stage - 1, 2);
            assert!(equations < unknowns);
            let indices = MultiIndex::enumerate_level(3, level as u32);
            let tie_capacity: usize = boundary_groups(&indices)
                .iter()
                .map(|g| g.len() - 1)
                .sum();
            assert!(
                equations + tie_capacity >= unknowns,
                "level {level}: {equations} + {tie_capacity} < {unknowns}"
            );
        }
    }

    #[test]
    fn general_path_agrees_with_two_mode_path() {
        let p = fig2();
        let x = 0.81;
        let mut seq = CoefficientBuilder::new(p.clone(), x, DEFAULT_POLE_GUARD);
        let mut gen = CoefficientBuilder::new(p.clone(), x, DEFAULT_POLE_GUARD);
        for _ in 0..18 {
            seq.push_level().unwrap();
            let next = gen.next_level_general().unwrap();
            gen.levels.push(next);
        }
        for q in 0..=18 {
            for (a, b) in seq.levels[q].iter().zip(&gen.levels[q]) {
                let scale = a.abs().max(1.0);
                assert!((a - b).abs() <= 1e-9 * scale, "level {q}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_couplings_short_circuit() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.0, 0.0], 0.68).unwrap();
        let table = build_coefficients(&p, 0.4, 50).unwrap();
        assert_eq!(table.max_level(), 0);
        assert_eq!(table.get(&MultiIndex::zeros(2)), 1.0);
    }

    #[test]
    fn gate_refuses_strong_coupling() {
        let p = ModelParams::linear(vec![1.0], vec![1.2], 0.5).unwrap();
        assert!(matches!(
            build_coefficients(&p, 0.4, 10),
            Err(GError::ConvergenceGate { .. })
        ));
        let mut s = GSettings::default();
        s.force_convergence_gate = true;
        assert!(build_coefficients_with(&p, 0.4, 10, &s).is_ok());
    }

    #[test]
    fn equal_couplings_rank_deficient_without_nudge() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.3, 0.3], 0.68).unwrap();
        let err = build_coefficients(&p, 0.5, 4).unwrap_err();
        assert!(matches!(err, GError::RankDeficient { level: 2, .. }), "{err:?}");
    }

    #[test]
    fn evaluate_decoupled_closed_form() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.0, 0.0], 0.68).unwrap();
        for &x in &[0.3, 0.68, 1.5, -0.9, 0.92, 2.0] {
            let plus = evaluate_g(&p, ParitySector::Plus, x, 1e-12).unwrap();
            assert!((plus.value - (1.0 - 0.68 / x)).abs() < 1e-15);
            assert!(plus.converged);
            let minus = evaluate_g(&p, ParitySector::Minus, x, 1e-12).unwrap();
            assert!((minus.value - (1.0 + 0.68 / x)).abs() < 1e-15);
        }
        assert!((evaluate_g(&p, ParitySector::Plus, 0.68, 1e-12).unwrap().value).abs() < 1e-15);
    }

    #[test]
    fn evaluate_converged_tail_respects_tol() {
        let p = fig2();
        let tol = 1e-10;
        for &x in &[0.5, 1.37, 2.5] {
            let e = evaluate_g(&p, ParitySector::Plus, x, tol).unwrap();
            assert!(e.converged, "x={x}");
            assert!(e.tail_estimate <= tol);
        }
    }

    #[test]
    fn evaluate_swap_invariance_on_grid() {
        let p = fig2();
        let q = p.swapped_modes(0, 1).unwrap();
        for k in 0..40 {
            let x = -0.05 + 0.077 * k as f64;
            let pl = poles(&p, 4.0);
            if pl.nearest(x).map(|(d, _)| d < 1e-3).unwrap_or(false) {
                continue;
            }
            for sector in ParitySector::BOTH {
                let a = evaluate_g(&p, sector, x, 1e-11).unwrap();
                let b = evaluate_g(&q, sector, x, 1e-11).unwrap();
                let scale = a.value.abs().max(1.0);
                assert!(
                    (a.value - b.value).abs() <= 1e-10 * scale,
                    "x={x} {sector}: {} vs {}",
                    a.value,
                    b.value
                );
            }
        }
    }

    #[test]
    fn evaluate_equal_couplings_is_regularized() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.3, 0.3], 0.68).unwrap();
        let e = evaluate_g(&p, ParitySector::Plus, 0.5, 1e-10).unwrap();
        assert!(e.converged);
        assert!(e.value.is_finite());
        // mirrored order gives the mirrored nudge, hence identical values
        let q = p.swapped_modes(0, 1).unwrap();
        let e2 = evaluate_g(&q, ParitySector::Plus, 0.5, 1e-10).unwrap();
        assert!((e.value - e2.value).abs() <= 1e-10 * e.value.abs().max(1.0));
    }

    #[test]
    fn poles_fig2_window() {
        let p = fig2();
        let list = poles(&p, 2.05);
        let xs: Vec<f64> = list.entries.iter().map(|e| e.x_pole).collect();
        let expect = [0.0, 0.92, 1.0, 1.84, 1.92, 2.0];
        assert_eq!(xs.len(), expect.len());
        for (a, b) in xs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let labels: Vec<&[u32]> = list
            .entries
            .iter()
            .map(|e| e.indices[0].entries())
            .collect();
        assert_eq!(
            labels,
            vec![&[0, 0][..], &[0, 1], &[1, 0], &[0, 2], &[1, 1], &[2, 0]]
        );
    }

    #[test]
    fn poles_commensurate_cluster() {
        let p = ModelParams::linear(vec![1.0, 1.0], vec![0.3, 0.2], 0.5).unwrap();
        let list = poles(&p, 1.5);
        assert_eq!(list.entries.len(), 2); // 0 and 1
        let at_one = &list.entries[1];
        assert_eq!(at_one.indices.len(), 2);
    }

    #[test]
    fn poles_negative_window_empty() {
        let list = poles(&fig2(), -0.5);
        assert!(list.entries.is_empty());
    }

    #[test]
    fn poles_zero_coupling_mode_dropped() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.7, 0.0], 0.68).unwrap();
        let list = poles(&p, 2.5);
        let xs: Vec<f64> = list.entries.iter().map(|e| e.x_pole).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn two_photon_params_accepted_by_model_only() {
        // the G path is defined for the linear model; the two-photon kind is
        // oracle territory, but parameter validation is shared
        let p = ModelParams::two_photon(vec![1.0], vec![0.2], 0.4).unwrap();
        assert_eq!(p.kind(), ModelKind::TwoPhotonSpinBoson);
    }
}
