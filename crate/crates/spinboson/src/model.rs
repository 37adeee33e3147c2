//! Model parameters, parity sectors, and multi-index bookkeeping shared by
//! every other module.
//!
//! A spin-boson instance is a set of mode frequencies `omega_j > 0`, couplings
//! `g_j >= 0`, and half-gap `delta`, either with linear coupling through
//! `a^dag + a` or two-photon coupling through `a^dag^2 + a^2`.

use std::fmt;
use thiserror::Error;

/// Which coupling operator the spin sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Linear coupling `sigma_x sum_k g_k (a_k^dag + a_k)`.
    LinearSpinBoson,
    /// Squeezed coupling `sigma_x sum_k g_k (a_k^dag^2 + a_k^2)`.
    TwoPhotonSpinBoson,
}

/// Parity sector selector: `Plus` takes the upper sign in `G_N^±`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParitySector {
    Plus,
    Minus,
}

impl ParitySector {
    /// The sign in front of `Delta/(X - n.omega)` is `-sign()`.
    pub fn sign(self) -> f64 {
        match self {
            ParitySector::Plus => 1.0,
            ParitySector::Minus => -1.0,
        }
    }

    pub const BOTH: [ParitySector; 2] = [ParitySector::Plus, ParitySector::Minus];
}

impl fmt::Display for ParitySector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParitySector::Plus => write!(f, "plus"),
            ParitySector::Minus => write!(f, "minus"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("omegas has length {omegas} and couplings length {couplings}; both must equal n_modes = {n_modes}")]
    LengthMismatch {
        n_modes: usize,
        omegas: usize,
        couplings: usize,
    },
    #[error("non-positive frequency omega[{index}] = {value}")]
    NonPositiveFrequency { index: usize, value: f64 },
    #[error("negative coupling g[{index}] = {value}")]
    NegativeCoupling { index: usize, value: f64 },
    #[error("non-finite parameter {name}")]
    NonFinite { name: String },
    #[error("mode index {index} out of range for {n_modes} modes")]
    ModeIndexOutOfRange { index: usize, n_modes: usize },
}

/// A validated spin-boson model instance.
///
/// Immutable after construction; `ratios[j] = g_j / omega_j` is precomputed
/// because the series evaluation gates on `max_j ratios[j] < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    n_modes: usize,
    omegas: Vec<f64>,
    couplings: Vec<f64>,
    delta: f64,
    kind: ModelKind,
    ratios: Vec<f64>,
}

impl ModelParams {
    /// Validate raw parameters into a `ModelParams`.
    pub fn validated(
        omegas: Vec<f64>,
        couplings: Vec<f64>,
        delta: f64,
        kind: ModelKind,
    ) -> Result<Self, ModelError> {
        let n_modes = omegas.len();
        if n_modes == 0 || couplings.len() != n_modes {
            return Err(ModelError::LengthMismatch {
                n_modes,
                omegas: omegas.len(),
                couplings: couplings.len(),
            });
        }
        if !delta.is_finite() {
            return Err(ModelError::NonFinite {
                name: "delta".into(),
            });
        }
        for (j, &w) in omegas.iter().enumerate() {
            if !w.is_finite() {
                return Err(ModelError::NonFinite {
                    name: format!("omega[{j}]"),
                });
            }
            if w <= 0.0 {
                return Err(ModelError::NonPositiveFrequency { index: j, value: w });
            }
        }
        for (j, &g) in couplings.iter().enumerate() {
            if !g.is_finite() {
                return Err(ModelError::NonFinite {
                    name: format!("g[{j}]"),
                });
            }
            if g < 0.0 {
                return Err(ModelError::NegativeCoupling { index: j, value: g });
            }
        }
        let ratios = couplings
            .iter()
            .zip(&omegas)
            .map(|(&g, &w)| g / w)
            .collect();
        Ok(ModelParams {
            n_modes,
            omegas,
            couplings,
            delta,
            kind,
            ratios,
        })
    }

    /// Shorthand for a linear model.
    pub fn linear(omegas: Vec<f64>, couplings: Vec<f64>, delta: f64) -> Result<Self, ModelError> {
        Self::validated(omegas, couplings, delta, ModelKind::LinearSpinBoson)
    }

    /// Shorthand for a two-photon model.
    pub fn two_photon(
        omegas: Vec<f64>,
        couplings: Vec<f64>,
        delta: f64,
    ) -> Result<Self, ModelError> {
        Self::validated(omegas, couplings, delta, ModelKind::TwoPhotonSpinBoson)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Convergence ratios `g_j / omega_j`.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().cloned().fold(0.0, f64::max)
    }

    /// `X = E + sum_j g_j^2 / omega_j`; this returns the shift term.
    pub fn x_shift(&self) -> f64 {
        self.couplings
            .iter()
            .zip(&self.omegas)
            .map(|(&g, &w)| g * g / w)
            .sum()
    }

    /// Return a copy with modes `i` and `j` exchanged (both `g` and `omega`).
    pub fn swapped_modes(&self, i: usize, j: usize) -> Result<Self, ModelError> {
        for &k in &[i, j] {
            if k >= self.n_modes {
                return Err(ModelError::ModeIndexOutOfRange {
                    index: k,
                    n_modes: self.n_modes,
                });
            }
        }
        let mut out = self.clone();
        out.omegas.swap(i, j);
        out.couplings.swap(i, j);
        out.ratios.swap(i, j);
        Ok(out)
    }

    /// Restrict to the modes with nonzero coupling, preserving order.
    ///
    /// Returns the reduced parameters and the original indices of the kept
    /// modes. Terms of the `G` series with any occupation on a `g_j = 0` mode
    /// vanish identically, so the reduced model evaluates to the same series
    /// while avoiding spurious pole-guard trips at pure zero-coupling
    /// combinations `n.omega`.
    pub fn active_modes(&self) -> (Option<Self>, Vec<usize>) {
        let kept: Vec<usize> = (0..self.n_modes)
            .filter(|&j| self.couplings[j] > 0.0)
            .collect();
        if kept.is_empty() {
            return (None, kept);
        }
        let omegas = kept.iter().map(|&j| self.omegas[j]).collect();
        let couplings = kept.iter().map(|&j| self.couplings[j]).collect();
        let reduced = ModelParams::validated(omegas, couplings, self.delta, self.kind)
            .expect("restriction of valid params is valid");
        (Some(reduced), kept)
    }
}

/// Binomial coefficient, panic-free for the index ranges used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// An N-component multi-index with cached total level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    entries: Vec<u32>,
}

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex { entries }
    }

    pub fn zeros(n_modes: usize) -> Self {
        MultiIndex {
            entries: vec![0; n_modes],
        }
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn n_modes(&self) -> usize {
        self.entries.len()
    }

    /// Total level `p = sum_j n_j`.
    pub fn level(&self) -> u32 {
        self.entries.iter().sum()
    }

    /// Dot product with per-mode weights, e.g. `n . omega`.
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.entries
            .iter()
            .zip(weights)
            .map(|(&n, &w)| n as f64 * w)
            .sum()
    }

    /// All multi-indices of `n_modes` components with entry sum `p`,
    /// lexicographically ascending. The count is `binomial(p + N - 1, N - 1)`.
    pub fn enumerate_level(n_modes: usize, p: u32) -> Vec<MultiIndex> {
        assert!(n_modes >= 1, "n_modes must be at least 1");
        let mut out = Vec::with_capacity(binomial(p as usize + n_modes - 1, n_modes - 1));
        let mut current = vec![0u32; n_modes];
        fill_level(&mut out, &mut current, 0, p);
        out
    }

    /// Rank of `self` within `enumerate_level(n_modes, level())`.
    pub fn lex_rank(&self) -> usize {
        // Count indices that precede self: for each position j, indices that
        // agree on entries[..j] and have a smaller entry at j.
        let n = self.entries.len();
        let mut rank = 0usize;
        let mut remaining: u32 = self.level();
        for j in 0..n.saturating_sub(1) {
            for v in 0..self.entries[j] {
                let rest = (remaining - v) as usize;
                rank += binomial(rest + n - j - 2, n - j - 2);
            }
            remaining -= self.entries[j];
        }
        rank
    }
}

fn fill_level(out: &mut Vec<MultiIndex>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(MultiIndex::new(current.clone()));
        return;
    }
    for v in 0..=remaining {
        current[pos] = v;
        fill_level(out, current, pos + 1, remaining - v);
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_params() -> ModelParams {
        ModelParams::linear(vec![1.0, 0.92], vec![0.7, 0.78], 0.68).unwrap()
    }

    #[test]
    fn validate_fig2() {
        let p = fig2_params();
        assert_eq!(p.n_modes(), 2);
        assert!((p.ratios()[0] - 0.7).abs() < 1e-15);
        assert!((p.ratios()[1] - 0.78 / 0.92).abs() < 1e-15);
    }

    #[test]
    fn validate_decoupled() {
        let p = ModelParams::linear(vec![1.0], vec![0.0], 0.5).unwrap();
        assert_eq!(p.ratios(), &[0.0]);
    }

    #[test]
    fn validate_rejects_nonpositive_frequency() {
        let err = ModelParams::linear(vec![1.0, -0.2], vec![0.1, 0.1], 0.1).unwrap_err();
        assert_eq!(
            err,
            ModelError::NonPositiveFrequency {
                index: 1,
                value: -0.2
            }
        );
    }

    #[test]
    fn validate_rejects_length_mismatch() {
        let err = ModelParams::linear(vec![1.0, 0.9], vec![0.1], 0.1).unwrap_err();
        assert!(matches!(err, ModelError::LengthMismatch { .. }));
    }

    #[test]
    fn validate_rejects_negative_coupling() {
        let err = ModelParams::linear(vec![1.0], vec![-0.1], 0.1).unwrap_err();
        assert!(matches!(
            err,
            ModelError::NegativeCoupling { index: 0, .. }
        ));
    }

    #[test]
    fn x_shift_values() {
        let p = fig2_params();
        let expect = 0.49 + 0.78 * 0.78 / 0.92;
        assert!((p.x_shift() - expect).abs() < 1e-15);

        let single = ModelParams::linear(vec![1.0], vec![0.7], 0.68).unwrap();
        assert!((single.x_shift() - 0.49).abs() < 1e-15);

        let zero = ModelParams::linear(vec![1.0, 0.92], vec![0.0, 0.0], 0.68).unwrap();
        assert_eq!(zero.x_shift(), 0.0);
    }

    #[test]
    fn x_shift_swap_invariant() {
        let p = fig2_params();
        let q = p.swapped_modes(0, 1).unwrap();
        assert!((p.x_shift() - q.x_shift()).abs() < 1e-15);
    }

    #[test]
    fn swap_modes_contract() {
        let p = fig2_params();
        let q = p.swapped_modes(0, 1).unwrap();
        assert_eq!(q.omegas(), &[0.92, 1.0]);
        assert_eq!(q.couplings(), &[0.78, 0.7]);
        let same = p.swapped_modes(1, 1).unwrap();
        assert_eq!(same, p);
        assert!(p.swapped_modes(0, 2).is_err());
    }

    #[test]
    fn enumerate_level_examples() {
        let l = MultiIndex::enumerate_level(2, 2);
        let entries: Vec<&[u32]> = l.iter().map(|m| m.entries()).collect();
        assert_eq!(entries, vec![&[0, 2][..], &[1, 1], &[2, 0]]);

        let l0 = MultiIndex::enumerate_level(2, 0);
        assert_eq!(l0.len(), 1);
        assert_eq!(l0[0].entries(), &[0, 0]);

        let l3 = MultiIndex::enumerate_level(3, 2);
        assert_eq!(l3.len(), binomial(4, 2));
    }

    #[test]
    fn enumerate_level_counts_match_binomial() {
        for n in 1..=4usize {
            for p in 0..=12u32 {
                let l = MultiIndex::enumerate_level(n, p);
                assert_eq!(l.len(), binomial(p as usize + n - 1, n - 1), "N={n} p={p}");
                // lexicographic and strictly increasing
                for w in l.windows(2) {
                    assert!(w[0].entries() < w[1].entries());
                }
                // ranks are consecutive
                for (r, m) in l.iter().enumerate() {
                    assert_eq!(m.lex_rank(), r, "N={n} p={p} m={m}");
                    assert_eq!(m.level(), p);
                }
            }
        }
    }

    #[test]
    fn active_modes_reduction() {
        let p = ModelParams::linear(vec![1.0, 0.92], vec![0.7, 0.0], 0.68).unwrap();
        let (reduced, kept) = p.active_modes();
        let reduced = reduced.unwrap();
        assert_eq!(kept, vec![0]);
        assert_eq!(reduced.omegas(), &[1.0]);

        let z = ModelParams::linear(vec![1.0, 0.92], vec![0.0, 0.0], 0.68).unwrap();
        let (none, kept) = z.active_modes();
        assert!(none.is_none());
        assert!(kept.is_empty());
    }
}
