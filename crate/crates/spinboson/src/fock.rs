//! Truncated Fock-space oracle: explicit matrices for every Hamiltonian
//! form, diagonalization, and parity projections.
//!
//! The basis is truncated by TOTAL boson number `sum_j n_j <= C`, not
//! per mode. Every symmetry generator used here (parity, quarter-parity,
//! number rotations) is diagonal in the total number, so symmetry identities
//! hold exactly at truncation instead of approximately.

use crate::eigen::{self, EigenError};
use crate::model::{binomial, ModelParams, MultiIndex};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_MAX_DIMENSION: usize = 120_000;
/// Densify below this dimension; Lanczos above.
pub const DENSE_EIGEN_LIMIT: usize = 5_000;
/// Residual contract for the iterative eigenvalue path.
pub const LANCZOS_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone)]
pub enum FockError {
    #[error("cutoff {0} too small; need at least 2")]
    CutoffTooSmall(usize),
    #[error("dimension {dim} exceeds the configured bound {bound}")]
    DimensionTooLarge { dim: usize, bound: usize },
    #[error("requested {k} eigenvalues of a dimension-{dim} operator")]
    TooManyEigenvalues { k: usize, dim: usize },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn sigma_z(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }

    fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

/// Ordered spin (x) Fock basis with total-number cutoff.
///
/// Ordering is spin-major (all `Up` first), then boson level, then
/// lexicographic within a level; `dimension = 2 * binomial(C + N, N)`.
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_modes: usize,
    cutoff: usize,
    occupations: Vec<MultiIndex>,
}

impl FockBasis {
    pub fn new(n_modes: usize, cutoff: usize) -> Arc<FockBasis> {
        let mut occupations = Vec::with_capacity(binomial(cutoff + n_modes, n_modes));
        for level in 0..=cutoff {
            occupations.extend(MultiIndex::enumerate_level(n_modes, level as u32));
        }
        Arc::new(FockBasis {
            n_modes,
            cutoff,
            occupations,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn boson_dim(&self) -> usize {
        self.occupations.len()
    }

    pub fn dimension(&self) -> usize {
        2 * self.occupations.len()
    }

    pub fn state(&self, index: usize) -> (Spin, &MultiIndex) {
        let b = self.boson_dim();
        if index < b {
            (Spin::Up, &self.occupations[index])
        } else {
            (Spin::Down, &self.occupations[index - b])
        }
    }

    /// Position of an occupation vector inside the boson ordering, computed
    /// arithmetically from (level, lex rank).
    pub fn boson_index(&self, occ: &MultiIndex) -> Option<usize> {
        let level = occ.level() as usize;
        if level > self.cutoff {
            return None;
        }
        let offset = binomial(level + self.n_modes - 1, self.n_modes);
        Some(offset + occ.lex_rank())
    }

    pub fn index_of(&self, spin: Spin, occ: &MultiIndex) -> Option<usize> {
        let b = self.boson_index(occ)?;
        Some(match spin {
            Spin::Up => b,
            Spin::Down => b + self.boson_dim(),
        })
    }
}

/// Compressed sparse rows over complex entries.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub dim: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<C64>,
}

impl CsrMatrix {
    fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> CsrMatrix {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut cur_row = 0usize;
        for (r, c, v) in triplets {
            while cur_row < r {
                cur_row += 1;
                indptr[cur_row] = indices.len();
            }
            if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
            }
        }
        while cur_row < dim {
            cur_row += 1;
            indptr[cur_row] = indices.len();
        }
        CsrMatrix {
            dim,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn matvec(&self, v: &[C64], out: &mut [C64]) {
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * v[self.indices[k]];
            }
            out[r] = acc;
        }
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => self.data[lo + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::<C64>::zeros((self.dim, self.dim));
        for r in 0..self.dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out[(r, self.indices[k])] = self.data[k];
            }
        }
        out
    }

    /// `max |M - M^dag|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for r in 0..self.dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let partner = self.get(c, r);
                defect = defect.max((self.data[k] - partner.conj()).norm());
            }
        }
        defect
    }

    fn extract(&self, keep: &[usize]) -> CsrMatrix {
        let mut pos = vec![usize::MAX; self.dim];
        for (new, &old) in keep.iter().enumerate() {
            pos[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            for k in self.indptr[old_r]..self.indptr[old_r + 1] {
                let c = pos[self.indices[k]];
                if c != usize::MAX {
                    triplets.push((new_r, c, self.data[k]));
                }
            }
        }
        CsrMatrix::from_triplets(keep.len(), triplets)
    }
}

/// Which Hamiltonian form to materialize.
///
/// * `Hm`    — number + `sigma_x` linear coupling + `Delta sigma_z`
/// * `HEq2`  — number + `-i (a^dag - a)` coupling + `Delta sigma_z (-1)^n`
/// * `Hd`    — number + `(a^dag + a)` coupling + `Delta sigma_z (-1)^n`
/// * `Hms`   — number + `sigma_x` two-photon coupling + `Delta sigma_z`
/// * `HEq4`  — number + `-i (a^dag^2 - a^2)` coupling + `Delta Pi_q`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Hm,
    HEq2,
    Hd,
    Hms,
    HEq4,
    Custom,
}

impl OperatorKind {
    fn is_real(self) -> bool {
        matches!(self, OperatorKind::Hm | OperatorKind::Hd | OperatorKind::Hms)
    }

    fn is_two_photon(self) -> bool {
        matches!(self, OperatorKind::Hms | OperatorKind::HEq4)
    }
}

/// A materialized Hermitian operator over a `FockBasis`.
#[derive(Debug, Clone)]
pub struct FockOperator {
    pub basis: Arc<FockBasis>,
    pub kind: OperatorKind,
    pub matrix: CsrMatrix,
    pub hermiticity_defect: f64,
    pub warnings: Vec<String>,
    pub is_real: bool,
}

#[derive(Debug, Clone)]
pub struct FockSettings {
    pub max_dimension: usize,
    pub dense_limit: usize,
}

impl Default for FockSettings {
    fn default() -> Self {
        FockSettings {
            max_dimension: DEFAULT_MAX_DIMENSION,
            dense_limit: DENSE_EIGEN_LIMIT,
        }
    }
}

/// Build the requested Hamiltonian over a fresh total-number-truncated basis.
///
/// Raising terms that would leave the truncated space are dropped; number
/// and spin terms are exact.
pub fn build_hamiltonian(
    params: &ModelParams,
    kind: OperatorKind,
    cutoff: usize,
) -> Result<FockOperator, FockError> {
    build_hamiltonian_with(params, kind, cutoff, &FockSettings::default())
}

pub fn build_hamiltonian_with(
    params: &ModelParams,
    kind: OperatorKind,
    cutoff: usize,
    settings: &FockSettings,
) -> Result<FockOperator, FockError> {
    if cutoff < 2 {
        return Err(FockError::CutoffTooSmall(cutoff));
    }
    let basis = FockBasis::new(params.n_modes(), cutoff);
    build_on_basis(params, kind, basis, settings)
}

pub fn build_on_basis(
    params: &ModelParams,
    kind: OperatorKind,
    basis: Arc<FockBasis>,
    settings: &FockSettings,
) -> Result<FockOperator, FockError> {
    let dim = basis.dimension();
    if dim > settings.max_dimension {
        return Err(FockError::DimensionTooLarge {
            dim,
            bound: settings.max_dimension,
        });
    }
    assert_eq!(basis.n_modes(), params.n_modes());

    let omegas = params.omegas();
    let g = params.couplings();
    let delta = params.delta();
    let n_modes = params.n_modes();

    let mut triplets: Vec<(usize, usize, C64)> = Vec::new();
    let mut push = |r: usize, c: usize, v: C64| {
        if v != C64::new(0.0, 0.0) {
            triplets.push((r, c, v));
        }
    };

    for col in 0..dim {
        let (spin, occ) = basis.state(col);
        let level = occ.level() as usize;
        let number_energy = occ.dot(omegas);

        // diagonal: number term + the number-diagonal part of the spin term
        let diag = number_energy
            + match kind {
                OperatorKind::Hm | OperatorKind::Hms => delta * spin.sigma_z(),
                OperatorKind::HEq2 | OperatorKind::Hd => {
                    delta * spin.sigma_z() * if level % 2 == 0 { 1.0 } else { -1.0 }
                }
                OperatorKind::HEq4 => {
                    delta * spin.sigma_z() * quarter_cos(level)
                }
                OperatorKind::Custom => 0.0,
            };
        push(col, col, C64::new(diag, 0.0));

        // spin-flip diagonal-in-bosons part of Pi_q: -Delta sin(pi n/2) sigma_y
        if kind == OperatorKind::HEq4 {
            let s = quarter_sin(level);
            if s != 0.0 {
                let target = basis
                    .index_of(spin.flipped(), occ)
                    .expect("same occupation stays in basis");
                // sigma_y entries: <up|sigma_y|down> = -i, <down|sigma_y|up> = +i
                let sy = match spin {
                    Spin::Down => C64::new(0.0, -1.0), // row is Up
                    Spin::Up => C64::new(0.0, 1.0),    // row is Down
                };
                push(target, col, -delta * s * sy);
            }
        }

        // coupling terms
        match kind {
            OperatorKind::Hm | OperatorKind::HEq2 | OperatorKind::Hd => {
                let flip = kind == OperatorKind::Hm;
                for j in 0..n_modes {
                    if g[j] == 0.0 {
                        continue;
                    }
                    let nj = occ.entries()[j];
                    let row_spin = if flip { spin.flipped() } else { spin };
                    // a^dag_j
                    if level + 1 <= basis.cutoff() {
                        let mut up = occ.entries().to_vec();
                        up[j] += 1;
                        let row = basis.index_of(row_spin, &MultiIndex::new(up)).unwrap();
                        let amp = g[j] * ((nj + 1) as f64).sqrt();
                        let v = match kind {
                            OperatorKind::HEq2 => C64::new(0.0, -amp),
                            _ => C64::new(amp, 0.0),
                        };
                        push(row, col, v);
                    }
                    // a_j
                    if nj >= 1 {
                        let mut down = occ.entries().to_vec();
                        down[j] -= 1;
                        let row = basis.index_of(row_spin, &MultiIndex::new(down)).unwrap();
                        let amp = g[j] * (nj as f64).sqrt();
                        let v = match kind {
                            OperatorKind::HEq2 => C64::new(0.0, amp),
                            _ => C64::new(amp, 0.0),
                        };
                        push(row, col, v);
                    }
                }
            }
            OperatorKind::Hms | OperatorKind::HEq4 => {
                let flip = kind == OperatorKind::Hms;
                for j in 0..n_modes {
                    if g[j] == 0.0 {
                        continue;
                    }
                    let nj = occ.entries()[j] as u64;
                    let row_spin = if flip { spin.flipped() } else { spin };
                    // a^dag_j^2
                    if level + 2 <= basis.cutoff() {
                        let mut up = occ.entries().to_vec();
                        up[j] += 2;
                        let row = basis.index_of(row_spin, &MultiIndex::new(up)).unwrap();
                        let amp = g[j] * (((nj + 1) * (nj + 2)) as f64).sqrt();
                        let v = match kind {
                            OperatorKind::HEq4 => C64::new(0.0, -amp),
                            _ => C64::new(amp, 0.0),
                        };
                        push(row, col, v);
                    }
                    // a_j^2
                    if nj >= 2 {
                        let mut down = occ.entries().to_vec();
                        down[j] -= 2;
                        let row = basis.index_of(row_spin, &MultiIndex::new(down)).unwrap();
                        let amp = g[j] * ((nj * (nj - 1)) as f64).sqrt();
                        let v = match kind {
                            OperatorKind::HEq4 => C64::new(0.0, amp),
                            _ => C64::new(amp, 0.0),
                        };
                        push(row, col, v);
                    }
                }
            }
            OperatorKind::Custom => {}
        }
    }

    let matrix = CsrMatrix::from_triplets(dim, triplets);
    let hermiticity_defect = matrix.hermiticity_defect();

    let mut warnings = Vec::new();
    if kind.is_two_photon() {
        let max_g = g.iter().cloned().fold(0.0, f64::max);
        let min_w = omegas.iter().cloned().fold(f64::INFINITY, f64::min);
        if 2.0 * max_g >= min_w {
            warnings.push(format!(
                "two-photon coupling regime 2*max(g) = {} >= min(omega) = {}: truncated spectra \
                 are cutoff dependent (spectral collapse), treat eigenvalues as unreliable",
                2.0 * max_g,
                min_w
            ));
        }
    }

    Ok(FockOperator {
        basis,
        kind,
        matrix,
        hermiticity_defect,
        warnings,
        is_real: kind.is_real(),
    })
}

fn quarter_cos(level: usize) -> f64 {
    match level % 4 {
        0 => 1.0,
        2 => -1.0,
        _ => 0.0,
    }
}

fn quarter_sin(level: usize) -> f64 {
    match level % 4 {
        1 => 1.0,
        3 => -1.0,
        _ => 0.0,
    }
}

impl FockOperator {
    pub fn dimension(&self) -> usize {
        self.matrix.dim
    }

    pub fn to_dense(&self) -> Array2<C64> {
        self.matrix.to_dense()
    }

    /// Dense real view; meaningful only for the real kinds.
    pub fn to_dense_real(&self) -> Array2<f64> {
        assert!(self.is_real, "operator kind {:?} is not real", self.kind);
        let mut out = Array2::<f64>::zeros((self.matrix.dim, self.matrix.dim));
        for r in 0..self.matrix.dim {
            for k in self.matrix.indptr[r]..self.matrix.indptr[r + 1] {
                out[(r, self.matrix.indices[k])] = self.matrix.data[k].re;
            }
        }
        out
    }
}

/// The `k` smallest eigenvalues, ascending. Dense LAPACK below
/// `dense_limit`, Lanczos with a `1e-8` residual contract above.
pub fn eigenvalues(op: &FockOperator, k: usize) -> Result<Vec<f64>, FockError> {
    eigenvalues_with(op, k, &FockSettings::default())
}

pub fn eigenvalues_with(
    op: &FockOperator,
    k: usize,
    settings: &FockSettings,
) -> Result<Vec<f64>, FockError> {
    eigenvalues_of_csr(&op.matrix, op.is_real, k, settings)
}

fn eigenvalues_of_csr(
    matrix: &CsrMatrix,
    is_real: bool,
    k: usize,
    settings: &FockSettings,
) -> Result<Vec<f64>, FockError> {
    let dim = matrix.dim;
    if k > dim {
        return Err(FockError::TooManyEigenvalues { k, dim });
    }
    if dim <= settings.dense_limit {
        let mut w = if is_real {
            let mut out = Array2::<f64>::zeros((dim, dim));
            for r in 0..dim {
                for p in matrix.indptr[r]..matrix.indptr[r + 1] {
                    out[(r, matrix.indices[p])] = matrix.data[p].re;
                }
            }
            eigen::eigvalsh_real(&out)?
        } else {
            eigen::eigvalsh_complex(&matrix.to_dense())?
        };
        w.truncate(k);
        Ok(w)
    } else {
        let matvec = |v: &[C64], out: &mut [C64]| matrix.matvec(v, out);
        let max_iter = dim.min((6 * k + 240).max(300));
        Ok(eigen::lanczos_smallest(
            &matvec,
            dim,
            k,
            LANCZOS_RESIDUAL_TOL,
            max_iter,
        )?)
    }
}

/// Number-diagonal symmetry generators usable for block decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityGenerator {
    /// `sigma_z (-1)^(total n)`: two sectors, eigenvalues ±1.
    Z2Pi,
    /// `sigma_z i^(total n)`: four sectors, eigenvalues {1, i, -1, -i}.
    Z4SqrtP,
}

impl ParityGenerator {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            ParityGenerator::Z2Pi => &["+1", "-1"],
            ParityGenerator::Z4SqrtP => &["+1", "+i", "-1", "-i"],
        }
    }

    /// Sector id of a basis state, indexing into `labels()`.
    fn sector_of(self, spin: Spin, level: usize) -> usize {
        match self {
            ParityGenerator::Z2Pi => {
                let val = spin.sigma_z() * if level % 2 == 0 { 1.0 } else { -1.0 };
                if val > 0.0 {
                    0
                } else {
                    1
                }
            }
            ParityGenerator::Z4SqrtP => {
                // i^level * sigma_z: phases cycle 1, i, -1, -i
                let base = level % 4;
                let shifted = match spin {
                    Spin::Up => base,
                    Spin::Down => (base + 2) % 4, // multiply by -1
                };
                shifted
            }
        }
    }
}

/// One invariant block of an operator under a number-diagonal generator.
#[derive(Debug, Clone)]
pub struct ParityBlock {
    pub label: &'static str,
    /// Original basis indices making up the block, ascending.
    pub indices: Vec<usize>,
    pub matrix: CsrMatrix,
    pub is_real: bool,
}

impl ParityBlock {
    pub fn dimension(&self) -> usize {
        self.matrix.dim
    }

    pub fn eigenvalues(&self, k: usize) -> Result<Vec<f64>, FockError> {
        eigenvalues_of_csr(&self.matrix, self.is_real, k, &FockSettings::default())
    }
}

/// Split `op` into the invariant blocks of the generator and report the
/// largest matrix element connecting different blocks (exactly zero up to
/// floating error when the generator commutes with the operator).
pub fn parity_blocks(op: &FockOperator, generator: ParityGenerator) -> (Vec<ParityBlock>, f64) {
    let dim = op.dimension();
    let mut sector = vec![0usize; dim];
    for i in 0..dim {
        let (spin, occ) = op.basis.state(i);
        sector[i] = generator.sector_of(spin, occ.level() as usize);
    }
    let mut off_block = 0.0f64;
    for r in 0..dim {
        for k in op.matrix.indptr[r]..op.matrix.indptr[r + 1] {
            let c = op.matrix.indices[k];
            if sector[r] != sector[c] {
                off_block = off_block.max(op.matrix.data[k].norm());
            }
        }
    }
    let labels = generator.labels();
    let blocks = labels
        .iter()
        .enumerate()
        .map(|(s, &label)| {
            let indices: Vec<usize> = (0..dim).filter(|&i| sector[i] == s).collect();
            let matrix = op.matrix.extract(&indices);
            ParityBlock {
                label,
                indices,
                matrix,
                is_real: op.is_real,
            }
        })
        .collect();
    (blocks, off_block)
}

/// Extract the sub-operator on an arbitrary index set (used for spin blocks
/// of the spin-diagonal forms).
pub fn extract_block(op: &FockOperator, indices: &[usize]) -> ParityBlock {
    ParityBlock {
        label: "custom",
        indices: indices.to_vec(),
        matrix: op.matrix.extract(indices),
        is_real: op.is_real,
    }
}
