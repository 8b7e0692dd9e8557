//! Exact construction of the quadratic form `lambda(O) = -ntr([H,O]^2)` over
//! Pauli-coefficient space and the constrained minimum-eigenvalue solve, for
//! both slowest-operator definitions. Serves as the oracle for the DMRG
//! backend.
//!
//! Local definition: `O` lives on an open `N`-site window; the form is
//! `||[H_loc,O]||^2 + ||[Z_0,O]||^2 + ||[Z_{N-1},O]||^2` with the all-identity
//! word excluded from the basis (this houses `ntr O = 0`).
//!
//! Translation-invariant definition: the cell basis is restricted to words
//! whose first letter is in `{X, Y, Z}` (the first-site gauge, which makes
//! `ntr O_i = 0` automatic), the per-cell form sums commutator overlaps over
//! all relative cell shifts, and `ntr(H O) = 0` is a projected-out constraint.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ising::{build_h_loc, build_hamiltonian, IsingParams};
use crate::linalg::{self, LanczosConfig};
use crate::pauli::{commutator, hs_norm_sq, OperatorVector, PauliString, PauliSum};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("window {0} exceeds the exact cap of {1}")]
    CapExceeded(usize, usize),
    #[error("eigensolver failed: {0}")]
    Eigensolver(#[from] linalg::LinalgError),
    #[error(transparent)]
    Pauli(#[from] crate::pauli::PauliError),
    #[error(transparent)]
    Ising(#[from] crate::ising::IsingError),
}

pub type Result<T> = std::result::Result<T, SolveError>;

/// Size limits for the exact backend.
#[derive(Clone, Copy, Debug)]
pub struct SolverCaps {
    /// Largest window for the local exact form (default 8).
    pub local_exact: usize,
    /// Largest window for the translation-invariant exact form (default 7).
    pub ti_exact: usize,
    /// Basis size up to which the dense symmetric eigensolver is used;
    /// larger forms go through sparse Lanczos.
    pub dense_solve_dim: usize,
}

impl Default for SolverCaps {
    fn default() -> Self {
        SolverCaps { local_exact: 8, ti_exact: 7, dense_solve_dim: 2048 }
    }
}

/// Which slowest-operator definition a form or result belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Definition {
    Local,
    TranslationInvariant,
}

impl std::fmt::Display for Definition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Definition::Local => write!(f, "local"),
            Definition::TranslationInvariant => write!(f, "translation_invariant"),
        }
    }
}

/// Basis layout of a form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormBasis {
    /// All words on `n` sites except the identity; basis index = word - 1.
    LocalTraceless { n: usize },
    /// Words whose first letter is X, Y or Z; 3 * 4^(n-1) of them.
    TiGauged { n: usize },
}

impl FormBasis {
    pub fn dim(&self) -> usize {
        match *self {
            FormBasis::LocalTraceless { n } => (1 << (2 * n)) - 1,
            FormBasis::TiGauged { n } => 3 << (2 * (n - 1)),
        }
    }

    pub fn window(&self) -> usize {
        match *self {
            FormBasis::LocalTraceless { n } | FormBasis::TiGauged { n } => n,
        }
    }

    pub fn index_of(&self, word: &PauliString) -> Option<usize> {
        match *self {
            FormBasis::LocalTraceless { .. } => {
                let w = word.index();
                if w == 0 {
                    None
                } else {
                    Some(w - 1)
                }
            }
            FormBasis::TiGauged { .. } => {
                let w = word.index();
                let first = w & 3;
                if first == 0 {
                    None
                } else {
                    Some((w >> 2) * 3 + first - 1)
                }
            }
        }
    }

    pub fn word_at(&self, idx: usize) -> PauliString {
        match *self {
            FormBasis::LocalTraceless { n } => PauliString::from_index(n, idx + 1),
            FormBasis::TiGauged { n } => PauliString::from_index(n, (idx / 3) * 4 + idx % 3 + 1),
        }
    }
}

/// One commutator factor `K : O -> -i [A, O]` stored by column, so the form
/// contribution `||[A, O]||^2` applies as `K^T (K v)`.
struct CommutatorFactor {
    /// Per basis column: (row = target word index, real coefficient).
    columns: Vec<Vec<(u32, f64)>>,
    rows: usize,
}

impl CommutatorFactor {
    fn apply_gram(&self, v: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        tmp[..self.rows].fill(0.0);
        for (b, col) in self.columns.iter().enumerate() {
            let vb = v[b];
            if vb != 0.0 {
                for &(r, w) in col {
                    tmp[r as usize] += w * vb;
                }
            }
        }
        for (b, col) in self.columns.iter().enumerate() {
            let mut acc = 0.0;
            for &(r, w) in col {
                acc += w * tmp[r as usize];
            }
            out[b] += acc;
        }
    }

    fn nnz(&self) -> usize {
        self.columns.iter().map(|c| c.len()).sum()
    }
}

/// Symmetric sparse matrix in CSR layout.
struct CsrSym {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrSym {
    fn from_coo(dim: usize, coo: HashMap<(u32, u32), f64>) -> Self {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
        for ((r, c), v) in coo {
            rows[r as usize].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrSym { dim, row_ptr, cols, vals }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for r in 0..self.dim {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * v[self.cols[k] as usize];
            }
            out[r] += acc;
        }
    }
}

enum FormMatrix {
    Factored { factors: Vec<CommutatorFactor>, rows: usize },
    Csr(CsrSym),
}

/// The quadratic form `lambda(O) = -ntr([H,O]^2)` over a Pauli basis,
/// positive semidefinite and symmetric, with optional linear constraints to
/// project out of the search space.
pub struct QuadraticForm {
    pub basis: FormBasis,
    pub definition: Definition,
    pub params: IsingParams,
    matrix: FormMatrix,
    /// Orthonormal constraint directions excluded from the search space.
    pub constraint_projectors: Vec<Vec<f64>>,
    /// Raw (unnormalized) constraint functionals, for residual reporting.
    raw_constraints: Vec<(String, Vec<f64>)>,
    pub dense_solve_dim: usize,
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// `out = M v` (dense-free).
    pub fn apply(&self, v: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        out.fill(0.0);
        match &self.matrix {
            FormMatrix::Factored { factors, rows } => {
                scratch.resize(*rows, 0.0);
                for f in factors {
                    f.apply_gram(v, scratch, out);
                }
            }
            FormMatrix::Csr(m) => m.apply(v, out),
        }
    }

    /// Form value `v^T M v`.
    pub fn value(&self, v: &[f64]) -> f64 {
        let mut out = vec![0.0; v.len()];
        let mut scratch = Vec::new();
        self.apply(v, &mut out, &mut scratch);
        v.iter().zip(&out).map(|(a, b)| a * b).sum()
    }

    /// Materializes the dense matrix (test/oracle use; guarded by size).
    pub fn to_dense_matrix(&self) -> ndarray::Array2<f64> {
        let dim = self.dim();
        assert!(dim <= 1 << 14, "form too large to densify");
        let mut m = ndarray::Array2::<f64>::zeros((dim, dim));
        let mut e = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        let mut scratch = Vec::new();
        for b in 0..dim {
            e[b] = 1.0;
            self.apply(&e, &mut col, &mut scratch);
            e[b] = 0.0;
            for (r, &v) in col.iter().enumerate() {
                m[[r, b]] = v;
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        match &self.matrix {
            FormMatrix::Factored { factors, .. } => factors.iter().map(|f| f.nnz()).sum(),
            FormMatrix::Csr(m) => m.vals.len(),
        }
    }
}

/// Expands `-i [A, B_word]` into (word-index, real coefficient) pairs.
/// Both inputs are Hermitian, so the commutator coefficients are purely
/// imaginary and become real after the `-i` factor.
fn commutator_column(terms: &[(PauliString, f64)], word: &PauliString) -> Vec<(u128, f64)> {
    let mut out: Vec<(u128, f64)> = Vec::with_capacity(terms.len());
    for (p, c) in terms {
        if p.commutes_with(word) {
            continue;
        }
        let (phase, s) = p.mul(word).expect("equal windows");
        // [p, word] = 2 i^k s with k odd; -i * 2 i^k = 2 when k = 1, -2 when k = 3.
        let sign = match phase.power() {
            1 => 1.0,
            3 => -1.0,
            _ => unreachable!("anticommuting Hermitian words give odd phase"),
        };
        out.push((s.index() as u128, 2.0 * c * sign));
    }
    out.sort_unstable_by_key(|&(w, _)| w);
    out.dedup_by(|a, b| {
        if a.0 == b.0 {
            b.1 += a.1;
            true
        } else {
            false
        }
    });
    out.retain(|&(_, v)| v != 0.0);
    out
}

fn sum_terms_real(s: &PauliSum) -> Vec<(PauliString, f64)> {
    s.terms().map(|(p, c)| (*p, c.re)).collect()
}

/// Builds the local-definition form on an open `n`-site window.
pub fn local_form(params: IsingParams, n: usize, caps: &SolverCaps) -> Result<QuadraticForm> {
    if n > caps.local_exact {
        return Err(SolveError::CapExceeded(n, caps.local_exact));
    }
    let basis = FormBasis::LocalTraceless { n };
    let dim = basis.dim();
    let rows = 1usize << (2 * n);

    let h_loc = sum_terms_real(&build_h_loc(params, n));
    let z_left = vec![(PauliString::single(n, 0, crate::pauli::LETTER_Z), 1.0)];
    let z_right = vec![(PauliString::single(n, n - 1, crate::pauli::LETTER_Z), 1.0)];

    let factor_of = |terms: &[(PauliString, f64)]| -> CommutatorFactor {
        let columns: Vec<Vec<(u32, f64)>> = (0..dim)
            .into_par_iter()
            .map(|b| {
                let word = basis.word_at(b);
                commutator_column(terms, &word)
                    .into_iter()
                    .map(|(w, v)| (w as u32, v))
                    .collect()
            })
            .collect();
        CommutatorFactor { columns, rows }
    };

    let factors = vec![factor_of(&h_loc), factor_of(&z_left), factor_of(&z_right)];
    Ok(QuadraticForm {
        basis,
        definition: Definition::Local,
        params,
        matrix: FormMatrix::Factored { factors, rows },
        constraint_projectors: Vec::new(),
        raw_constraints: Vec::new(),
        dense_solve_dim: caps.dense_solve_dim,
    })
}

/// Builds the translation-invariant per-cell form.
///
/// `M[a,b] = sum_d ntr([H, B_a]^dag [H, shift_d(B_b)])`, with each pair
/// evaluated on a minimal open window of `n + 2 + |d|` sites. The single
/// `ntr(H O) = 0` constraint is attached for projection.
pub fn ti_form(params: IsingParams, n: usize, caps: &SolverCaps) -> Result<QuadraticForm> {
    if n > caps.ti_exact {
        return Err(SolveError::CapExceeded(n, caps.ti_exact));
    }
    let basis = FormBasis::TiGauged { n };
    let dim = basis.dim();

    // Base commutators on the minimal window: cell at offset 1 on n+2 sites.
    // By translation invariance the d-shifted column is the same list with
    // words shifted by d sites.
    let window = n + 2;
    let h_terms = sum_terms_real(&build_h_loc(params, window));
    let base: Vec<Vec<(u128, f64)>> = (0..dim)
        .into_par_iter()
        .map(|b| {
            let word = basis.word_at(b).embed(window, 1, false).expect("fits");
            commutator_column(&h_terms, &word)
        })
        .collect();

    let mut by_word: HashMap<u128, Vec<(u32, f64)>> = HashMap::new();
    for (a, col) in base.iter().enumerate() {
        for &(w, v) in col {
            by_word.entry(w).or_default().push((a as u32, v));
        }
    }

    let mut coo: HashMap<(u32, u32), f64> = HashMap::new();
    for d in 0..=(n + 1) {
        for (b, col) in base.iter().enumerate() {
            for &(w, vb) in col {
                let shifted = w << (2 * d);
                if let Some(hits) = by_word.get(&shifted) {
                    for &(a, va) in hits {
                        let contrib = va * vb;
                        if d == 0 {
                            *coo.entry((a, b as u32)).or_default() += contrib;
                        } else {
                            // M_d and its transpose.
                            *coo.entry((a, b as u32)).or_default() += contrib;
                            *coo.entry((b as u32, a)).or_default() += contrib;
                        }
                    }
                }
            }
        }
    }
    coo.retain(|_, v| *v != 0.0);

    // ntr(H O) per cell: the Hamiltonian coefficient of each gauged cell word.
    // With the first-site gauge the only words appearing in H are the bond
    // ZZI..I and the single-site fields XI..I / ZI..I.
    let mut v_raw = vec![0.0; dim];
    for (idx, v) in v_raw.iter_mut().enumerate() {
        let word = basis.word_at(idx);
        let weight = word.weight();
        if weight == 1 {
            match word.letter(0) {
                crate::pauli::LETTER_X => *v = params.g,
                crate::pauli::LETTER_Z => *v = params.h,
                _ => {}
            }
        } else if weight == 2
            && n >= 2
            && word.letter(0) == crate::pauli::LETTER_Z
            && word.letter(1) == crate::pauli::LETTER_Z
        {
            *v = IsingParams::ZZ_COUPLING;
        }
    }
    let vnorm = v_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (projectors, raw) = if vnorm > 0.0 {
        let unit: Vec<f64> = v_raw.iter().map(|x| x / vnorm).collect();
        (vec![unit], vec![("ho_overlap".to_string(), v_raw)])
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(QuadraticForm {
        basis,
        definition: Definition::TranslationInvariant,
        params,
        matrix: FormMatrix::Csr(CsrSym::from_coo(dim, coo)),
        constraint_projectors: projectors,
        raw_constraints: raw,
        dense_solve_dim: caps.dense_solve_dim,
    })
}

/// Outcome of a slowest-operator minimization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlowestResult {
    pub definition: Definition,
    pub g: f64,
    pub h: f64,
    pub n: usize,
    /// Value of `-ntr([H,O]^2)`, non-negative up to solver noise.
    pub lambda: f64,
    pub residuals: BTreeMap<String, f64>,
    /// Full coefficient vector when the window is small enough to enumerate.
    #[serde(skip)]
    pub vector: Option<OperatorVector>,
}

impl SlowestResult {
    /// The minimizer as a sparse Pauli sum (requires the stored vector).
    pub fn to_pauli_sum(&self, drop_tol: f64) -> Option<PauliSum> {
        self.vector.as_ref().map(|v| v.to_pauli_sum(drop_tol))
    }

    /// JSON with the coefficient list filtered at `|value| > 1e-12`.
    pub fn to_json(&self) -> serde_json::Value {
        let coeffs: Vec<(String, f64)> = match &self.vector {
            Some(v) => {
                let sum = v.to_pauli_sum(1e-12);
                sum.terms().map(|(p, c)| (p.to_string(), c.re)).collect()
            }
            None => Vec::new(),
        };
        serde_json::json!({
            "definition": self.definition,
            "g": self.g,
            "h": self.h,
            "N": self.n,
            "lambda": self.lambda,
            "residuals": self.residuals,
            "coeffs": coeffs,
        })
    }
}

/// Fixes the overall sign so the largest-magnitude coefficient is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut mag = 0.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > mag {
            mag = x.abs();
            best = i;
        }
    }
    if mag > 0.0 && v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Solves the constrained minimum-eigenvalue problem of a form.
///
/// Dense symmetric eigensolve for small bases, Lanczos with constraint
/// deflation above `dense_solve_dim`. The eigenvector is normalized to unit
/// ntr-norm and sign-fixed.
pub fn solve(form: &QuadraticForm, seed: u64) -> Result<SlowestResult> {
    let dim = form.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let (lambda, mut x, residual, gap, scale) = if dim <= form.dense_solve_dim {
        let mut m = form.to_dense_matrix();
        // Householder-reduce each constraint direction out of the matrix.
        // With k constraints the search space is the trailing (dim-k) block.
        let k = form.constraint_projectors.len();
        let mut hh: Vec<Vec<f64>> = Vec::new();
        for (ci, c) in form.constraint_projectors.iter().enumerate() {
            // Map c (already orthonormal to earlier constraints) to e_ci.
            let mut u: Vec<f64> = c.clone();
            for hv in &hh {
                householder_apply_vec(hv, &mut u);
            }
            let mut e = vec![0.0; dim];
            e[ci] = 1.0;
            let sign = if u[ci] >= 0.0 { 1.0 } else { -1.0 };
            let mut w: Vec<f64> = u.iter().zip(&e).map(|(a, b)| a + sign * b).collect();
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nw > 1e-14 {
                for x in &mut w {
                    *x /= nw;
                }
            }
            householder_apply_mat(&w, &mut m);
            hh.push(w);
        }
        let sub = m.slice(ndarray::s![k.., k..]).to_owned();
        let (vals, vecs) = linalg::eigh(&sub)?;
        let mut full = vec![0.0; dim];
        for i in 0..dim - k {
            full[k + i] = vecs[[i, 0]];
        }
        for hv in hh.iter().rev() {
            householder_apply_vec(hv, &mut full);
        }
        let gap = if vals.len() > 1 { vals[1] - vals[0] } else { f64::INFINITY };
        let scale = vals[vals.len() - 1].abs().max(1.0);
        // Residual of the reconstructed eigenvector on the constrained form
        // (project M x back onto the search subspace).
        let mut out = vec![0.0; dim];
        let mut scratch = Vec::new();
        form.apply(&full, &mut out, &mut scratch);
        for c in &form.constraint_projectors {
            let dot: f64 = c.iter().zip(&out).map(|(a, b)| a * b).sum();
            for (o, ci) in out.iter_mut().zip(c) {
                *o -= dot * ci;
            }
        }
        let lam = vals[0];
        let res = out
            .iter()
            .zip(&full)
            .map(|(mv, v)| (mv - lam * v) * (mv - lam * v))
            .sum::<f64>()
            .sqrt();
        (lam, full, res, gap, scale)
    } else {
        let mut scratch = Vec::new();
        let cfg = LanczosConfig { max_subspace: 350, max_restarts: 10, tol: 1e-11 };
        let out = linalg::lanczos_smallest(
            |v, o| form.apply(v, o, &mut scratch),
            dim,
            None,
            &form.constraint_projectors,
            &cfg,
            &mut rng,
        )?;
        let scale = 1.0f64.max(out.value.abs());
        (out.value, out.vector, out.residual, out.ritz_gap, scale)
    };

    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    for v in &mut x {
        *v /= nx;
    }
    fix_sign(&mut x);

    let mut residuals = BTreeMap::new();
    residuals.insert("eigen_residual".to_string(), residual);
    residuals.insert("spectral_gap".to_string(), gap);
    residuals.insert("degenerate".to_string(), if gap < 1e-10 * scale { 1.0 } else { 0.0 });
    residuals.insert("identity_trace".to_string(), 0.0);
    for (name, raw) in &form.raw_constraints {
        let v: f64 = raw.iter().zip(&x).map(|(a, b)| a * b).sum();
        residuals.insert(name.clone(), v.abs());
    }

    let n = form.basis.window();
    let mut vec = OperatorVector::zeros(n);
    for (idx, &val) in x.iter().enumerate() {
        if val != 0.0 {
            vec.set(&form.basis.word_at(idx), val);
        }
    }

    Ok(SlowestResult {
        definition: form.definition,
        g: form.params.g,
        h: form.params.h,
        n,
        lambda,
        residuals,
        vector: Some(vec),
    })
}

fn householder_apply_vec(w: &[f64], v: &mut [f64]) {
    let c: f64 = w.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    for (vi, wi) in v.iter_mut().zip(w) {
        *vi -= 2.0 * c * wi;
    }
}

fn householder_apply_mat(w: &[f64], m: &mut ndarray::Array2<f64>) {
    let dim = m.nrows();
    let wv = ndarray::ArrayView1::from(w);
    // m <- (I - 2 w w^T) m (I - 2 w w^T)
    let mw = m.dot(&wv);
    for i in 0..dim {
        for j in 0..dim {
            m[[i, j]] -= 2.0 * mw[i] * w[j];
        }
    }
    let wm = wv.dot(m);
    for i in 0..dim {
        for j in 0..dim {
            m[[i, j]] -= 2.0 * w[i] * wm[j];
        }
    }
}

/// Direct evaluation of `-ntr([H,O]^2)` on an `l`-site periodic chain by
/// commutator expansion; independent of `l` once `l >= support(O) + 2`.
pub fn evaluate_lambda(o: &PauliSum, params: IsingParams, l: usize) -> Result<f64> {
    let h = build_hamiltonian(params, l, true)?;
    let emb = if o.window() == l { o.clone() } else { o.embed(l, 0, false)? };
    let c = commutator(&h, &emb)?;
    Ok(hs_norm_sq(&c))
}
