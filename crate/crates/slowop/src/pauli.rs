//! Pauli-string algebra and the Hilbert–Schmidt geometry of operator space.
//!
//! Operators on an `n`-site spin-1/2 chain are expanded in the basis of Pauli
//! words over `{I, X, Y, Z}`. All inner products use the normalized trace
//! `ntr(A) = Tr(A) / 2^n`, under which Pauli words are orthonormal and
//! identity-padded embeddings are isometric. Hermitian operators have real
//! coefficients in this basis.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

/// Maximum chain length representable by a packed [`PauliString`].
pub const MAX_SITES: usize = 64;

/// Default cap on `to_dense` conversions (memory bound: `4^cap` complex entries).
pub const DENSE_CAP: usize = 14;

/// Default cap on [`OperatorVector`] windows (`4^cap` real coefficients).
pub const VECTOR_CAP: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum PauliError {
    #[error("window size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("chain length {0} exceeds the {MAX_SITES}-site limit")]
    TooLong(usize),
    #[error("embedding of a {len}-site operator at offset {offset} does not fit an open {window}-site window")]
    EmbedOutOfRange { len: usize, offset: usize, window: usize },
    #[error("dense conversion of {0} sites exceeds the cap of {1}")]
    DenseCapExceeded(usize, usize),
    #[error("operator has non-real Pauli coefficients (max imag {0:.3e}); not Hermitian")]
    NotHermitian(f64),
    #[error("invalid Pauli word {0:?}")]
    BadWord(String),
    #[error("invalid Pauli term line {0:?}")]
    BadTermLine(String),
}

pub type Result<T> = std::result::Result<T, PauliError>;

/// Single-site Pauli letters, encoded in two bits.
///
/// With this encoding the non-phase part of a product is the XOR of the codes.
pub const LETTER_I: u8 = 0;
pub const LETTER_X: u8 = 1;
pub const LETTER_Y: u8 = 2;
pub const LETTER_Z: u8 = 3;

const LETTER_CHARS: [char; 4] = ['I', 'X', 'Y', 'Z'];

/// Power of `i` attached to a product of Pauli words.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);

    pub fn from_power(k: u32) -> Self {
        Phase((k % 4) as u8)
    }

    pub fn power(self) -> u8 {
        self.0
    }

    pub fn mul(self, other: Phase) -> Phase {
        Phase((self.0 + other.0) % 4)
    }

    pub fn as_complex(self) -> Complex64 {
        match self.0 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }
}

/// A length-`n` word over `{I, X, Y, Z}`, packed two bits per site.
///
/// Site `i` occupies bits `2i..2i+2`; the all-identity word packs to zero, so
/// the packed value doubles as the canonical identity-first basis index.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PauliString {
    n: u8,
    word: u128,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        assert!(n <= MAX_SITES, "chain too long");
        PauliString { n: n as u8, word: 0 }
    }

    /// Word with `letter` at `site` and identities elsewhere.
    pub fn single(n: usize, site: usize, letter: u8) -> Self {
        let mut s = Self::identity(n);
        s.set_letter(site, letter);
        s
    }

    pub fn from_letters(letters: &[u8]) -> Self {
        let mut s = Self::identity(letters.len());
        for (i, &l) in letters.iter().enumerate() {
            s.set_letter(i, l);
        }
        s
    }

    /// Parses a word like `"ZZI"`; character 0 is site 0.
    pub fn parse(word: &str) -> Result<Self> {
        if word.len() > MAX_SITES {
            return Err(PauliError::TooLong(word.len()));
        }
        let mut s = Self::identity(word.len());
        for (i, c) in word.chars().enumerate() {
            let l = match c.to_ascii_uppercase() {
                'I' => LETTER_I,
                'X' => LETTER_X,
                'Y' => LETTER_Y,
                'Z' => LETTER_Z,
                _ => return Err(PauliError::BadWord(word.to_string())),
            };
            s.set_letter(i, l);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.n as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_identity(&self) -> bool {
        self.word == 0
    }

    pub fn letter(&self, site: usize) -> u8 {
        debug_assert!(site < self.len());
        ((self.word >> (2 * site)) & 3) as u8
    }

    pub fn set_letter(&mut self, site: usize, letter: u8) {
        debug_assert!(site < self.len());
        debug_assert!(letter < 4);
        self.word &= !(3u128 << (2 * site));
        self.word |= (letter as u128) << (2 * site);
    }

    /// Canonical index in the `4^n` basis (identity word is 0).
    pub fn index(&self) -> usize {
        debug_assert!(self.len() <= 31, "index only fits usize for short windows");
        self.word as usize
    }

    pub fn from_index(n: usize, index: usize) -> Self {
        debug_assert!(index < 1usize << (2 * n));
        PauliString { n: n as u8, word: index as u128 }
    }

    /// Number of non-identity sites.
    pub fn weight(&self) -> usize {
        let mut w = 0;
        for i in 0..self.len() {
            if self.letter(i) != LETTER_I {
                w += 1;
            }
        }
        w
    }

    /// Inclusive range of non-identity sites, if any.
    pub fn support(&self) -> Option<(usize, usize)> {
        let mut lo = None;
        let mut hi = None;
        for i in 0..self.len() {
            if self.letter(i) != LETTER_I {
                if lo.is_none() {
                    lo = Some(i);
                }
                hi = Some(i);
            }
        }
        lo.map(|l| (l, hi.unwrap()))
    }

    /// True when the words commute (even number of anticommuting sites).
    pub fn commutes_with(&self, other: &PauliString) -> bool {
        debug_assert_eq!(self.n, other.n);
        let mut anti = 0usize;
        for i in 0..self.len() {
            let (a, b) = (self.letter(i), other.letter(i));
            if a != LETTER_I && b != LETTER_I && a != b {
                anti += 1;
            }
        }
        anti % 2 == 0
    }

    /// Site-wise product `self · other`, as `(phase, word)` with `phase` a power of `i`.
    pub fn mul(&self, other: &PauliString) -> Result<(Phase, PauliString)> {
        if self.n != other.n {
            return Err(PauliError::SizeMismatch(self.len(), other.len()));
        }
        let mut power = 0u32;
        for i in 0..self.len() {
            let (a, b) = (self.letter(i), other.letter(i));
            if a != LETTER_I && b != LETTER_I && a != b {
                // XY=iZ, YZ=iX, ZX=iY and the reversed orders pick up -i.
                let pos = matches!((a, b), (1, 2) | (2, 3) | (3, 1));
                power += if pos { 1 } else { 3 };
            }
        }
        let word = PauliString { n: self.n, word: self.word ^ other.word };
        Ok((Phase::from_power(power), word))
    }

    /// Identity-pads into an `n`-site window at `offset`; cyclic wrap when `periodic`.
    pub fn embed(&self, n: usize, offset: usize, periodic: bool) -> Result<PauliString> {
        if n > MAX_SITES {
            return Err(PauliError::TooLong(n));
        }
        if !periodic && offset + self.len() > n {
            return Err(PauliError::EmbedOutOfRange { len: self.len(), offset, window: n });
        }
        let mut out = PauliString::identity(n);
        for i in 0..self.len() {
            let l = self.letter(i);
            if l != LETTER_I {
                out.set_letter((offset + i) % n, l);
            }
        }
        Ok(out)
    }

    /// X/Z bit masks and the Y count, for dense-matrix and state application.
    ///
    /// The word equals `i^{ny} · Π_j X^{x_j} Z^{z_j}` (per site, X before Z).
    pub fn xz_masks(&self) -> (u64, u64, u32) {
        let mut x = 0u64;
        let mut z = 0u64;
        let mut ny = 0u32;
        for i in 0..self.len() {
            match self.letter(i) {
                LETTER_X => x |= 1 << i,
                LETTER_Z => z |= 1 << i,
                LETTER_Y => {
                    x |= 1 << i;
                    z |= 1 << i;
                    ny += 1;
                }
                _ => {}
            }
        }
        (x, z, ny)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            write!(f, "{}", LETTER_CHARS[self.letter(i) as usize])?;
        }
        Ok(())
    }
}

impl fmt::Debug for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PauliString({})", self)
    }
}

/// One scaled Pauli word.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliTerm {
    pub coeff: Complex64,
    pub string: PauliString,
}

/// A sparse operator: map from Pauli words to complex coefficients.
///
/// Zero coefficients are never stored. Hermitian iff all coefficients real.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PauliSum {
    n: usize,
    terms: BTreeMap<PauliString, Complex64>,
}

const DROP_TOL: f64 = 0.0;

impl PauliSum {
    pub fn new(n: usize) -> Self {
        PauliSum { n, terms: BTreeMap::new() }
    }

    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (PauliString, Complex64)>) -> Result<Self> {
        let mut s = PauliSum::new(n);
        for (p, c) in terms {
            if p.len() != n {
                return Err(PauliError::SizeMismatch(p.len(), n));
            }
            s.add(p, c);
        }
        Ok(s)
    }

    /// Single-word operator `coeff * string`.
    pub fn term(string: PauliString, coeff: Complex64) -> Self {
        let mut s = PauliSum::new(string.len());
        s.add(string, coeff);
        s
    }

    pub fn window(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, &Complex64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, p: &PauliString) -> Complex64 {
        self.terms.get(p).copied().unwrap_or_default()
    }

    /// Accumulates `coeff * string`, dropping the entry if it cancels.
    pub fn add(&mut self, string: PauliString, coeff: Complex64) {
        debug_assert_eq!(string.len(), self.n);
        if coeff == Complex64::default() {
            return;
        }
        let e = self.terms.entry(string).or_insert(Complex64::default());
        *e += coeff;
        if e.norm_sqr() <= DROP_TOL {
            self.terms.remove(&string);
        }
    }

    pub fn add_sum(&mut self, other: &PauliSum, scale: Complex64) {
        debug_assert_eq!(self.n, other.n);
        for (p, c) in other.terms() {
            self.add(*p, *c * scale);
        }
    }

    pub fn scaled(&self, scale: Complex64) -> PauliSum {
        let mut out = PauliSum::new(self.n);
        for (p, c) in self.terms() {
            out.add(*p, *c * scale);
        }
        out
    }

    /// Removes entries with `|coeff| <= tol`.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| c.norm() > tol);
    }

    /// Normalized trace: the coefficient of the identity word.
    pub fn ntr(&self) -> Complex64 {
        self.coeff(&PauliString::identity(self.n))
    }

    pub fn adjoint(&self) -> PauliSum {
        let mut out = PauliSum::new(self.n);
        for (p, c) in self.terms() {
            out.add(*p, c.conj());
        }
        out
    }

    pub fn max_imag(&self) -> f64 {
        self.terms.values().map(|c| c.im.abs()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_imag() <= tol
    }

    /// Sum of coefficient magnitudes; an upper bound on the spectral norm.
    pub fn coeff_l1(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    /// Operator product `self · other`.
    pub fn mul(&self, other: &PauliSum) -> Result<PauliSum> {
        if self.n != other.n {
            return Err(PauliError::SizeMismatch(self.n, other.n));
        }
        let mut out = PauliSum::new(self.n);
        for (pa, ca) in self.terms() {
            for (pb, cb) in other.terms() {
                let (phase, s) = pa.mul(pb)?;
                out.add(s, ca * cb * phase.as_complex());
            }
        }
        Ok(out)
    }

    /// Identity-pads every term into an `n`-site window at `offset`.
    pub fn embed(&self, n: usize, offset: usize, periodic: bool) -> Result<PauliSum> {
        let mut out = PauliSum::new(n);
        for (p, c) in self.terms() {
            out.add(p.embed(n, offset, periodic)?, *c);
        }
        Ok(out)
    }

    /// Dense `2^n x 2^n` matrix. Guarded by `cap` (see [`DENSE_CAP`]).
    pub fn to_dense_capped(&self, cap: usize) -> Result<Array2<Complex64>> {
        if self.n > cap {
            return Err(PauliError::DenseCapExceeded(self.n, cap));
        }
        let dim = 1usize << self.n;
        let mut m = Array2::<Complex64>::zeros((dim, dim));
        for (p, c) in self.terms() {
            let (x, z, ny) = p.xz_masks();
            // i^{ny} sits in front; sigma_y = i * sigma_x * sigma_z per site.
            let front = Phase::from_power(ny).as_complex() * c;
            for b in 0..dim {
                let sign = if ((b as u64) & z).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                m[[b ^ (x as usize), b]] += front * sign;
            }
        }
        Ok(m)
    }

    pub fn to_dense(&self) -> Result<Array2<Complex64>> {
        self.to_dense_capped(DENSE_CAP)
    }
}

/// Commutator `[a, b] = ab - ba`. Anti-Hermitian (imaginary coefficients)
/// when both inputs are Hermitian.
pub fn commutator(a: &PauliSum, b: &PauliSum) -> Result<PauliSum> {
    if a.window() != b.window() {
        return Err(PauliError::SizeMismatch(a.window(), b.window()));
    }
    let mut out = PauliSum::new(a.window());
    for (pa, ca) in a.terms() {
        for (pb, cb) in b.terms() {
            if pa.commutes_with(pb) {
                continue;
            }
            // For anticommuting words ab = phase * s and ba = -phase * s.
            let (phase, s) = pa.mul(pb).expect("equal lengths");
            out.add(s, 2.0 * ca * cb * phase.as_complex());
        }
    }
    Ok(out)
}

/// Hilbert–Schmidt inner product `ntr(a† b)`; Pauli words are orthonormal.
pub fn hs_inner(a: &PauliSum, b: &PauliSum) -> Result<Complex64> {
    if a.window() != b.window() {
        return Err(PauliError::SizeMismatch(a.window(), b.window()));
    }
    let (small, large, conj_small) = if a.len() <= b.len() { (a, b, true) } else { (b, a, false) };
    let mut acc = Complex64::default();
    for (p, c) in small.terms() {
        let other = large.coeff(p);
        acc += if conj_small { c.conj() * other } else { other.conj() * c };
    }
    Ok(acc)
}

/// `ntr(a† a)`, the squared HS norm.
pub fn hs_norm_sq(a: &PauliSum) -> f64 {
    a.terms().map(|(_, c)| c.norm_sqr()).sum()
}

pub fn hs_norm(a: &PauliSum) -> f64 {
    hs_norm_sq(a).sqrt()
}

/// Real coefficient vector over the full `4^n` Pauli basis of an `n`-site window.
///
/// Real coefficients make the represented operator Hermitian; the squared
/// Euclidean norm equals `ntr(O^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorVector {
    n: usize,
    coeffs: Vec<f64>,
}

impl OperatorVector {
    pub fn zeros(n: usize) -> Self {
        assert!(n <= VECTOR_CAP + 4, "operator vector window too large");
        OperatorVector { n, coeffs: vec![0.0; 1 << (2 * n)] }
    }

    pub fn from_coeffs(n: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), 1 << (2 * n));
        OperatorVector { n, coeffs }
    }

    pub fn window(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, p: &PauliString) -> f64 {
        self.coeffs[p.index()]
    }

    pub fn set(&mut self, p: &PauliString, v: f64) {
        self.coeffs[p.index()] = v;
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for c in &mut self.coeffs {
                *c /= n;
            }
        }
    }

    pub fn from_pauli_sum(s: &PauliSum, tol: f64) -> Result<Self> {
        let imag = s.max_imag();
        if imag > tol {
            return Err(PauliError::NotHermitian(imag));
        }
        let mut v = OperatorVector::zeros(s.window());
        for (p, c) in s.terms() {
            v.coeffs[p.index()] = c.re;
        }
        Ok(v)
    }

    pub fn to_pauli_sum(&self, drop_tol: f64) -> PauliSum {
        let mut s = PauliSum::new(self.n);
        for (idx, &c) in self.coeffs.iter().enumerate() {
            if c.abs() > drop_tol {
                s.add(PauliString::from_index(self.n, idx), Complex64::new(c, 0.0));
            }
        }
        s
    }
}

/// Textual fixture format: one `<coeff> <word>` term per line.
///
/// Coefficients are `<real>` or `<real>+<imag>i` / `<real>-<imag>i`,
/// e.g. `-1.0 ZZI` or `0.5+0.25i XYZ`. Blank lines and `#` comments skipped.
pub mod text {
    use super::*;

    fn parse_coeff(tok: &str) -> Option<Complex64> {
        if let Ok(re) = tok.parse::<f64>() {
            return Some(Complex64::new(re, 0.0));
        }
        let tok = tok.strip_suffix('i')?;
        // Split at the sign of the imaginary part (skipping a leading sign
        // and signs inside exponents).
        let bytes = tok.as_bytes();
        for k in (1..bytes.len()).rev() {
            let c = bytes[k] as char;
            if (c == '+' || c == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
                let re: f64 = tok[..k].parse().ok()?;
                let im: f64 = match &tok[k..] {
                    "+" => 1.0,
                    "-" => -1.0,
                    s => s.parse().ok()?,
                };
                return Some(Complex64::new(re, im));
            }
        }
        // Pure imaginary like `2i` or `-1.5i`.
        let im: f64 = match tok {
            "" | "+" => 1.0,
            "-" => -1.0,
            s => s.parse().ok()?,
        };
        Some(Complex64::new(0.0, im))
    }

    pub fn parse(input: &str) -> Result<PauliSum> {
        let mut terms: Vec<PauliTerm> = Vec::new();
        for line in input.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (coeff_tok, word_tok) = match (it.next(), it.next(), it.next()) {
                (Some(c), Some(w), None) => (c, w),
                _ => return Err(PauliError::BadTermLine(line.to_string())),
            };
            let coeff = parse_coeff(coeff_tok).ok_or_else(|| PauliError::BadTermLine(line.to_string()))?;
            let string = PauliString::parse(word_tok)?;
            terms.push(PauliTerm { coeff, string });
        }
        let n = terms.first().map(|t| t.string.len()).unwrap_or(0);
        PauliSum::from_terms(n, terms.into_iter().map(|t| (t.string, t.coeff)))
    }

    pub fn format(s: &PauliSum) -> String {
        let mut out = String::new();
        for (p, c) in s.terms() {
            if c.im.abs() > 0.0 {
                out.push_str(&format!("{:.17e}{:+.17e}i {}\n", c.re, c.im, p));
            } else {
                out.push_str(&format!("{:.17e} {}\n", c.re, p));
            }
        }
        out
    }
}
