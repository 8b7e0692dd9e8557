//! Operator-valued matrix product states over the Pauli physical index:
//! canonical forms, truncation, conversions, overlaps, and operator
//! entanglement-entropy profiles.
//!
//! Site tensors are real 3-index arrays `(left bond, physical, right bond)`.
//! The physical dimension is 4 everywhere except at site 0 of a
//! translation-invariant cell, where the first-site gauge restricts the basis
//! to `{X, Y, Z}` and the dimension is structurally 3. Real tensors keep the
//! represented operator Hermitian.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::pauli::{OperatorVector, PauliSum, PauliString};

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("window size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("gauge mismatch between operands")]
    GaugeMismatch,
    #[error("entropy profile needs a normalized MPS (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("operator is not Hermitian enough for a real MPS (max imag {0:.3e})")]
    NotHermitian(f64),
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] linalg::LinalgError),
    #[error("malformed MPS dump: {0}")]
    BadDump(String),
}

pub type Result<T> = std::result::Result<T, MpsError>;

/// Gauge of the first site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// Full `{I, X, Y, Z}` basis at every site.
    Local,
    /// `{X, Y, Z}` at site 0 (translation-invariant cell gauge).
    TiFirstSite,
}

/// Relative floor under which singular values are discarded regardless of
/// the bond-dimension cap.
pub const SV_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct OperatorMps {
    tensors: Vec<Array3<f64>>,
    gauge: Gauge,
}

/// Operator entanglement entropy (nats) per bipartition, with its bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyProfile {
    /// Cut positions 1..N-1; cut `i` splits sites `0..i` от `i..N`.
    pub cuts: Vec<usize>,
    pub entropy: Vec<f64>,
    /// `log min(4^i, 4^{N-i})` per cut.
    pub max_bound: Vec<f64>,
    /// `log D` for the profile's maximum bond dimension.
    pub log_d: f64,
}

fn phys_dim(gauge: Gauge, site: usize) -> usize {
    if site == 0 && gauge == Gauge::TiFirstSite {
        3
    } else {
        4
    }
}

/// Splits `mat` by SVD, keeping at most `d_max` singular values and dropping
/// those below `SV_FLOOR * s_max`. Returns `(U, S·Vt, discarded weight)`.
fn split_truncated(mat: &Array2<f64>, d_max: usize) -> Result<(Array2<f64>, Array2<f64>, f64)> {
    let (u, s, vt) = linalg::svd(mat)?;
    let smax = s.iter().cloned().fold(0.0f64, f64::max);
    let mut keep = 0;
    for &sv in s.iter() {
        if keep < d_max && sv > SV_FLOOR * smax {
            keep += 1;
        }
    }
    let keep = keep.max(1);
    let discarded: f64 = s.iter().skip(keep).map(|x| x * x).sum();
    let u_k = u.slice(ndarray::s![.., ..keep]).to_owned();
    let mut sv_k = vt.slice(ndarray::s![..keep, ..]).to_owned();
    for (mut row, &sv) in sv_k.axis_iter_mut(Axis(0)).zip(s.iter()) {
        row.mapv_inplace(|x| x * sv);
    }
    Ok((u_k, sv_k, discarded))
}

impl OperatorMps {
    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn tensor(&self, i: usize) -> &Array3<f64> {
        &self.tensors[i]
    }

    pub(crate) fn set_tensor(&mut self, i: usize, t: Array3<f64>) {
        self.tensors[i] = t;
    }

    pub fn phys_dim(&self, site: usize) -> usize {
        phys_dim(self.gauge, site)
    }

    /// Bond dimensions, boundaries included (length `n + 1`).
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.tensors[0].shape()[0]];
        for t in &self.tensors {
            dims.push(t.shape()[2]);
        }
        dims
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Product-string MPS (all bond dimensions 1).
    pub fn product_string(p: &PauliString, coeff: f64) -> Self {
        let n = p.len();
        let mut tensors = Vec::with_capacity(n);
        for i in 0..n {
            let mut t = Array3::<f64>::zeros((1, 4, 1));
            t[[0, p.letter(i) as usize, 0]] = if i == 0 { coeff } else { 1.0 };
            tensors.push(t);
        }
        OperatorMps { tensors, gauge: Gauge::Local }
    }

    /// Exact MPS of a dense coefficient vector by successive factorization;
    /// exact when `d_max >= 4^(N/2)`.
    pub fn from_vector(v: &OperatorVector, d_max: usize) -> Result<Self> {
        let n = v.window();
        assert!(n >= 1);
        // Reorder from the little-endian coefficient index (site 0 fastest)
        // to standard layout with axis i = site i (site N-1 fastest).
        let mut data = vec![0.0f64; v.coeffs().len()];
        for (le_idx, &c) in v.coeffs().iter().enumerate() {
            if c != 0.0 {
                let mut std_idx = 0usize;
                for site in 0..n {
                    let digit = (le_idx >> (2 * site)) & 3;
                    std_idx = std_idx * 4 + digit;
                }
                data[std_idx] = c;
            }
        }
        Self::from_std_major_data(data, n, 4, Gauge::Local, d_max)
    }

    /// Exact MPS of a gauged TI cell vector (first-site physical dimension 3).
    pub fn from_cell_vector(cell: &[f64], n: usize, d_max: usize) -> Result<Self> {
        assert_eq!(cell.len(), 3 << (2 * (n - 1)));
        let mut data = vec![0.0f64; cell.len()];
        for (idx, &c) in cell.iter().enumerate() {
            if c != 0.0 {
                let first = idx % 3; // letter - 1
                let rest = idx / 3; // little-endian digits of sites 1..N-1
                let mut std_idx = first;
                for site in 1..n {
                    let digit = (rest >> (2 * (site - 1))) & 3;
                    std_idx = std_idx * 4 + digit;
                }
                data[std_idx] = c;
            }
        }
        Self::from_std_major_data(data, n, 3, Gauge::TiFirstSite, d_max)
    }

    /// Common SVD-factorization path. `data` is in standard layout with
    /// axis i = site i (last axis fastest) and a first axis of `p0`.
    fn from_std_major_data(data: Vec<f64>, n: usize, p0: usize, gauge: Gauge, d_max: usize) -> Result<Self> {
        let total = data.len();
        let mut tensors = Vec::with_capacity(n);
        let mut rest = Array2::from_shape_vec((1, total), data).expect("shape");
        let mut right_dim = total;
        for site in 0..n {
            let p = if site == 0 { p0 } else { 4 };
            right_dim /= p;
            let dl = rest.shape()[0];
            let mat = rest.into_shape((dl * p, right_dim)).expect("reshape");
            if site + 1 == n {
                debug_assert_eq!(right_dim, 1);
                tensors.push(mat.into_shape((dl, p, 1)).expect("tensor"));
                rest = Array2::zeros((1, 1));
            } else {
                let (u, svt, _disc) = split_truncated(&mat, d_max)?;
                let keep = u.shape()[1];
                tensors.push(u.into_shape((dl, p, keep)).expect("tensor"));
                rest = svt;
            }
        }
        Ok(OperatorMps { tensors, gauge })
    }

    /// Exact MPS of a sparse Pauli sum, built as a sum of product strings and
    /// recompressed. Requires real coefficients.
    pub fn from_pauli_sum(s: &PauliSum, d_max: usize) -> Result<Self> {
        let imag = s.max_imag();
        if imag > 1e-12 {
            return Err(MpsError::NotHermitian(imag));
        }
        let n = s.window();
        let terms: Vec<(PauliString, f64)> = s.terms().map(|(p, c)| (*p, c.re)).collect();
        if terms.is_empty() {
            let mut out = Self::product_string(&PauliString::identity(n), 0.0);
            out.tensors[0].fill(0.0);
            return Ok(out);
        }
        let t = terms.len();
        let mut tensors = Vec::with_capacity(n);
        for site in 0..n {
            let (dl, dr) = (
                if site == 0 { 1 } else { t },
                if site + 1 == n { 1 } else { t },
            );
            let mut a = Array3::<f64>::zeros((dl, 4, dr));
            for (k, (p, c)) in terms.iter().enumerate() {
                let l = p.letter(site) as usize;
                let (i, j) = (if site == 0 { 0 } else { k }, if site + 1 == n { 0 } else { k });
                let val = if site == 0 { *c } else { 1.0 };
                if site == 0 || dl == 1 {
                    a[[i, l, j]] += val;
                } else {
                    a[[i, l, j]] = val;
                }
            }
            tensors.push(a);
        }
        let mps = OperatorMps { tensors, gauge: Gauge::Local };
        let (out, _disc) = mps.truncate(d_max.max(1), SV_FLOOR)?;
        Ok(out)
    }

    /// Dense coefficient vector (little-endian site index). The TI gauge is
    /// promoted into the full basis with zeros on identity-first words.
    pub fn to_vector(&self) -> OperatorVector {
        let n = self.n_sites();
        let mut out = OperatorVector::zeros(n);
        // Contract left to right into (configurations x right bond).
        let mut amp: Vec<(usize, Vec<f64>)> = vec![(0usize, {
            let mut v = vec![0.0; self.tensors[0].shape()[0]];
            v[0] = 1.0;
            v
        })];
        for (site, t) in self.tensors.iter().enumerate() {
            let (dl, p, dr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let mut next = Vec::with_capacity(amp.len() * p);
            for (idx, left) in &amp {
                for k in 0..p {
                    let mut v = vec![0.0; dr];
                    for a in 0..dl {
                        let la = left[a];
                        if la != 0.0 {
                            for b in 0..dr {
                                v[b] += la * t[[a, k, b]];
                            }
                        }
                    }
                    let letter = if site == 0 && self.gauge == Gauge::TiFirstSite { k + 1 } else { k };
                    next.push((idx + (letter << (2 * site)), v));
                }
            }
            amp = next;
        }
        for (idx, v) in amp {
            out.coeffs_mut()[idx] = v[0];
        }
        out
    }

    pub fn to_pauli_sum(&self, drop_tol: f64) -> PauliSum {
        self.to_vector().to_pauli_sum(drop_tol)
    }

    /// Left-orthogonalizes site `i`, pushing the R factor into site `i+1`.
    pub(crate) fn push_right(&mut self, i: usize) -> Result<()> {
        let t = &self.tensors[i];
        let (dl, p, dr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mat = t.clone().into_shape((dl * p, dr)).expect("reshape");
        let (u, svt, _d) = split_truncated(&mat, usize::MAX)?;
        let keep = u.shape()[1];
        self.tensors[i] = u.into_shape((dl, p, keep)).expect("tensor");
        let next = &self.tensors[i + 1];
        let (nl, np, nr) = (next.shape()[0], next.shape()[1], next.shape()[2]);
        debug_assert_eq!(nl, dr);
        let nm = next.clone().into_shape((nl, np * nr)).expect("reshape");
        let merged = svt.dot(&nm);
        self.tensors[i + 1] = merged.into_shape((keep, np, nr)).expect("tensor");
        Ok(())
    }

    /// Right-orthogonalizes site `i`, pushing the L factor into site `i-1`.
    pub(crate) fn push_left(&mut self, i: usize) -> Result<()> {
        let t = &self.tensors[i];
        let (dl, p, dr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mat = t.clone().into_shape((dl, p * dr)).expect("reshape");
        // A = U S Vt => B-tensor Vt, factor U S pushed left.
        let (u, s, vt) = linalg::svd(&mat)?;
        let smax = s.iter().cloned().fold(0.0f64, f64::max);
        let keep = s.iter().filter(|&&x| x > SV_FLOOR * smax).count().max(1);
        let vt_k = vt.slice(ndarray::s![..keep, ..]).to_owned();
        self.tensors[i] = vt_k.into_shape((keep, p, dr)).expect("tensor");
        let mut us = u.slice(ndarray::s![.., ..keep]).to_owned();
        for (mut col, &sv) in us.axis_iter_mut(Axis(1)).zip(s.iter()) {
            col.mapv_inplace(|x| x * sv);
        }
        let prev = &self.tensors[i - 1];
        let (pl, pp, pr) = (prev.shape()[0], prev.shape()[1], prev.shape()[2]);
        debug_assert_eq!(pr, dl);
        let pm = prev.clone().into_shape((pl * pp, pr)).expect("reshape");
        let merged = pm.dot(&us);
        self.tensors[i - 1] = merged.into_shape((pl, pp, keep)).expect("tensor");
        Ok(())
    }

    /// Mixed-canonical form with the orthogonality center at `center`:
    /// left-orthogonal tensors before it, right-orthogonal after it. The
    /// ntr-norm is then readable off the center tensor.
    pub fn canonicalize(&self, center: usize) -> Result<Self> {
        let mut m = self.clone();
        let n = m.n_sites();
        assert!(center < n);
        for i in 0..center {
            m.push_right(i)?;
        }
        for i in (center + 1..n).rev() {
            m.push_left(i)?;
        }
        Ok(m)
    }

    /// `sqrt(ntr(O^2))` via a full transfer contraction (no canonical form assumed).
    pub fn norm(&self) -> f64 {
        overlap_raw(self, self).max(0.0).sqrt()
    }

    /// Canonicalizes at `center` and rescales to unit ntr-norm.
    pub fn normalized(&self, center: usize) -> Result<Self> {
        let mut m = self.canonicalize(center)?;
        let nrm = m.tensors[center].iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 0.0 {
            m.tensors[center].mapv_inplace(|x| x / nrm);
        }
        Ok(m)
    }

    /// Truncates every bond to `d_max` (and the `rel_floor * s_max` cutoff),
    /// returning the total discarded Schmidt weight relative to the input.
    pub fn truncate(&self, d_max: usize, rel_floor: f64) -> Result<(Self, f64)> {
        let mut m = self.canonicalize(self.n_sites() - 1)?.clone();
        // Sweep right-to-left with SVD truncation; the center sits at the
        // right so each cut sees exact Schmidt values of the current state.
        let mut discarded = 0.0;
        for i in (1..m.n_sites()).rev() {
            let t = &m.tensors[i];
            let (dl, p, dr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let mat = t.clone().into_shape((dl, p * dr)).expect("reshape");
            let (u, s, vt) = linalg::svd(&mat)?;
            let smax = s.iter().cloned().fold(0.0f64, f64::max);
            let mut keep = 0;
            for &sv in s.iter() {
                if keep < d_max && sv > rel_floor * smax {
                    keep += 1;
                }
            }
            let keep = keep.max(1);
            discarded += s.iter().skip(keep).map(|x| x * x).sum::<f64>();
            let vt_k = vt.slice(ndarray::s![..keep, ..]).to_owned();
            m.tensors[i] = vt_k.into_shape((keep, p, dr)).expect("tensor");
            let mut us = u.slice(ndarray::s![.., ..keep]).to_owned();
            for (mut col, &sv) in us.axis_iter_mut(Axis(1)).zip(s.iter()) {
                col.mapv_inplace(|x| x * sv);
            }
            let prev = &m.tensors[i - 1];
            let (pl, pp, pr) = (prev.shape()[0], prev.shape()[1], prev.shape()[2]);
            debug_assert_eq!(pr, dl);
            let pm = prev.clone().into_shape((pl * pp, pr)).expect("reshape");
            m.tensors[i - 1] = pm.dot(&us).into_shape((pl, pp, keep)).expect("tensor");
        }
        Ok((m, discarded))
    }

    /// Entanglement entropy (nats) from the Schmidt spectrum at every cut.
    pub fn entropy_profile(&self) -> Result<EntropyProfile> {
        let n = self.n_sites();
        let norm2 = overlap_raw(self, self);
        if (norm2 - 1.0).abs() > 1e-8 {
            return Err(MpsError::NotNormalized(norm2));
        }
        let mut m = self.canonicalize(0)?;
        let mut cuts = Vec::new();
        let mut entropy = Vec::new();
        let mut max_bound = Vec::new();
        let ln4 = 4.0f64.ln();
        for i in 0..n - 1 {
            let t = &m.tensors[i];
            let (dl, p, dr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let mat = t.clone().into_shape((dl * p, dr)).expect("reshape");
            let (u, s, vt) = linalg::svd(&mat)?;
            let total: f64 = s.iter().map(|x| x * x).sum();
            let mut ent = 0.0;
            for &sv in s.iter() {
                let w = sv * sv / total;
                if w > 1e-300 {
                    ent -= w * w.ln();
                }
            }
            cuts.push(i + 1);
            entropy.push(ent);
            max_bound.push(ln4 * ((i + 1).min(n - i - 1) as f64));
            // Move the center one step right.
            let keep = s.len();
            m.tensors[i] = u.into_shape((dl, p, keep)).expect("tensor");
            let mut svt = vt;
            for (mut row, &sv) in svt.axis_iter_mut(Axis(0)).zip(s.iter()) {
                row.mapv_inplace(|x| x * sv);
            }
            let next = &m.tensors[i + 1];
            let (nl, np, nr) = (next.shape()[0], next.shape()[1], next.shape()[2]);
            let nm = next.clone().into_shape((nl, np * nr)).expect("reshape");
            m.tensors[i + 1] = svt.dot(&nm).into_shape((keep, np, nr)).expect("tensor");
        }
        let log_d = (self.max_bond_dim() as f64).ln();
        Ok(EntropyProfile { cuts, entropy, max_bound, log_d })
    }

    /// Promotes a TI-gauge MPS to the full 4-letter basis by zero-padding the
    /// identity slot of the first site.
    pub fn promoted(&self) -> Self {
        if self.gauge == Gauge::Local {
            return self.clone();
        }
        let mut tensors = self.tensors.clone();
        let t0 = &self.tensors[0];
        let (dl, _p, dr) = (t0.shape()[0], t0.shape()[1], t0.shape()[2]);
        let mut new0 = Array3::<f64>::zeros((dl, 4, dr));
        for a in 0..dl {
            for k in 0..3 {
                for b in 0..dr {
                    new0[[a, k + 1, b]] = t0[[a, k, b]];
                }
            }
        }
        tensors[0] = new0;
        OperatorMps { tensors, gauge: Gauge::Local }
    }

    /// Identity-pads into a larger window: `offset` identity sites on the
    /// left, the rest on the right. TI gauges are promoted first.
    pub fn padded(&self, window: usize, offset: usize) -> Self {
        let src = self.promoted();
        let n = src.n_sites();
        assert!(offset + n <= window);
        let mut id_site = Array3::<f64>::zeros((1, 4, 1));
        id_site[[0, 0, 0]] = 1.0;
        let mut tensors = Vec::with_capacity(window);
        for _ in 0..offset {
            tensors.push(id_site.clone());
        }
        tensors.extend(src.tensors.iter().cloned());
        for _ in offset + n..window {
            tensors.push(id_site.clone());
        }
        OperatorMps { tensors, gauge: Gauge::Local }
    }

    /// Random MPS with bond dimensions capped at `d`, canonicalized at site 0
    /// and normalized.
    pub fn random(n: usize, d: usize, gauge: Gauge, rng: &mut ChaCha20Rng) -> Result<Self> {
        let mut dims = vec![1usize; n + 1];
        let mut left = 1usize;
        for i in 0..n {
            left = (left * phys_dim(gauge, i)).min(d);
            dims[i + 1] = left;
        }
        let mut right = 1usize;
        for i in (0..n).rev() {
            right = (right * phys_dim(gauge, i)).min(d);
            dims[i] = dims[i].min(right);
        }
        dims[0] = 1;
        dims[n] = 1;
        let mut tensors = Vec::with_capacity(n);
        for i in 0..n {
            let p = phys_dim(gauge, i);
            let mut t = Array3::<f64>::zeros((dims[i], p, dims[i + 1]));
            for x in t.iter_mut() {
                *x = rng.gen::<f64>() * 2.0 - 1.0;
            }
            tensors.push(t);
        }
        OperatorMps { tensors, gauge }.normalized(0)
    }

    /// Portable JSON dump: shapes plus row-major tensor data per site.
    pub fn to_json(&self) -> serde_json::Value {
        let sites: Vec<serde_json::Value> = self
            .tensors
            .iter()
            .map(|t| {
                serde_json::json!({
                    "shape": t.shape().to_vec(),
                    "data": t.iter().cloned().collect::<Vec<f64>>(),
                })
            })
            .collect();
        serde_json::json!({ "gauge": self.gauge, "n_sites": self.n_sites(), "sites": sites })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let gauge: Gauge = serde_json::from_value(v["gauge"].clone())
            .map_err(|e| MpsError::BadDump(e.to_string()))?;
        let sites = v["sites"].as_array().ok_or_else(|| MpsError::BadDump("missing sites".into()))?;
        let mut tensors = Vec::with_capacity(sites.len());
        for s in sites {
            let shape: Vec<usize> = serde_json::from_value(s["shape"].clone())
                .map_err(|e| MpsError::BadDump(e.to_string()))?;
            let data: Vec<f64> = serde_json::from_value(s["data"].clone())
                .map_err(|e| MpsError::BadDump(e.to_string()))?;
            if shape.len() != 3 || shape.iter().product::<usize>() != data.len() {
                return Err(MpsError::BadDump("shape/data mismatch".into()));
            }
            tensors.push(
                Array3::from_shape_vec((shape[0], shape[1], shape[2]), data)
                    .map_err(|e| MpsError::BadDump(e.to_string()))?,
            );
        }
        if tensors.is_empty() {
            return Err(MpsError::BadDump("empty MPS".into()));
        }
        Ok(OperatorMps { tensors, gauge })
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors[0].mapv_inplace(|x| x * factor);
    }
}

fn transfer_step(e: &Array2<f64>, a: &Array3<f64>, b: &Array3<f64>) -> Array2<f64> {
    // e'(a', b') = sum_{a,b,k} A[a,k,a'] e[a,b] B[b,k,b']
    let (al, p, ar) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bl, bp, br) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    debug_assert_eq!(p, bp);
    let mut out = Array2::<f64>::zeros((ar, br));
    // tmp[k](a', b) = sum_a A[a,k,a'] e[a,b]
    for k in 0..p {
        let ak: ArrayView2<f64> = a.index_axis(Axis(1), k);
        let bk: ArrayView2<f64> = b.index_axis(Axis(1), k);
        let tmp = ak.t().dot(e); // (ar, bl)
        out = out + tmp.dot(&bk); // (ar, br)
    }
    let _ = (al, bl);
    out
}

fn overlap_raw(a: &OperatorMps, b: &OperatorMps) -> f64 {
    let mut e = Array2::<f64>::ones((1, 1));
    for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
        e = transfer_step(&e, ta, tb);
    }
    e[[0, 0]]
}

/// `ntr(A B)` of the represented operators via transfer-matrix contraction.
/// TI first-site gauges are promoted so mixed overlaps are well-defined.
pub fn overlap_mps(a: &OperatorMps, b: &OperatorMps) -> Result<f64> {
    if a.n_sites() != b.n_sites() {
        return Err(MpsError::SizeMismatch(a.n_sites(), b.n_sites()));
    }
    match (a.gauge, b.gauge) {
        (Gauge::Local, Gauge::Local) => Ok(overlap_raw(a, b)),
        (Gauge::TiFirstSite, Gauge::TiFirstSite) => Ok(overlap_raw(a, b)),
        _ => Ok(overlap_raw(&a.promoted(), &b.promoted())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{hs_inner, text};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};

    fn vector_of(src: &str) -> OperatorVector {
        OperatorVector::from_pauli_sum(&text::parse(src).unwrap(), 1e-12).unwrap()
    }

    #[test]
    fn product_string_has_unit_bonds() {
        let v = vector_of("1.0 XZY\n");
        let m = OperatorMps::from_vector(&v, 64).unwrap();
        assert_eq!(m.bond_dims(), vec![1, 1, 1, 1]);
        let back = m.to_vector();
        assert_abs_diff_eq!(back.get(&PauliString::parse("XZY").unwrap()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_site_schmidt_pair() {
        let inv = 0.5f64.sqrt();
        let v = vector_of(&format!("{inv} XX\n{inv} ZZ\n"));
        let m = OperatorMps::from_vector(&v, 64).unwrap();
        assert_eq!(m.bond_dims(), vec![1, 2, 1]);
        let prof = m.entropy_profile().unwrap();
        assert_abs_diff_eq!(prof.entropy[0], 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn round_trip_full_rank() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = 4;
        let mut v = OperatorVector::zeros(n);
        for c in v.coeffs_mut() {
            *c = rng.gen::<f64>() - 0.5;
        }
        let m = OperatorMps::from_vector(&v, 1 << n).unwrap();
        let back = m.to_vector();
        for (a, b) in v.coeffs().iter().zip(back.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn canonicalize_preserves_operator_and_is_idempotent() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let m = OperatorMps::random(4, 6, Gauge::Local, &mut rng).unwrap();
        let c = m.canonicalize(2).unwrap();
        let va = m.to_vector();
        let vb = c.to_vector();
        for (a, b) in va.coeffs().iter().zip(vb.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
        let cc = c.canonicalize(2).unwrap();
        let vc = cc.to_vector();
        for (a, b) in vb.coeffs().iter().zip(vc.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
        // Norm readable at the center after normalization.
        let nm = m.normalized(2).unwrap();
        assert_abs_diff_eq!(nm.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlap_matches_dense_inner() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..4 {
            let a = OperatorMps::random(4, 5, Gauge::Local, &mut rng).unwrap();
            let b = OperatorMps::random(4, 5, Gauge::Local, &mut rng).unwrap();
            let ov = overlap_mps(&a, &b).unwrap();
            let sa = a.to_pauli_sum(0.0);
            let sb = b.to_pauli_sum(0.0);
            let dense = hs_inner(&sa, &sb).unwrap().re;
            assert_abs_diff_eq!(ov, dense, epsilon = 1e-11);
        }
    }

    #[test]
    fn orthogonal_product_strings_overlap_zero() {
        let a = OperatorMps::product_string(&PauliString::parse("XZ").unwrap(), 1.0);
        let b = OperatorMps::product_string(&PauliString::parse("XY").unwrap(), 1.0);
        assert_abs_diff_eq!(overlap_mps(&a, &b).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(overlap_mps(&a, &a).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn truncation_error_equals_discarded_weight() {
        // Rank structure chosen so only the middle bond truncates.
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let n = 4;
        let mut v = OperatorVector::zeros(n);
        for c in v.coeffs_mut() {
            *c = rng.gen::<f64>() - 0.5;
        }
        v.normalize();
        let full = OperatorMps::from_vector(&v, 256).unwrap();
        let (trunc, discarded) = full.truncate(8, 0.0).unwrap();
        let tv = trunc.to_vector();
        let err: f64 = v
            .coeffs()
            .iter()
            .zip(tv.coeffs())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert_abs_diff_eq!(err, discarded, epsilon = 1e-10);
    }

    #[test]
    fn entropy_profile_requires_normalization() {
        let m = OperatorMps::product_string(&PauliString::parse("XZ").unwrap(), 2.0);
        assert!(matches!(m.entropy_profile(), Err(MpsError::NotNormalized(_))));
    }

    #[test]
    fn product_profile_is_zero_and_bounded() {
        let m = OperatorMps::product_string(&PauliString::parse("XZYX").unwrap(), 1.0);
        let prof = m.entropy_profile().unwrap();
        for (e, b) in prof.entropy.iter().zip(&prof.max_bound) {
            assert!(e.abs() < 1e-12);
            assert!(*e <= b + 1e-9);
            assert!(*e <= prof.log_d + 1e-9);
        }
    }

    #[test]
    fn ti_cell_round_trip_and_promotion() {
        let n = 3;
        let dim = 3 << (2 * (n - 1));
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let cell: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        let m = OperatorMps::from_cell_vector(&cell, n, 64).unwrap();
        assert_eq!(m.phys_dim(0), 3);
        let v = m.to_vector();
        for (idx, &c) in cell.iter().enumerate() {
            let first = idx % 3 + 1;
            let rest = idx / 3;
            let mut word = first;
            for site in 1..n {
                word |= ((rest >> (2 * (site - 1))) & 3) << (2 * site);
            }
            assert_abs_diff_eq!(v.coeffs()[word], c, epsilon = 1e-11);
        }
        // Identity-first words vanish.
        assert_abs_diff_eq!(v.coeffs()[0], 0.0, epsilon = 1e-13);

        let sum = m.to_pauli_sum(1e-13);
        let p = OperatorMps::from_pauli_sum(&sum, 64).unwrap();
        let ov = overlap_mps(&m, &p).unwrap();
        let nm = overlap_mps(&m, &m).unwrap();
        assert_abs_diff_eq!(ov, nm, epsilon = 1e-9);
    }

    #[test]
    fn from_pauli_sum_exact() {
        let s = text::parse("0.5 XZI\n-0.25 IYZ\n1.5 ZZZ\n").unwrap();
        let m = OperatorMps::from_pauli_sum(&s, 64).unwrap();
        let back = m.to_pauli_sum(1e-12);
        let mut diff = back;
        diff.add_sum(&s, Complex64::new(-1.0, 0.0));
        assert!(crate::pauli::hs_norm_sq(&diff) < 1e-20);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let m = OperatorMps::random(3, 4, Gauge::TiFirstSite, &mut rng).unwrap();
        let j = m.to_json();
        let back = OperatorMps::from_json(&j).unwrap();
        assert_eq!(back.gauge(), Gauge::TiFirstSite);
        assert_abs_diff_eq!(overlap_mps(&m, &back).unwrap(), 1.0, epsilon = 1e-12);
    }
}
