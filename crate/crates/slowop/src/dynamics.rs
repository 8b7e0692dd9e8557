//! Time evolution: Chebyshev propagation of state vectors, stochastic
//! (random-vector) and exact two-point correlators `ntr(O(t) O(0))`, and
//! out-of-time-ordered commutators via exact diagonalization.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ising::{build_hamiltonian, IsingParams};
use crate::linalg;
use crate::pauli::{commutator, hs_norm, hs_norm_sq, PauliString, PauliSum};

/// Default cap on exact-diagonalization chain lengths.
pub const EXACT_DIAG_CAP: usize = 12;
/// Default cap on matrix-free Chebyshev chain lengths.
pub const CHEBYSHEV_CAP: usize = 14;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("chain of {0} sites exceeds the cap of {1}")]
    CapExceeded(usize, usize),
    #[error("need at least one random vector (K >= 1)")]
    NoSamples,
    #[error("site {0} outside the {1}-site chain")]
    SiteOutsideChain(usize, usize),
    #[error("times must be non-negative and strictly increasing")]
    BadTimes,
    #[error("Chebyshev expansion did not reach tolerance within {max_terms} terms (defect {defect:.3e})")]
    ChebyshevTruncated { max_terms: usize, defect: f64 },
    #[error(transparent)]
    Pauli(#[from] crate::pauli::PauliError),
    #[error(transparent)]
    Ising(#[from] crate::ising::IsingError),
    #[error("eigensolver failed: {0}")]
    Linalg(#[from] linalg::LinalgError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Spectral rescale for the Chebyshev expansion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EBar {
    /// Fixed value (the reference choice is 1000).
    Fixed(f64),
    /// `1.1 * sum of |coefficients|`, a cheap upper bound on the spectral
    /// radius; far fewer expansion terms at large t.
    Auto,
}

impl EBar {
    pub fn resolve(&self, h: &PauliSum) -> f64 {
        match *self {
            EBar::Fixed(v) => v,
            EBar::Auto => 1.1 * h.coeff_l1(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChebyshevConfig {
    pub e_bar: EBar,
    /// Norm-defect cutoff for the truncated expansion.
    pub trunc_tol: f64,
    pub max_terms: usize,
}

impl Default for ChebyshevConfig {
    fn default() -> Self {
        ChebyshevConfig { e_bar: EBar::Fixed(1000.0), trunc_tol: 1e-13, max_terms: 400_000 }
    }
}

/// (time, value) samples plus run metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub imag: Option<Vec<f64>>,
    pub stderr: Option<Vec<f64>>,
    pub meta: BTreeMap<String, String>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        TimeSeries { times, values, imag: None, stderr: None, meta: BTreeMap::new() }
    }

    /// CSV with `# key=value` metadata comments and a `t,value[,imag,stderr]`
    /// header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut header = String::from("t,value");
        if self.imag.is_some() {
            header.push_str(",imag");
        }
        if self.stderr.is_some() {
            header.push_str(",stderr");
        }
        out.push_str(&header);
        out.push('\n');
        for (i, (&t, &v)) in self.times.iter().zip(&self.values).enumerate() {
            out.push_str(&format!("{t:.12e},{v:.12e}"));
            if let Some(im) = &self.imag {
                out.push_str(&format!(",{:.12e}", im[i]));
            }
            if let Some(se) = &self.stderr {
                out.push_str(&format!(",{:.12e}", se[i]));
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Matrix-free operator application
// ---------------------------------------------------------------------------

/// A Pauli sum as a matrix-free applier on `2^l` state vectors. Site `i`
/// maps to bit `i` of the basis index.
pub struct PauliApplier {
    pub l: usize,
    terms: Vec<(usize, u64, Complex64)>,
}

impl PauliApplier {
    pub fn new(s: &PauliSum) -> Self {
        let l = s.window();
        let terms = s
            .terms()
            .map(|(p, c)| {
                let (x, z, ny) = p.xz_masks();
                let front = crate::pauli::Phase::from_power(ny).as_complex() * c;
                (x as usize, z, front)
            })
            .collect();
        PauliApplier { l, terms }
    }

    /// `out += A . input`
    pub fn apply_add(&self, input: &[Complex64], out: &mut [Complex64]) {
        let dim = 1usize << self.l;
        debug_assert_eq!(input.len(), dim);
        for &(x, z, front) in &self.terms {
            if z == 0 {
                for b in 0..dim {
                    out[b ^ x] += front * input[b];
                }
            } else {
                for (b, &amp) in input.iter().enumerate() {
                    let sign = if ((b as u64) & z).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    out[b ^ x] += front * sign * amp;
                }
            }
        }
    }

    pub fn apply(&self, input: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); input.len()];
        self.apply_add(input, &mut out);
        out
    }
}

/// Operator applier that exploits a contiguous support window if one exists.
enum OpApplier {
    Window { lo: usize, w: usize, l: usize, mat: Array2<Complex64> },
    Terms(PauliApplier),
}

impl OpApplier {
    fn new(o: &PauliSum) -> Result<Self> {
        let l = o.window();
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        for (p, _) in o.terms() {
            if let Some((a, b)) = p.support() {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        if lo == usize::MAX {
            lo = 0;
            hi = 0;
        }
        let w = hi - lo + 1;
        if w <= 10 && w < l {
            // Restrict to the window and densify there.
            let mut restricted = PauliSum::new(w);
            for (p, c) in o.terms() {
                let mut q = PauliString::identity(w);
                for i in 0..w {
                    q.set_letter(i, p.letter(lo + i));
                }
                restricted.add(q, *c);
            }
            let mat = restricted.to_dense_capped(12)?;
            Ok(OpApplier::Window { lo, w, l, mat })
        } else {
            Ok(OpApplier::Terms(PauliApplier::new(o)))
        }
    }

    fn apply(&self, input: &[Complex64]) -> Vec<Complex64> {
        match self {
            OpApplier::Terms(t) => t.apply(input),
            OpApplier::Window { lo, w, l, mat } => {
                // State index = high bits | window bits | low bits.
                let dim = 1usize << l;
                let wdim = 1usize << w;
                let low = 1usize << lo;
                let high = dim / (wdim * low);
                let mut out = vec![Complex64::default(); dim];
                for hb in 0..high {
                    for lb in 0..low {
                        let base = (hb << (lo + w)) | lb;
                        for r in 0..wdim {
                            let mut acc = Complex64::default();
                            for c in 0..wdim {
                                let m = mat[[r, c]];
                                if m != Complex64::default() {
                                    acc += m * input[base | (c << lo)];
                                }
                            }
                            out[base | (r << lo)] = acc;
                        }
                    }
                }
                out
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Bessel functions and the Chebyshev propagator
// ---------------------------------------------------------------------------

/// `J_0..J_nmax` at `x >= 0` by Miller's downward recurrence.
fn bessel_j_seq(nmax: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; nmax + 1];
        out[0] = 1.0;
        return out;
    }
    // Start the downward recurrence safely above both the order and the
    // turning point at k ~ x.
    let start = nmax.max(x.ceil() as usize) + 40 + (2.0 * (nmax as f64).sqrt()) as usize;
    let mut jp = 0.0f64; // J_{k+1}
    let mut j = 1e-300f64; // J_k
    let mut out = vec![0.0; nmax + 1];
    let mut norm = 0.0f64; // J_0 + 2 sum J_{2m}
    for k in (0..=start).rev() {
        let jm = 2.0 * (k as f64 + 1.0) / x * j - jp; // J_k from J_{k+1}, J_{k+2}
        jp = j;
        j = jm;
        if k <= nmax {
            out[k] = j;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j } else { 2.0 * j };
        }
        if j.abs() > 1e250 {
            let scale = 1e-250;
            j *= scale;
            jp *= scale;
            norm *= scale;
            for o in out.iter_mut() {
                *o *= scale;
            }
        }
    }
    for o in out.iter_mut() {
        *o /= norm;
    }
    out
}

/// Chebyshev-expanded propagator `e^{-iHt}`.
pub struct Propagator {
    h: PauliApplier,
    pub e_bar: f64,
    pub trunc_tol: f64,
    pub max_terms: usize,
}

impl Propagator {
    pub fn new(h: &PauliSum, cfg: &ChebyshevConfig) -> Self {
        Propagator {
            e_bar: cfg.e_bar.resolve(h),
            h: PauliApplier::new(h),
            trunc_tol: cfg.trunc_tol,
            max_terms: cfg.max_terms,
        }
    }

    /// Evolves a state by `e^{-iHt}`, accumulating
    /// `J_0(2 E t) psi + 2 sum_n (-i)^n J_n(2 E t) T_n(H/(2E)) psi`
    /// until the norm defect of the partial sum (relative to the input norm,
    /// which unitary evolution preserves) drops below `trunc_tol` and the
    /// Bessel weights are exhausted. Returns the state, the final norm
    /// defect, and the number of terms used.
    pub fn evolve(&self, psi: &[Complex64], t: f64) -> Result<(Vec<Complex64>, f64, usize)> {
        let tau = 2.0 * self.e_bar * t;
        let (tau_abs, parity) = (tau.abs(), tau < 0.0);
        let dim = psi.len();
        let input_norm_sq = norm_sq(psi).max(1e-300);
        // Initial Bessel budget; extended on demand.
        let mut nmax = (tau_abs + 12.0 * (1.0 + tau_abs.powf(1.0 / 3.0)) + 30.0) as usize;
        let mut bessel = bessel_j_seq(nmax, tau_abs);

        let scale = 1.0 / self.e_bar; // recurrence uses x = H/(2E); phi_{n+1} = (H/E) phi_n - phi_{n-1}
        let mut phi_prev: Vec<Complex64> = psi.to_vec();
        let mut phi: Vec<Complex64> = {
            let mut hv = vec![Complex64::default(); dim];
            self.h.apply_add(psi, &mut hv);
            hv.iter().map(|v| v * (0.5 * scale)).collect()
        };
        let j = |n: usize, b: &Vec<f64>| -> f64 {
            let v = b[n];
            if parity && n % 2 == 1 {
                -v
            } else {
                v
            }
        };
        let mut acc: Vec<Complex64> = psi.iter().map(|v| v * j(0, &bessel)).collect();
        let mut defect = (norm_sq(&acc) / input_norm_sq - 1.0).abs();
        let mut tiny_streak = 0usize;
        let mut n = 1usize;
        loop {
            if n > nmax {
                if n >= self.max_terms {
                    return Err(DynamicsError::ChebyshevTruncated { max_terms: self.max_terms, defect });
                }
                nmax = (nmax * 2).max(64).min(self.max_terms);
                bessel = bessel_j_seq(nmax, tau_abs);
            }
            let jn = j(n, &bessel);
            let coeff = Complex64::new(0.0, -1.0).powu(n as u32) * (2.0 * jn);
            for (a, p) in acc.iter_mut().zip(&phi) {
                *a += coeff * p;
            }
            defect = (norm_sq(&acc) / input_norm_sq - 1.0).abs();
            if jn.abs() < 1e-16 {
                tiny_streak += 1;
            } else {
                tiny_streak = 0;
            }
            if defect < self.trunc_tol && tiny_streak >= 3 {
                break;
            }
            if n + 1 >= self.max_terms {
                return Err(DynamicsError::ChebyshevTruncated { max_terms: self.max_terms, defect });
            }
            // phi_{n+1} = (H/E) phi_n - phi_{n-1}
            let mut next = vec![Complex64::default(); dim];
            self.h.apply_add(&phi, &mut next);
            for ((nx, p), pv) in next.iter_mut().zip(&phi).zip(&phi_prev) {
                let _ = p;
                *nx = *nx * scale - pv;
            }
            phi_prev = std::mem::replace(&mut phi, next);
            n += 1;
        }
        Ok((acc, defect, n + 1))
    }
}

fn norm_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Matrix-free Chebyshev evolution of `state` by `e^{-iHt}` for the chain
/// Hamiltonian; convenience wrapper over [`Propagator`].
pub fn chebyshev_evolve(
    state: &[Complex64],
    h: &PauliSum,
    t: f64,
    cfg: &ChebyshevConfig,
) -> Result<(Vec<Complex64>, f64, usize)> {
    if h.window() > CHEBYSHEV_CAP {
        return Err(DynamicsError::CapExceeded(h.window(), CHEBYSHEV_CAP));
    }
    Propagator::new(h, cfg).evolve(state, t)
}

// ---------------------------------------------------------------------------
// Exact diagonalization
// ---------------------------------------------------------------------------

/// Full eigensystem of the (real, symmetric) chain Hamiltonian.
pub struct EigenSystem {
    pub l: usize,
    pub energies: Array1<f64>,
    pub vectors: Array2<f64>,
}

pub fn diagonalize(params: IsingParams, l: usize, cap: usize) -> Result<EigenSystem> {
    if l > cap {
        return Err(DynamicsError::CapExceeded(l, cap));
    }
    let h = build_hamiltonian(params, l, true)?;
    let dim = 1usize << l;
    let mut m = Array2::<f64>::zeros((dim, dim));
    for (p, c) in h.terms() {
        let (x, z, ny) = p.xz_masks();
        debug_assert_eq!(ny, 0, "Ising chain is real in the z basis");
        for b in 0..dim {
            let sign = if ((b as u64) & z).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            m[[b ^ (x as usize), b]] += c.re * sign;
        }
    }
    let (energies, vectors) = linalg::eigh(&m)?;
    Ok(EigenSystem { l, energies, vectors })
}

/// Splits a Hermitian Pauli sum into dense symmetric (`A`) and antisymmetric
/// (`B`) real parts with `O = A + i B`.
fn dense_real_imag(o: &PauliSum, l: usize) -> (Array2<f64>, Array2<f64>) {
    let dim = 1usize << l;
    let mut a = Array2::<f64>::zeros((dim, dim));
    let mut b = Array2::<f64>::zeros((dim, dim));
    for (p, c) in o.terms() {
        let (x, z, ny) = p.xz_masks();
        let front = crate::pauli::Phase::from_power(ny).as_complex() * c;
        for bs in 0..dim {
            let sign = if ((bs as u64) & z).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            let r = bs ^ (x as usize);
            a[[r, bs]] += front.re * sign;
            b[[r, bs]] += front.im * sign;
        }
    }
    (a, b)
}

fn embed_operator(o: &PauliSum, l: usize) -> Result<PauliSum> {
    Ok(if o.window() == l { o.clone() } else { o.embed(l, 0, false)? })
}

fn unit_normalized(o: &PauliSum) -> PauliSum {
    let n = hs_norm(o);
    if (n - 1.0).abs() > 1e-12 && n > 0.0 {
        o.scaled(Complex64::new(1.0 / n, 0.0))
    } else {
        o.clone()
    }
}

/// Exact two-point correlator `ntr(O(t) O(0))` via the eigenbasis:
/// `sum_ij e^{i(E_i-E_j)t} |<E_i|O|E_j>|^2 / 2^L`.
pub fn exact_correlator(
    o: &PauliSum,
    params: IsingParams,
    l: usize,
    times: &[f64],
    cap: usize,
) -> Result<TimeSeries> {
    let eig = diagonalize(params, l, cap)?;
    exact_correlator_with(&eig, o, params, times)
}

/// Same as [`exact_correlator`] with a precomputed eigensystem.
pub fn exact_correlator_with(
    eig: &EigenSystem,
    o: &PauliSum,
    params: IsingParams,
    times: &[f64],
) -> Result<TimeSeries> {
    let l = eig.l;
    let emb = unit_normalized(&embed_operator(o, l)?);
    let dim = 1usize << l;
    let (a, b) = dense_real_imag(&emb, l);
    let wre = eig.vectors.t().dot(&a).dot(&eig.vectors);
    let wim = eig.vectors.t().dot(&b).dot(&eig.vectors);
    let mut wabs2 = Array2::<f64>::zeros((dim, dim));
    ndarray::Zip::from(&mut wabs2).and(&wre).and(&wim).for_each(|o2, &r, &i| {
        *o2 = r * r + i * i;
    });
    let scale = 1.0 / dim as f64;
    let results: Vec<(f64, f64)> = times
        .par_iter()
        .map(|&t| {
            let cos: Array1<f64> = eig.energies.mapv(|e| (e * t).cos());
            let sin: Array1<f64> = eig.energies.mapv(|e| (e * t).sin());
            let p = wabs2.dot(&cos);
            let q = wabs2.dot(&sin);
            // u_i = e^{iE_i t}; C = sum_i u_i (W |u*>)_i / 2^L
            let real: f64 = cos.dot(&p) + sin.dot(&q);
            let imag: f64 = sin.dot(&p) - cos.dot(&q);
            (real * scale, imag * scale)
        })
        .collect();
    let mut ts = TimeSeries::new(times.to_vec(), results.iter().map(|r| r.0).collect());
    ts.imag = Some(results.iter().map(|r| r.1).collect());
    ts.meta.insert("observable".into(), "exact_correlator".into());
    ts.meta.insert("L".into(), l.to_string());
    ts.meta.insert("g".into(), format!("{}", params.g));
    ts.meta.insert("h".into(), format!("{}", params.h));
    Ok(ts)
}

/// Stochastic two-point correlator: `(1/K) sum_k <phi_k(-t)| O |chi_k(-t)>`
/// with `|chi_k(-t)> = e^{iHt} |psi_k>`, `|phi_k(-t)> = e^{iHt} O |psi_k>`,
/// and Gaussian random unit vectors `psi_k`.
pub fn two_point_correlator(
    o: &PauliSum,
    params: IsingParams,
    l: usize,
    times: &[f64],
    k: usize,
    seed: u64,
    cfg: &ChebyshevConfig,
) -> Result<TimeSeries> {
    if l > CHEBYSHEV_CAP {
        return Err(DynamicsError::CapExceeded(l, CHEBYSHEV_CAP));
    }
    if k == 0 {
        return Err(DynamicsError::NoSamples);
    }
    if times.iter().any(|&t| t < 0.0) || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DynamicsError::BadTimes);
    }
    let emb = unit_normalized(&embed_operator(o, l)?);
    let h = build_hamiltonian(params, l, true)?;
    let prop = Propagator::new(&h, cfg);
    let op = OpApplier::new(&emb)?;
    let dim = 1usize << l;

    let per_k: Vec<Vec<Complex64>> = (0..k)
        .into_par_iter()
        .map(|ki| -> Result<Vec<Complex64>> {
            let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(ki as u64));
            let mut psi: Vec<Complex64> = (0..dim)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re, im)
                })
                .collect();
            let nrm = norm_sq(&psi).sqrt();
            for c in &mut psi {
                *c /= nrm;
            }
            let mut chi = psi.clone();
            let mut phi = op.apply(&psi);
            let mut vals = Vec::with_capacity(times.len());
            let mut t_prev = 0.0;
            for &t in times {
                let dt = t - t_prev;
                if dt > 0.0 {
                    // e^{iH dt} = evolve with negative time argument
                    let (c2, _, _) = prop.evolve(&chi, -dt)?;
                    chi = c2;
                    let (p2, _, _) = prop.evolve(&phi, -dt)?;
                    phi = p2;
                    t_prev = t;
                }
                let ochi = op.apply(&chi);
                let v: Complex64 = phi.iter().zip(&ochi).map(|(a, b)| a.conj() * b).sum();
                vals.push(v);
            }
            Ok(vals)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::with_capacity(times.len());
    let mut imag = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let mut mean = Complex64::default();
        for kv in &per_k {
            mean += kv[ti];
        }
        mean /= k as f64;
        let var: f64 = per_k.iter().map(|kv| (kv[ti].re - mean.re).powi(2)).sum::<f64>() / k as f64;
        values.push(mean.re);
        imag.push(mean.im);
        stderr.push((var / k as f64).sqrt());
    }
    let mut ts = TimeSeries::new(times.to_vec(), values);
    ts.imag = Some(imag);
    ts.stderr = Some(stderr);
    ts.meta.insert("observable".into(), "two_point_correlator".into());
    ts.meta.insert("L".into(), l.to_string());
    ts.meta.insert("K".into(), k.to_string());
    ts.meta.insert("seed".into(), seed.to_string());
    ts.meta.insert("e_bar".into(), format!("{}", prop.e_bar));
    ts.meta.insert("trunc_tol".into(), format!("{}", prop.trunc_tol));
    ts.meta.insert("g".into(), format!("{}", params.g));
    ts.meta.insert("h".into(), format!("{}", params.h));
    Ok(ts)
}

/// Which chain site(s) the OTOC Pauli probe sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SitePick {
    Absolute(usize),
    /// Offset from the center of an `N`-site local operator: resolves to the
    /// one or two mirrored sites, whose OTOC curves are averaged.
    CenterOffset { n: usize, offset: usize },
}

fn resolve_sites(pick: SitePick, l: usize) -> Result<Vec<usize>> {
    match pick {
        SitePick::Absolute(s) => {
            if s >= l {
                return Err(DynamicsError::SiteOutsideChain(s, l));
            }
            Ok(vec![s])
        }
        SitePick::CenterOffset { n, offset } => {
            let (c1, c2) = if n % 2 == 1 { ((n - 1) / 2, (n - 1) / 2) } else { (n / 2 - 1, n / 2) };
            let left = (c1 as isize - offset as isize).rem_euclid(l as isize) as usize;
            let right = (c2 + offset) % l;
            Ok(if left == right { vec![left] } else { vec![left, right] })
        }
    }
}

/// Out-of-time-ordered commutator `-ntr([O(t), sigma_axis^(site)]^2)
/// = 2 - 2 ntr(O(t) sigma O(t) sigma)`, via exact diagonalization.
pub fn otoc(
    o: &PauliSum,
    axis: u8,
    pick: SitePick,
    params: IsingParams,
    l: usize,
    times: &[f64],
    cap: usize,
) -> Result<TimeSeries> {
    let eig = diagonalize(params, l, cap)?;
    otoc_with(&eig, o, axis, pick, times)
}

/// Same as [`otoc`] with a precomputed eigensystem.
pub fn otoc_with(
    eig: &EigenSystem,
    o: &PauliSum,
    axis: u8,
    pick: SitePick,
    times: &[f64],
) -> Result<TimeSeries> {
    let l = eig.l;
    let sites = resolve_sites(pick, l)?;
    let emb = unit_normalized(&embed_operator(o, l)?);
    let dim = 1usize << l;
    let (a, b) = dense_real_imag(&emb, l);
    let w = {
        let wre = eig.vectors.t().dot(&a).dot(&eig.vectors);
        let wim = eig.vectors.t().dot(&b).dot(&eig.vectors);
        let mut w = Array2::<Complex64>::zeros((dim, dim));
        ndarray::Zip::from(&mut w).and(&wre).and(&wim).for_each(|o2, &r, &i| {
            *o2 = Complex64::new(r, i);
        });
        w
    };

    let s_eig: Vec<Array2<Complex64>> = sites
        .iter()
        .map(|&site| {
            let sigma = PauliSum::term(PauliString::single(l, site, axis), Complex64::new(1.0, 0.0));
            let (sa, sb) = dense_real_imag(&sigma, l);
            let sre = eig.vectors.t().dot(&sa).dot(&eig.vectors);
            let sim = eig.vectors.t().dot(&sb).dot(&eig.vectors);
            let mut s = Array2::<Complex64>::zeros((dim, dim));
            ndarray::Zip::from(&mut s).and(&sre).and(&sim).for_each(|o2, &r, &i| {
                *o2 = Complex64::new(r, i);
            });
            s
        })
        .collect();

    let scale = 1.0 / dim as f64;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let phases: Vec<Complex64> = eig.energies.iter().map(|&e| Complex64::new(0.0, e * t).exp()).collect();
        // W(t)_ij = e^{i(E_i - E_j)t} W_ij
        let mut wt = w.clone();
        for i in 0..dim {
            for j2 in 0..dim {
                wt[[i, j2]] *= phases[i] * phases[j2].conj();
            }
        }
        let mut acc = 0.0;
        for s in &s_eig {
            let bmat = wt.dot(s);
            // ntr(W(t) S W(t) S) = Tr((W S)^2) / 2^L
            let mut tr = Complex64::default();
            for i in 0..dim {
                for j2 in 0..dim {
                    tr += bmat[[i, j2]] * bmat[[j2, i]];
                }
            }
            acc += 2.0 - 2.0 * (tr.re * scale);
        }
        values.push(acc / s_eig.len() as f64);
    }
    let mut ts = TimeSeries::new(times.to_vec(), values);
    ts.meta.insert("observable".into(), "otoc".into());
    ts.meta.insert("axis".into(), ["i", "x", "y", "z"][axis as usize].to_string());
    ts.meta.insert("sites".into(), format!("{sites:?}"));
    ts.meta.insert("L".into(), l.to_string());
    Ok(ts)
}

/// OTOC at t = 0 from the commutator directly: `-ntr([O, sigma]^2)`.
pub fn otoc_t0_direct(o: &PauliSum, axis: u8, site: usize, l: usize) -> Result<f64> {
    let emb = unit_normalized(&embed_operator(o, l)?);
    let sigma = PauliSum::term(PauliString::single(l, site, axis), Complex64::new(1.0, 0.0));
    let c = commutator(&emb, &sigma)?;
    Ok(hs_norm_sq(&c))
}

/// The short-time reference curve `e^{-lambda t^2 / 2}`.
pub fn gaussian_envelope(lambda: f64, times: &[f64]) -> TimeSeries {
    let values = times.iter().map(|&t| (-lambda * t * t / 2.0).exp()).collect();
    let mut ts = TimeSeries::new(times.to_vec(), values);
    ts.meta.insert("observable".into(), "gaussian_envelope".into());
    ts.meta.insert("lambda".into(), format!("{lambda}"));
    ts
}

/// Evenly spaced time grid including both endpoints.
pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![a];
    }
    (0..points)
        .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(g: f64, h: f64) -> IsingParams {
        IsingParams::new(g, h).unwrap()
    }

    #[test]
    fn bessel_known_values() {
        let j = bessel_j_seq(6, 1.0);
        assert_abs_diff_eq!(j[0], 0.7651976865579666, epsilon = 1e-13);
        assert_abs_diff_eq!(j[1], 0.4400505857449335, epsilon = 1e-13);
        assert_abs_diff_eq!(j[2], 0.11490348493190048, epsilon = 1e-13);
        let j10 = bessel_j_seq(6, 10.0);
        assert_abs_diff_eq!(j10[5], -0.2340615281867936, epsilon = 1e-12);
    }

    #[test]
    fn chebyshev_identity_at_t0() {
        let h = build_hamiltonian(params(1.05, 0.1), 3, true).unwrap();
        let cfg = ChebyshevConfig::default();
        let mut psi = vec![Complex64::default(); 8];
        psi[3] = Complex64::new(1.0, 0.0);
        let (out, defect, _) = chebyshev_evolve(&psi, &h, 0.0, &cfg).unwrap();
        assert!(defect < 1e-13);
        for (i, v) in out.iter().enumerate() {
            let expect = if i == 3 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(v.re, expect, epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn chebyshev_single_spin_analytic() {
        // H = sigma_z on one site: e^{-iHt} = diag(e^{-it}, e^{+it})
        let mut h = PauliSum::new(1);
        h.add(PauliString::parse("Z").unwrap(), Complex64::new(1.0, 0.0));
        let cfg = ChebyshevConfig { e_bar: EBar::Fixed(2.0), ..Default::default() };
        let psi = vec![
            Complex64::new(0.6, 0.0),
            Complex64::new(0.0, 0.8),
        ];
        let t = 1.0;
        let (out, defect, _) = Propagator::new(&h, &cfg).evolve(&psi, t).unwrap();
        assert!(defect < 1e-12);
        let e0 = Complex64::new(0.0, -t).exp();
        let e1 = Complex64::new(0.0, t).exp();
        assert_abs_diff_eq!((out[0] - psi[0] * e0).norm(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!((out[1] - psi[1] * e1).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn exact_correlator_t0_is_one() {
        let p = params(1.05, 0.1);
        let o = crate::probes::magnetization(3, 2).unwrap();
        let ts = exact_correlator(&o, p, 5, &[0.0, 0.3], EXACT_DIAG_CAP).unwrap();
        assert_abs_diff_eq!(ts.values[0], 1.0, epsilon = 1e-10);
        for im in ts.imag.as_ref().unwrap() {
            assert_abs_diff_eq!(*im, 0.0, epsilon = 1e-10);
        }
        // even-time symmetry
        let ts2 = exact_correlator(&o, p, 5, &[0.3], EXACT_DIAG_CAP).unwrap();
        let tsm = {
            // C(-t) through the same spectral sum evaluated at negative time
            let eig = diagonalize(p, 5, EXACT_DIAG_CAP).unwrap();
            exact_correlator_with(&eig, &o, p, &[-0.3]).unwrap()
        };
        assert_abs_diff_eq!(ts2.values[0], tsm.values[0], epsilon = 1e-10);
    }

    #[test]
    fn conserved_operator_stays_constant() {
        // g = 0: sigma_z^(0) commutes with H; stochastic estimator is exact
        // per sample because sigma_z^2 = 1.
        let p = params(0.0, 0.9);
        let o = PauliSum::term(PauliString::single(4, 0, 3), Complex64::new(1.0, 0.0));
        let cfg = ChebyshevConfig { e_bar: EBar::Auto, ..Default::default() };
        let ts = two_point_correlator(&o, p, 4, &[0.5, 1.0, 2.0], 3, 42, &cfg).unwrap();
        for v in &ts.values {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn stochastic_matches_exact_small() {
        let p = params(1.05, 0.1);
        let l = 6;
        let o = crate::probes::diffusion_mode(p, 3).unwrap().embed(l, 0, false).unwrap();
        let times = [0.4, 0.9];
        let cfg = ChebyshevConfig { e_bar: EBar::Auto, ..Default::default() };
        let st = two_point_correlator(&o, p, l, &times, 40, 7, &cfg).unwrap();
        let ex = exact_correlator(&o, p, l, &times, EXACT_DIAG_CAP).unwrap();
        for (a, b) in st.values.iter().zip(&ex.values) {
            assert!((a - b).abs() < 0.08, "{a} vs {b}");
        }
    }

    #[test]
    fn otoc_disjoint_support_zero_at_t0() {
        let p = params(1.05, 0.1);
        let l = 8;
        let o = crate::probes::magnetization(3, 3).unwrap(); // sites 0..2
        let ts = otoc(&o, 1, SitePick::Absolute(6), p, l, &[0.0], EXACT_DIAG_CAP).unwrap();
        assert_abs_diff_eq!(ts.values[0], 0.0, epsilon = 1e-10);
        // and matches the direct commutator at t=0 on an in-support site
        let ts2 = otoc(&o, 1, SitePick::Absolute(1), p, l, &[0.0], EXACT_DIAG_CAP).unwrap();
        let direct = otoc_t0_direct(&o, 1, 1, l).unwrap();
        assert_abs_diff_eq!(ts2.values[0], direct, epsilon = 1e-9);
        assert!(ts2.values[0] >= 0.0 && ts2.values[0] <= 4.0);
    }

    #[test]
    fn center_resolution() {
        // N=6 on L=11: centers 2 and 3; offset 3 -> sites 10 (wrap of -1) and 6.
        let sites = resolve_sites(SitePick::CenterOffset { n: 6, offset: 3 }, 11).unwrap();
        assert_eq!(sites, vec![10, 6]);
        let sites = resolve_sites(SitePick::CenterOffset { n: 5, offset: 0 }, 11).unwrap();
        assert_eq!(sites, vec![2]);
    }

    #[test]
    fn envelope_shape() {
        let ts = gaussian_envelope(2.0, &[0.0, 0.1]);
        assert_abs_diff_eq!(ts.values[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ts.values[1], (-2.0f64 * 0.01 / 2.0).exp(), epsilon = 1e-15);
    }

    #[test]
    fn group_property() {
        let p = params(1.05, 0.3);
        let l = 5;
        let h = build_hamiltonian(p, l, true).unwrap();
        let cfg = ChebyshevConfig { e_bar: EBar::Auto, ..Default::default() };
        let prop = Propagator::new(&h, &cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut psi: Vec<Complex64> = (0..32)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        let nrm = norm_sq(&psi).sqrt();
        for c in &mut psi {
            *c /= nrm;
        }
        let (a, _, _) = prop.evolve(&psi, 0.7).unwrap();
        let (ab, _, _) = prop.evolve(&a, 0.5).unwrap();
        let (direct, _, _) = prop.evolve(&psi, 1.2).unwrap();
        let err: f64 = ab.iter().zip(&direct).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-8, "group property error {err}");
    }
}
