//! Probe operators (diffusion mode, energy flux, magnetizations), normalized
//! overlaps with solver output, the coefficient-optimized diffusion mode,
//! log-log scaling slopes, and transition detection on overlap curves.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ising::{build_h_loc, IsingParams};
use crate::linalg;
use crate::mps::{overlap_mps, OperatorMps};
use crate::pauli::{commutator, hs_inner, hs_norm, PauliString, PauliSum, LETTER_X, LETTER_Z};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("window too small: {0}")]
    WindowTooSmall(usize),
    #[error("chain of {l} sites too short for the TI probe (needs {need})")]
    ChainTooShort { l: usize, need: usize },
    #[error("lambda values must be positive for log-log slopes (N={0}: {1})")]
    NonPositiveLambda(usize, f64),
    #[error("optimized diffusion basis is empty after exclusions")]
    EmptyBasis,
    #[error(transparent)]
    Pauli(#[from] crate::pauli::PauliError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Mps(#[from] crate::mps::MpsError),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

/// The five probe families of the overlap analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTag {
    DiffusionMode,
    EnergyFlux,
    MagnetizationX,
    MagnetizationY,
    MagnetizationZ,
}

impl ProbeTag {
    pub fn all() -> [ProbeTag; 5] {
        [
            ProbeTag::DiffusionMode,
            ProbeTag::EnergyFlux,
            ProbeTag::MagnetizationX,
            ProbeTag::MagnetizationY,
            ProbeTag::MagnetizationZ,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProbeTag::DiffusionMode => "diffusion_mode",
            ProbeTag::EnergyFlux => "energy_flux",
            ProbeTag::MagnetizationX => "magnetization_x",
            ProbeTag::MagnetizationY => "magnetization_y",
            ProbeTag::MagnetizationZ => "magnetization_z",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVariant {
    LocalWindow,
    TranslationInvariant,
}

/// One overlap measurement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub g: f64,
    pub h: f64,
    pub n: usize,
    pub probe: ProbeTag,
    pub variant: ProbeVariant,
    pub value: f64,
}

/// Two-point log-log slope between consecutive window sizes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SlopeRecord {
    pub n_low: usize,
    pub n_high: usize,
    pub slope: f64,
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn normalized(mut s: PauliSum) -> PauliSum {
    let n = hs_norm(&s);
    if n > 0.0 {
        s = s.scaled(re(1.0 / n));
    }
    s
}

/// Cosine envelope weight for bond `i` of an `n`-site window.
pub fn bond_weight(i: usize, n: usize) -> f64 {
    (-std::f64::consts::FRAC_PI_2 + (i as f64 + 0.5) / n as f64 * std::f64::consts::PI).cos()
}

/// Cosine envelope weight for the field at site `i`; vanishes at i = 0.
pub fn field_weight(i: usize, n: usize) -> f64 {
    (-std::f64::consts::FRAC_PI_2 + i as f64 / n as f64 * std::f64::consts::PI).cos()
}

/// Diffusion mode: window Hamiltonian terms under a cosine bell, normalized.
pub fn diffusion_mode(params: IsingParams, n: usize) -> Result<PauliSum> {
    if n < 2 {
        return Err(ProbeError::WindowTooSmall(n));
    }
    Ok(normalized(diffusion_mode_raw(params, n)))
}

fn diffusion_mode_raw(params: IsingParams, n: usize) -> PauliSum {
    let mut s = PauliSum::new(n);
    for i in 0..n - 1 {
        let mut p = PauliString::identity(n);
        p.set_letter(i, LETTER_Z);
        p.set_letter(i + 1, LETTER_Z);
        s.add(p, re(bond_weight(i, n) * IsingParams::ZZ_COUPLING));
    }
    for i in 0..n {
        let w = field_weight(i, n);
        if params.h != 0.0 {
            s.add(PauliString::single(n, i, LETTER_Z), re(w * params.h));
        }
        if params.g != 0.0 {
            s.add(PauliString::single(n, i, LETTER_X), re(w * params.g));
        }
    }
    s.prune(0.0);
    s
}

/// Energy flux probe: the window Hamiltonian terms plus the wrap bond
/// `-Z_{N-1} Z_0`, normalized.
pub fn energy_flux(params: IsingParams, n: usize) -> Result<PauliSum> {
    if n < 2 {
        return Err(ProbeError::WindowTooSmall(n));
    }
    let mut s = build_h_loc(params, n);
    let mut wrap = PauliString::identity(n);
    wrap.set_letter(n - 1, LETTER_Z);
    wrap.set_letter(0, LETTER_Z);
    s.add(wrap, re(IsingParams::ZZ_COUPLING));
    Ok(normalized(s))
}

/// Normalized magnetization `sum_i sigma_axis^(i) / sqrt(N)`.
pub fn magnetization(axis: u8, n: usize) -> Result<PauliSum> {
    if n < 1 {
        return Err(ProbeError::WindowTooSmall(n));
    }
    let mut s = PauliSum::new(n);
    for i in 0..n {
        s.add(PauliString::single(n, i, axis), re(1.0));
    }
    Ok(normalized(s))
}

fn probe_axis(tag: ProbeTag) -> u8 {
    match tag {
        ProbeTag::MagnetizationX => 1,
        ProbeTag::MagnetizationY => 2,
        ProbeTag::MagnetizationZ => 3,
        _ => unreachable!(),
    }
}

/// Window probe for the local definition.
pub fn window_probe(tag: ProbeTag, params: IsingParams, n: usize) -> Result<PauliSum> {
    match tag {
        ProbeTag::DiffusionMode => diffusion_mode(params, n),
        ProbeTag::EnergyFlux => energy_flux(params, n),
        _ => magnetization(probe_axis(tag), n),
    }
}

/// The translation-invariant probe's repeating cell (unnormalized).
///
/// Diffusion keeps the full N-site bell cell; the energy flux cell is the
/// Hamiltonian density (so the cyclic sum is exactly the periodic
/// Hamiltonian, matching its definition); magnetizations reduce to the
/// single-site Pauli.
pub fn ti_probe_cell(tag: ProbeTag, params: IsingParams, n: usize) -> Result<PauliSum> {
    match tag {
        ProbeTag::DiffusionMode => Ok(diffusion_mode_raw(params, n)),
        ProbeTag::EnergyFlux => {
            let mut s = PauliSum::new(2);
            let mut zz = PauliString::identity(2);
            zz.set_letter(0, LETTER_Z);
            zz.set_letter(1, LETTER_Z);
            s.add(zz, re(IsingParams::ZZ_COUPLING));
            if params.h != 0.0 {
                s.add(PauliString::single(2, 0, LETTER_Z), re(params.h));
            }
            if params.g != 0.0 {
                s.add(PauliString::single(2, 0, LETTER_X), re(params.g));
            }
            Ok(s)
        }
        _ => {
            let mut s = PauliSum::new(1);
            s.add(PauliString::single(1, 0, probe_axis(tag)), re(1.0));
            Ok(s)
        }
    }
}

/// The cyclic sum of shifted copies of a cell on an `l`-site periodic chain
/// (unnormalized).
pub fn ti_chain_operator(cell: &PauliSum, l: usize) -> Result<PauliSum> {
    let mut total = PauliSum::new(l);
    for i in 0..l {
        for (p, c) in cell.terms() {
            total.add(p.embed(l, i, true)?, *c);
        }
    }
    Ok(total)
}

/// Translation-invariant probe on an `l`-site periodic chain: the cyclic sum
/// of shifted cells, normalized under the l-site ntr.
pub fn ti_probe(tag: ProbeTag, params: IsingParams, n: usize, l: usize) -> Result<PauliSum> {
    if l < 2 * n + 3 {
        return Err(ProbeError::ChainTooShort { l, need: 2 * n + 3 });
    }
    let cell = ti_probe_cell(tag, params, n)?;
    Ok(normalized(ti_chain_operator(&cell, l)?))
}

/// Overlap `ntr(O P)` of two (unit-norm) operators on a common chain.
pub fn overlap(o: &PauliSum, p: &PauliSum) -> Result<f64> {
    Ok(hs_inner(o, p)?.re)
}

/// Overlap with both operands normalized first.
pub fn overlap_normalized(o: &PauliSum, p: &PauliSum) -> Result<f64> {
    let (no, np) = (hs_norm(o), hs_norm(p));
    if no == 0.0 || np == 0.0 {
        return Ok(0.0);
    }
    Ok(hs_inner(o, p)?.re / (no * np))
}

/// Normalized overlap of a local-definition MPS result with a window probe,
/// contracted in MPS form (usable beyond the dense-enumeration caps).
pub fn overlap_probe_mps(result: &OperatorMps, probe: &PauliSum) -> Result<f64> {
    let pm = OperatorMps::from_pauli_sum(probe, probe.len().max(2))?;
    Ok(overlap_mps(result, &pm)?)
}

/// Normalized overlap of a TI cell result (unit cell norm, gauged) with a TI
/// probe given by its repeating cell, both summed over all shifts:
/// `<O, P> / (||O|| ||P||)` evaluated per cell on minimal windows.
pub fn overlap_ti_mps(cell: &OperatorMps, probe_cell: &PauliSum) -> Result<f64> {
    let n_o = cell.n_sites();
    let n_p = probe_cell.len();
    let pm = OperatorMps::from_pauli_sum(probe_cell, (3 * n_p).max(4))?;
    // numerator: sum_e <shift_e(cell), P_cell> for e = 0..n_p-1
    let mut num = 0.0;
    for e in 0..n_p {
        let w = (n_o + e).max(n_p);
        let bra = cell.padded(w, e);
        let ket = pm.padded(w, 0);
        num += overlap_mps(&bra, &ket)?;
    }
    // ||P||^2 per cell: <P,P> + 2 sum_{d>=1} <P, shift_d P>
    let mut p2 = 0.0;
    for d in 0..n_p {
        let w = n_p + d;
        let a = pm.padded(w, 0);
        let b = pm.padded(w, d);
        let v = overlap_mps(&a, &b)?;
        p2 += if d == 0 { v } else { 2.0 * v };
    }
    if p2 <= 0.0 {
        return Ok(0.0);
    }
    Ok(num / p2.sqrt())
}

/// Coefficient-optimized diffusion mode: minimizes the form over the span of
/// cosine-weighted bond, h-field, and g-field vectors at fixed norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizedDiffusion {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub lambda: f64,
    #[serde(skip)]
    pub operator: Option<PauliSum>,
}

/// Optimizes `{a_i, b_i, c_i}` of the generalized diffusion mode so the local
/// form is minimal at unit norm. Basis vectors that are identically zero
/// (the i = 0 fields, and all fields when the coupling vanishes) are excluded.
pub fn optimized_diffusion_mode(params: IsingParams, n: usize) -> Result<OptimizedDiffusion> {
    if n < 2 {
        return Err(ProbeError::WindowTooSmall(n));
    }
    // (kind, site): kind 0 = bond a_i, 1 = h-field b_i, 2 = g-field c_i.
    let mut labels: Vec<(u8, usize)> = Vec::new();
    let mut vectors: Vec<PauliSum> = Vec::new();
    for i in 0..n - 1 {
        let mut p = PauliString::identity(n);
        p.set_letter(i, LETTER_Z);
        p.set_letter(i + 1, LETTER_Z);
        let s = PauliSum::term(p, re(bond_weight(i, n) * IsingParams::ZZ_COUPLING));
        labels.push((0, i));
        vectors.push(s);
    }
    for i in 0..n {
        let w = field_weight(i, n);
        if w != 0.0 && params.h != 0.0 {
            labels.push((1, i));
            vectors.push(PauliSum::term(PauliString::single(n, i, LETTER_Z), re(w * params.h)));
        }
        if w != 0.0 && params.g != 0.0 {
            labels.push((2, i));
            vectors.push(PauliSum::term(PauliString::single(n, i, LETTER_X), re(w * params.g)));
        }
    }
    // Drop numerically zero vectors (cos can underflow to exact zero only at
    // i = 0, but keep the check in case of pathological parameters).
    let mut keep: Vec<usize> = Vec::new();
    for (k, v) in vectors.iter().enumerate() {
        if hs_norm(v) > 1e-300 {
            keep.push(k);
        }
    }
    if keep.is_empty() {
        return Err(ProbeError::EmptyBasis);
    }

    let h_loc = build_h_loc(params, n);
    let z0 = PauliSum::term(PauliString::single(n, 0, LETTER_Z), re(1.0));
    let zr = PauliSum::term(PauliString::single(n, n - 1, LETTER_Z), re(1.0));
    let comms: Vec<[PauliSum; 3]> = keep
        .iter()
        .map(|&k| {
            let v = &vectors[k];
            [
                commutator(&h_loc, v).expect("window"),
                commutator(&z0, v).expect("window"),
                commutator(&zr, v).expect("window"),
            ]
        })
        .collect();

    let m = keep.len();
    let mut f = ndarray::Array2::<f64>::zeros((m, m));
    for a in 0..m {
        for b in 0..=a {
            let mut acc = 0.0;
            for t in 0..3 {
                acc += hs_inner(&comms[a][t], &comms[b][t]).expect("window").re;
            }
            f[[a, b]] = acc;
            f[[b, a]] = acc;
        }
    }
    // The basis vectors are mutually orthogonal Pauli words, so the Gram
    // matrix is diagonal.
    let norms: Vec<f64> = keep.iter().map(|&k| hs_norm(&vectors[k])).collect();
    for a in 0..m {
        for b in 0..m {
            f[[a, b]] /= norms[a] * norms[b];
        }
    }
    let (vals, vecs) = linalg::eigh(&f)?;
    let lambda = vals[0];
    let mut coeff = vec![0.0; labels.len()];
    for (col, &k) in keep.iter().enumerate() {
        coeff[k] = vecs[[col, 0]] / norms[col];
    }

    let mut op = PauliSum::new(n);
    for (k, v) in vectors.iter().enumerate() {
        if coeff[k] != 0.0 {
            op.add_sum(v, re(coeff[k]));
        }
    }
    let mut flat = coeff.clone();
    crate::exact::fix_sign(&mut flat);
    if flat != coeff {
        op = op.scaled(re(-1.0));
    }
    let coeff = flat;

    let mut a_out = vec![0.0; n - 1];
    let mut b_out = vec![0.0; n];
    let mut c_out = vec![0.0; n];
    for (k, &(kind, site)) in labels.iter().enumerate() {
        match kind {
            0 => a_out[site] = coeff[k],
            1 => b_out[site] = coeff[k],
            _ => c_out[site] = coeff[k],
        }
    }
    Ok(OptimizedDiffusion { a: a_out, b: b_out, c: c_out, lambda, operator: Some(op) })
}

/// Finite-difference log-log slopes over consecutive window sizes.
pub fn instant_slopes(points: &[(usize, f64)]) -> Result<Vec<SlopeRecord>> {
    for &(n, lam) in points {
        if lam <= 0.0 {
            return Err(ProbeError::NonPositiveLambda(n, lam));
        }
    }
    let mut sorted: Vec<(usize, f64)> = points.to_vec();
    sorted.sort_by_key(|&(n, _)| n);
    let mut out = Vec::new();
    for w in sorted.windows(2) {
        let (n1, l1) = w[0];
        let (n2, l2) = w[1];
        if n1 == n2 {
            continue;
        }
        let slope = (l2.ln() - l1.ln()) / ((n2 as f64).ln() - (n1 as f64).ln());
        out.push(SlopeRecord { n_low: n1, n_high: n2, slope });
    }
    Ok(out)
}

/// Finds the field `h*` where the larger of the two magnetization overlap
/// magnitudes first crosses `threshold` on a monotone grid.
///
/// Between grid points the crossing is located by linear interpolation; when
/// the curve is exactly zero below the crossing (a hard step), the grid point
/// itself is reported.
pub fn detect_transition(hs: &[f64], overlap_x: &[f64], overlap_z: &[f64], threshold: f64) -> Option<f64> {
    assert_eq!(hs.len(), overlap_x.len());
    assert_eq!(hs.len(), overlap_z.len());
    let f: Vec<f64> = overlap_x
        .iter()
        .zip(overlap_z)
        .map(|(x, z)| x.abs().max(z.abs()))
        .collect();
    for i in 0..hs.len() {
        if f[i] >= threshold {
            if i == 0 || f[i - 1] <= 1e-12 {
                return Some(hs[i]);
            }
            let (h0, h1) = (hs[i - 1], hs[i]);
            let (f0, f1) = (f[i - 1], f[i]);
            return Some(h0 + (h1 - h0) * (threshold - f0) / (f1 - f0));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(g: f64, h: f64) -> IsingParams {
        IsingParams::new(g, h).unwrap()
    }

    #[test]
    fn diffusion_weights_n2() {
        assert_abs_diff_eq!(bond_weight(0, 2), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(field_weight(0, 2), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(field_weight(1, 2), 1.0, epsilon = 1e-12);

        // n=2, h=0, g=1: pre-normalization 0.70711 (-ZZ) + 1.0 (IX)
        let raw = diffusion_mode_raw(params(1.0, 0.0), 2);
        assert_abs_diff_eq!(
            raw.coeff(&PauliString::parse("ZZ").unwrap()).re,
            -0.5f64.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(raw.coeff(&PauliString::parse("IX").unwrap()).re, 1.0, epsilon = 1e-12);
        let s = diffusion_mode(params(1.0, 0.0), 2).unwrap();
        assert_abs_diff_eq!(hs_norm(&s), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn flux_n2_free() {
        let s = energy_flux(params(0.0, 0.0), 2).unwrap();
        // bond + wrap coincide at n=2: -2 ZZ normalized to -ZZ
        assert_abs_diff_eq!(s.coeff(&PauliString::parse("ZZ").unwrap()).re, -1.0, epsilon = 1e-12);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn magnetization_normalization_and_orthogonality() {
        let z = magnetization(LETTER_Z, 4).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(z.coeff(&PauliString::single(4, i, LETTER_Z)).re, 0.5, epsilon = 1e-12);
        }
        let x = magnetization(LETTER_X, 4).unwrap();
        assert_abs_diff_eq!(overlap(&x, &z).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn ti_flux_is_periodic_hamiltonian() {
        let p = params(0.9, 0.2);
        let l = 11;
        let probe = ti_probe(ProbeTag::EnergyFlux, p, 4, l).unwrap();
        let h = normalized(crate::ising::build_hamiltonian(p, l, true).unwrap());
        let mut diff = probe.clone();
        diff.add_sum(&h, re(-1.0));
        assert!(crate::pauli::hs_norm_sq(&diff) < 1e-24);
    }

    #[test]
    fn ti_magnetization_is_global() {
        let probe = ti_probe(ProbeTag::MagnetizationZ, params(1.0, 0.0), 1, 5).unwrap();
        let m = normalized({
            let mut s = PauliSum::new(5);
            for i in 0..5 {
                s.add(PauliString::single(5, i, LETTER_Z), re(1.0));
            }
            s
        });
        let mut diff = probe.clone();
        diff.add_sum(&m, re(-1.0));
        assert!(crate::pauli::hs_norm_sq(&diff) < 1e-24);
    }

    #[test]
    fn probes_are_hermitian_traceless_unit() {
        let p = params(1.05, 0.1);
        for tag in ProbeTag::all() {
            let s = window_probe(tag, p, 5).unwrap();
            assert!(s.is_hermitian(1e-12));
            assert_abs_diff_eq!(s.ntr().re, 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(hs_norm(&s), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn optimized_diffusion_improves_on_plain() {
        let p = params(1.05, 0.1);
        let n = 6;
        let opt = optimized_diffusion_mode(p, n).unwrap();
        let plain = diffusion_mode(p, n).unwrap();
        let lam_plain = crate::exact::evaluate_lambda(&plain, p, n + 2).unwrap();
        let lam_opt_direct =
            crate::exact::evaluate_lambda(opt.operator.as_ref().unwrap(), p, n + 2).unwrap();
        assert!(opt.lambda <= lam_plain + 1e-10);
        assert_abs_diff_eq!(opt.lambda, lam_opt_direct, epsilon = 1e-9);
    }

    #[test]
    fn slopes_analytic() {
        let quad: Vec<(usize, f64)> = (4..10).map(|n| (n, 3.0 / (n * n) as f64)).collect();
        for s in instant_slopes(&quad).unwrap() {
            assert_abs_diff_eq!(s.slope, -2.0, epsilon = 1e-12);
        }
        let quart: Vec<(usize, f64)> = (4..10).map(|n| (n, 0.5 / (n * n * n * n) as f64)).collect();
        for s in instant_slopes(&quart).unwrap() {
            assert_abs_diff_eq!(s.slope, -4.0, epsilon = 1e-12);
        }
        let flat: Vec<(usize, f64)> = (4..10).map(|n| (n, 2.5)).collect();
        for s in instant_slopes(&flat).unwrap() {
            assert_abs_diff_eq!(s.slope, 0.0, epsilon = 1e-12);
        }
        assert!(instant_slopes(&[(3, 1.0), (4, 0.0)]).is_err());
    }

    #[test]
    fn transition_step_and_none() {
        let hs: Vec<f64> = (0..21).map(|i| i as f64 * 0.02).collect();
        let zeros = vec![0.0; hs.len()];
        assert_eq!(detect_transition(&hs, &zeros, &zeros, 0.05), None);

        // hard step at h = 0.4
        let step: Vec<f64> = hs.iter().map(|&h| if h >= 0.4 - 1e-12 { 1.0 } else { 0.0 }).collect();
        let found = detect_transition(&hs, &step, &zeros, 0.05).unwrap();
        assert_abs_diff_eq!(found, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn overlap_mps_routes_agree() {
        let p = params(1.05, 0.4);
        let n = 4;
        let caps = crate::exact::SolverCaps::default();
        let r = crate::exact::solve(&crate::exact::local_form(p, n, &caps).unwrap(), 7).unwrap();
        let o = r.to_pauli_sum(0.0).unwrap();
        let probe = diffusion_mode(p, n).unwrap();
        let direct = overlap(&o, &probe).unwrap();
        let mps = OperatorMps::from_vector(r.vector.as_ref().unwrap(), 64).unwrap();
        let via_mps = overlap_probe_mps(&mps, &probe).unwrap();
        assert_abs_diff_eq!(direct, via_mps, epsilon = 1e-9);
    }

    #[test]
    fn ti_overlap_routes_agree() {
        let p = params(1.05, 0.45);
        let n = 4;
        let l = 2 * n + 3;
        let caps = crate::exact::SolverCaps::default();
        let r = crate::exact::solve(&crate::exact::ti_form(p, n, &caps).unwrap(), 3).unwrap();
        let cell_vec = r.vector.as_ref().unwrap();
        // Dense route: build the full TI operator on l sites.
        let cell_sum = cell_vec.to_pauli_sum(0.0);
        let mut total = PauliSum::new(l);
        for i in 0..l {
            for (w, c) in cell_sum.terms() {
                total.add(w.embed(l, i, true).unwrap(), *c);
            }
        }
        for tag in [ProbeTag::MagnetizationZ, ProbeTag::EnergyFlux, ProbeTag::DiffusionMode] {
            let probe = ti_probe(tag, p, n, l).unwrap();
            let dense = overlap_normalized(&total, &probe).unwrap();
            // MPS route from the cell.
            let mut cell_gauged = vec![0.0; 3 << (2 * (n - 1))];
            for (idx, v) in cell_gauged.iter_mut().enumerate() {
                let word = PauliString::from_index(n, (idx / 3) * 4 + idx % 3 + 1);
                *v = cell_vec.get(&word);
            }
            let cell_mps = OperatorMps::from_cell_vector(&cell_gauged, n, 64).unwrap();
            let probe_cell = ti_probe_cell(tag, p, n).unwrap();
            let via_mps = overlap_ti_mps(&cell_mps, &probe_cell).unwrap();
            assert_abs_diff_eq!(dense, via_mps, epsilon = 1e-8);
        }
    }
}
