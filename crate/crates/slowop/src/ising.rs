//! The mixed-field Ising chain `H = -sum Z Z + h sum Z + g sum X` in every
//! representation the solvers need: Pauli sums, open windows, and the
//! bond-dimension-3 MPO.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{PauliString, PauliSum, LETTER_X, LETTER_Z};

#[derive(Debug, Error, PartialEq)]
pub enum IsingError {
    #[error("chain needs at least 2 sites, got {0}")]
    ChainTooShort(usize),
    #[error("couplings must be finite, got g={0}, h={1}")]
    NonFinite(f64, f64),
    #[error("MPO does not contract to the expected window Hamiltonian (max deviation {0:.3e})")]
    BadMpo(f64),
}

/// Transverse (`g`) and longitudinal (`h`) fields. The ZZ coupling is fixed at -1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    pub g: f64,
    pub h: f64,
}

impl IsingParams {
    pub const ZZ_COUPLING: f64 = -1.0;

    pub fn new(g: f64, h: f64) -> Result<Self, IsingError> {
        if !g.is_finite() || !h.is_finite() {
            return Err(IsingError::NonFinite(g, h));
        }
        Ok(IsingParams { g, h })
    }

    /// The chain is integrable on the loci g=0 (any h) and h=0 (any g).
    pub fn is_integrable(&self) -> bool {
        self.g == 0.0 || self.h == 0.0
    }
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Full-chain Hamiltonian on `l` sites. Periodic chains carry `l` bond terms,
/// open chains `l - 1`; zero couplings drop their terms entirely.
pub fn build_hamiltonian(params: IsingParams, l: usize, periodic: bool) -> Result<PauliSum, IsingError> {
    if l < 2 {
        return Err(IsingError::ChainTooShort(l));
    }
    let mut h = PauliSum::new(l);
    let bonds = if periodic { l } else { l - 1 };
    for i in 0..bonds {
        let mut p = PauliString::identity(l);
        p.set_letter(i, LETTER_Z);
        p.set_letter((i + 1) % l, LETTER_Z);
        h.add(p, re(IsingParams::ZZ_COUPLING));
    }
    for i in 0..l {
        if params.h != 0.0 {
            h.add(PauliString::single(l, i, LETTER_Z), re(params.h));
        }
        if params.g != 0.0 {
            h.add(PauliString::single(l, i, LETTER_X), re(params.g));
        }
    }
    Ok(h)
}

/// The part of the Hamiltonian supported on an open `n`-site window:
/// `n - 1` bond terms plus the `n` field terms.
pub fn build_h_loc(params: IsingParams, n: usize) -> PauliSum {
    let mut h = PauliSum::new(n);
    for i in 0..n.saturating_sub(1) {
        let mut p = PauliString::identity(n);
        p.set_letter(i, LETTER_Z);
        p.set_letter(i + 1, LETTER_Z);
        h.add(p, re(IsingParams::ZZ_COUPLING));
    }
    for i in 0..n {
        if params.h != 0.0 {
            h.add(PauliString::single(n, i, LETTER_Z), re(params.h));
        }
        if params.g != 0.0 {
            h.add(PauliString::single(n, i, LETTER_X), re(params.g));
        }
    }
    h
}

/// A single-site operator as real coefficients over `{I, X, Y, Z}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteOperator(pub [f64; 4]);

impl SiteOperator {
    pub fn identity() -> Self {
        SiteOperator([1.0, 0.0, 0.0, 0.0])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }
}

/// The window Hamiltonian as an MPO of bond dimension 3:
///
/// ```text
/// vL = (0, 0, 1),   M = | I            0     0 |,   vR = (1, 0, 0)^T
///                       | Z            0     0 |
///                       | h Z + g X   -Z     I |
/// ```
///
/// Contracting `vL · M^(0) · ... · M^(n-1) · vR` reproduces the window
/// Hamiltonian exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HamiltonianMpo {
    pub n: usize,
    pub vl: [f64; 3],
    pub vr: [f64; 3],
    /// One 3x3 operator-valued matrix per site.
    pub matrices: Vec<[[SiteOperator; 3]; 3]>,
}

pub const MPO_BOND_DIM: usize = 3;

/// Builds the bond-dimension-3 MPO of the `n`-site window Hamiltonian.
pub fn hamiltonian_mpo(params: IsingParams, n: usize) -> HamiltonianMpo {
    let zero = SiteOperator::default();
    let id = SiteOperator::identity();
    let z = SiteOperator([0.0, 0.0, 0.0, 1.0]);
    let minus_z = SiteOperator([0.0, 0.0, 0.0, -1.0]);
    let field = SiteOperator([0.0, params.g, 0.0, params.h]);
    let m = [
        [id, zero, zero],
        [z, zero, zero],
        [field, minus_z, id],
    ];
    HamiltonianMpo {
        n,
        vl: [0.0, 0.0, 1.0],
        vr: [1.0, 0.0, 0.0],
        matrices: vec![m; n],
    }
}

impl HamiltonianMpo {
    pub fn bond_dim(&self) -> usize {
        MPO_BOND_DIM
    }

    /// Contracts the MPO to an explicit Pauli sum on `n` sites.
    pub fn contract(&self) -> PauliSum {
        let n = self.n;
        // Row vector of operator-valued entries, extended site by site.
        let mut row: Vec<PauliSum> = self
            .vl
            .iter()
            .map(|&v| {
                let mut s = PauliSum::new(0);
                if v != 0.0 {
                    s.add(PauliString::identity(0), re(v));
                }
                s
            })
            .collect();
        for (site, m) in self.matrices.iter().enumerate() {
            let mut next: Vec<PauliSum> = (0..3).map(|_| PauliSum::new(site + 1)).collect();
            for (k, nk) in next.iter_mut().enumerate() {
                for j in 0..3 {
                    let block = &m[j][k];
                    if block.is_zero() {
                        continue;
                    }
                    for (letter, &coeff) in block.0.iter().enumerate() {
                        if coeff == 0.0 {
                            continue;
                        }
                        for (p, c) in row[j].terms() {
                            let mut ext = p.embed(site + 1, 0, false).expect("grows by one site");
                            ext.set_letter(site, letter as u8);
                            nk.add(ext, c * re(coeff));
                        }
                    }
                }
            }
            row = next;
        }
        let mut out = PauliSum::new(n);
        for (k, &v) in self.vr.iter().enumerate() {
            if v != 0.0 {
                out.add_sum(&row[k], re(v));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{hs_norm_sq, text};
    use approx::assert_abs_diff_eq;

    fn params(g: f64, h: f64) -> IsingParams {
        IsingParams::new(g, h).unwrap()
    }

    #[test]
    fn open_chain_free_of_fields() {
        let h = build_hamiltonian(params(0.0, 0.0), 3, false).unwrap();
        let expect = text::parse("-1 ZZI\n-1 IZZ\n").unwrap();
        assert_eq!(h, expect);
    }

    #[test]
    fn two_site_periodic_doubles_the_bond() {
        let h = build_hamiltonian(params(1.0, 0.0), 2, true).unwrap();
        let expect = text::parse("-2 ZZ\n1 XI\n1 IX\n").unwrap();
        assert_eq!(h, expect);
    }

    #[test]
    fn single_spin_spectrum() {
        // eigenvalues of h Z + g X are +-sqrt(g^2 + h^2)
        let (g, h) = (0.8, -0.3);
        let hl = build_h_loc(params(g, h), 1);
        let m = hl.to_dense().unwrap();
        let tr = (m[[0, 0]] + m[[1, 1]]).re;
        let det = (m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]]).re;
        assert_abs_diff_eq!(tr, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(det, -(g * g + h * h), epsilon = 1e-14);
    }

    #[test]
    fn h_loc_equals_open_chain() {
        for n in 2..=5 {
            let a = build_h_loc(params(1.05, 0.1), n);
            let b = build_hamiltonian(params(1.05, 0.1), n, false).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn h_loc_single_site() {
        let hl = build_h_loc(params(0.7, 0.2), 1);
        let expect = text::parse("0.7 X\n0.2 Z\n").unwrap();
        assert_eq!(hl, expect);
    }

    #[test]
    fn chain_too_short() {
        assert!(matches!(
            build_hamiltonian(params(1.0, 0.0), 1, false),
            Err(IsingError::ChainTooShort(1))
        ));
    }

    #[test]
    fn mpo_matches_h_loc_exactly() {
        for n in 1..=8 {
            let p = params(1.05, 0.1);
            let mpo = hamiltonian_mpo(p, n);
            let contracted = mpo.contract();
            let mut diff = contracted.clone();
            diff.add_sum(&build_h_loc(p, n), re(-1.0));
            assert!(hs_norm_sq(&diff) < 1e-28, "n={n}");
        }
    }

    #[test]
    fn mpo_single_site_is_the_field() {
        let mpo = hamiltonian_mpo(params(0.4, 1.05), 1);
        let s = mpo.contract();
        let expect = text::parse("0.4 X\n1.05 Z\n").unwrap();
        assert_eq!(s, expect);
    }

    #[test]
    fn spin_flip_symmetry_at_zero_h() {
        // [H, prod_i X_i] = 0 when h = 0
        let l = 5;
        let h = build_hamiltonian(params(0.9, 0.0), l, true).unwrap();
        let flip = PauliSum::term(PauliString::from_letters(&[1; 5]), re(1.0));
        let c = crate::pauli::commutator(&h, &flip).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn sigma_z_conserved_at_zero_g() {
        let l = 4;
        let h = build_hamiltonian(params(0.0, 0.7), l, true).unwrap();
        for i in 0..l {
            let z = PauliSum::term(PauliString::single(l, i, LETTER_Z), re(1.0));
            assert!(crate::pauli::commutator(&h, &z).unwrap().is_empty());
        }
    }
}
