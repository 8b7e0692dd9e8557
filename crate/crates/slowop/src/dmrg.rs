//! Variational minimization of `-ntr([H,O]^2)` over operator MPSs by one-site
//! DMRG sweeps: an MPO-based pipeline for the local definition and a
//! global-contraction pipeline for the translation-invariant one.
//!
//! The commutator map factorizes per site in the Pauli-coefficient basis.
//! Writing left multiplication by `sigma_p` as `L_p = S_p + i T_p` with real
//! `S_p = {sigma_p, .}/2` and `T_p`, the map `G = -i [H_loc, .]` is a real
//! nearest-neighbor superoperator: single-site field blocks `2h T_z + 2g T_x`
//! and bond blocks `-2 (S_z (x) T_z + T_z (x) S_z)`. `G` has a bond-4 MPO and
//! the quadratic form `||[H_loc, O]||^2 = O^T G^T G O` a bond-16 one. The two
//! window-boundary terms enter as single-site conjugation maps and the trace
//! conditions as penalty MPOs.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exact::{Definition, SlowestResult};
use crate::ising::IsingParams;
use crate::linalg::{self, LanczosConfig};
use crate::mps::{overlap_mps, Gauge, OperatorMps};
use crate::pauli::{PauliString, PauliSum};

#[derive(Debug, Error)]
pub enum DmrgError {
    #[error("schedule bond dimensions must be strictly increasing and tolerances positive")]
    BadSchedule,
    #[error("window too small: {0}")]
    WindowTooSmall(usize),
    #[error(transparent)]
    Mps(#[from] crate::mps::MpsError),
    #[error("eigensolver failed: {0}")]
    Linalg(#[from] linalg::LinalgError),
    #[error("penalty residual {0:.3e} still above threshold after weight escalation")]
    PenaltyStuck(f64),
}

pub type Result<T> = std::result::Result<T, DmrgError>;

/// Bond-dimension schedule and stopping rules.
///
/// Sweeps at a fixed bond dimension stop when the relative energy change per
/// sweep drops below `inner_tol`; the schedule stops when the relative change
/// between consecutive bond dimensions drops below `outer_tol`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub bond_dims: Vec<usize>,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub max_sweeps: usize,
}

impl SweepSchedule {
    pub fn validate(&self) -> Result<()> {
        let increasing = self.bond_dims.windows(2).all(|w| w[0] < w[1]);
        if self.bond_dims.is_empty() || !increasing || self.inner_tol <= 0.0 || self.outer_tol <= 0.0 {
            return Err(DmrgError::BadSchedule);
        }
        Ok(())
    }

    /// Paper defaults for the local pipeline: D = 8, 16, ..., 1024,
    /// inner relative error 1e-7, outer stop 0.5%.
    pub fn default_local() -> Self {
        SweepSchedule {
            bond_dims: vec![8, 16, 32, 64, 128, 256, 512, 1024],
            inner_tol: 1e-7,
            outer_tol: 5e-3,
            max_sweeps: 100,
        }
    }

    /// Paper defaults for the TI pipeline: D = 64, 128, ..., 1024, 1e-4.
    pub fn default_ti() -> Self {
        SweepSchedule {
            bond_dims: vec![64, 128, 256, 512, 1024],
            inner_tol: 1e-4,
            outer_tol: 5e-3,
            max_sweeps: 100,
        }
    }

    /// Caps the schedule at `d_max` (keeps at least the smallest stage).
    pub fn capped(mut self, d_max: usize) -> Self {
        self.bond_dims.retain(|&d| d <= d_max);
        if self.bond_dims.is_empty() {
            self.bond_dims.push(d_max);
        }
        self
    }
}

/// One row of the run log: per-sweep convergence data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub bond_dim: usize,
    pub sweep: usize,
    pub lambda: f64,
    pub penalty_residual: f64,
    pub instability: bool,
}

// ---------------------------------------------------------------------------
// Superoperator site blocks and MPOs
// ---------------------------------------------------------------------------

/// Real MPO: per-site tensors of shape (wl, phys_out, phys_in, wr); boundary
/// bond dimensions are 1.
#[derive(Clone, Debug)]
pub struct Mpo {
    pub tensors: Vec<Array4<f64>>,
}

impl Mpo {
    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn max_bond(&self) -> usize {
        self.tensors.iter().map(|t| t.dim().3).max().unwrap_or(1)
    }
}

/// `S_p = {sigma_p, .} / 2` in the (I, X, Y, Z) coefficient basis.
fn s_mat(letter: u8) -> Array2<f64> {
    let mut m = Array2::zeros((4, 4));
    let l = letter as usize;
    m[[0, l]] = 1.0;
    m[[l, 0]] = 1.0;
    m
}

/// `T_p` with `L_p = S_p + i T_p`; the commutator map is `-i [sigma_p, .] = 2 T_p`.
fn t_mat(letter: u8) -> Array2<f64> {
    let mut m = Array2::zeros((4, 4));
    match letter {
        1 => {
            // x: sigma_x sigma_y = i sigma_z, sigma_x sigma_z = -i sigma_y
            m[[3, 2]] = 1.0;
            m[[2, 3]] = -1.0;
        }
        2 => {
            // y: sigma_y sigma_z = i sigma_x, sigma_y sigma_x = -i sigma_z
            m[[1, 3]] = 1.0;
            m[[3, 1]] = -1.0;
        }
        3 => {
            // z: sigma_z sigma_x = i sigma_y, sigma_z sigma_y = -i sigma_x
            m[[2, 1]] = 1.0;
            m[[1, 2]] = -1.0;
        }
        _ => unreachable!(),
    }
    m
}

fn id4() -> Array2<f64> {
    Array2::eye(4)
}

/// Bond-4 MPO of `G = -i [H_open(window), .]` on `n` sites.
///
/// Automaton states: 0 done, 1 awaiting the T half of a bond, 2 awaiting the
/// S half, 3 initial.
fn g_mpo(params: IsingParams, n: usize) -> Mpo {
    let field = {
        let mut f = Array2::<f64>::zeros((4, 4));
        f.scaled_add(2.0 * params.h, &t_mat(3));
        f.scaled_add(2.0 * params.g, &t_mat(1));
        f
    };
    let zz = IsingParams::ZZ_COUPLING;
    let place = |w: &mut Array4<f64>, r: usize, c: usize, m: &Array2<f64>| {
        for ko in 0..4 {
            for ki in 0..4 {
                w[[r, ko, ki, c]] = m[[ko, ki]];
            }
        }
    };
    let mut site = Array4::<f64>::zeros((4, 4, 4, 4));
    place(&mut site, 0, 0, &id4());
    place(&mut site, 1, 0, &t_mat(3));
    place(&mut site, 2, 0, &s_mat(3));
    place(&mut site, 3, 0, &field);
    place(&mut site, 3, 1, &s_mat(3).mapv(|x| 2.0 * zz * x));
    place(&mut site, 3, 2, &t_mat(3).mapv(|x| 2.0 * zz * x));
    place(&mut site, 3, 3, &id4());

    let mut tensors = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = site.clone();
        if i == 0 {
            t = t.slice(ndarray::s![3..4, .., .., ..]).to_owned();
        }
        if i == n - 1 {
            t = t.slice(ndarray::s![.., .., .., 0..1]).to_owned();
        }
        tensors.push(t);
    }
    Mpo { tensors }
}

/// MPO with phys indices transposed per block (represents the transpose map).
fn mpo_transpose(a: &Mpo) -> Mpo {
    let tensors = a
        .tensors
        .iter()
        .map(|t| t.view().permuted_axes([0, 2, 1, 3]).to_owned())
        .collect();
    Mpo { tensors }
}

/// Site-wise MPO product `a · b` (a applied second).
fn mpo_product(a: &Mpo, b: &Mpo) -> Mpo {
    let tensors = a
        .tensors
        .iter()
        .zip(&b.tensors)
        .map(|(ta, tb)| {
            let (al, p, _, ar) = ta.dim();
            let (bl, _, _, br) = tb.dim();
            let mut out = Array4::<f64>::zeros((al * bl, p, p, ar * br));
            for ia in 0..al {
                for ja in 0..ar {
                    for ib in 0..bl {
                        for jb in 0..br {
                            for ko in 0..p {
                                for ki in 0..p {
                                    let mut acc = 0.0;
                                    for m in 0..p {
                                        acc += ta[[ia, ko, m, ja]] * tb[[ib, m, ki, jb]];
                                    }
                                    if acc != 0.0 {
                                        out[[ia * bl + ib, ko, ki, ja * br + jb]] = acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    Mpo { tensors }
}

/// Quadratic-form MPO `G^T G` (bond 16) for `||[H_open, O]||^2` on `n` sites.
fn form_mpo(params: IsingParams, n: usize) -> Mpo {
    let g = g_mpo(params, n);
    mpo_product(&mpo_transpose(&g), &g)
}

/// Bond-1 MPO that is the identity except for `block` at one site.
fn site_term_mpo(n: usize, site: usize, block: &Array2<f64>) -> Mpo {
    let tensors = (0..n)
        .map(|i| {
            let m = if i == site { block.clone() } else { id4() };
            let mut t = Array4::<f64>::zeros((1, 4, 4, 1));
            for ko in 0..4 {
                for ki in 0..4 {
                    t[[0, ko, ki, 0]] = m[[ko, ki]];
                }
            }
            t
        })
        .collect();
    Mpo { tensors }
}

/// The boundary conjugation map `(G_z)^T G_z = 4 diag(0, 1, 1, 0)`; this is
/// the Pauli-space form of `2 - 2 ntr(O sigma_z O sigma_z)` on unit-norm O.
fn boundary_block() -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((4, 4));
    m[[1, 1]] = 4.0;
    m[[2, 2]] = 4.0;
    m
}

/// Bond-1 projector onto the all-identity word (the `|ntr O|^2` penalty).
fn identity_projector_mpo(n: usize) -> Mpo {
    let mut block = Array2::<f64>::zeros((4, 4));
    block[[0, 0]] = 1.0;
    let tensors = (0..n)
        .map(|i| {
            let _ = i;
            let mut t = Array4::<f64>::zeros((1, 4, 4, 1));
            t[[0, 0, 0, 0]] = block[[0, 0]];
            t
        })
        .collect();
    Mpo { tensors }
}

/// Rank-one MPO `|V><V|` from a (small) MPS representation of `V`.
fn outer_product_mpo(v: &OperatorMps) -> Mpo {
    let tensors = (0..v.n_sites())
        .map(|i| {
            let t = v.tensor(i);
            let (dl, p, dr) = t.dim();
            let mut out = Array4::<f64>::zeros((dl * dl, p, p, dr * dr));
            for a in 0..dl {
                for b in 0..dl {
                    for ko in 0..p {
                        for ki in 0..p {
                            for a2 in 0..dr {
                                for b2 in 0..dr {
                                    out[[a * dl + b, ko, ki, a2 * dr + b2]] = t[[a, ko, a2]] * t[[b, ki, b2]];
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    Mpo { tensors }
}

// ---------------------------------------------------------------------------
// Environment contraction primitives
// ---------------------------------------------------------------------------

fn to_mat(a: &Array3<f64>, split: usize) -> Array2<f64> {
    let d = a.dim();
    let dims = [d.0, d.1, d.2];
    let rows: usize = dims[..split].iter().product();
    let cols: usize = dims[split..].iter().product();
    a.to_owned().into_shape((rows, cols)).expect("reshape")
}

/// Extends a left environment over one site.
/// e: (Al, Wl, Bl), a: (Al, Ko, Al2), w: (Wl, Ko, Ki, Wr), b: (Bl, Ki, Bl2)
/// -> (Al2, Wr, Bl2)
fn env_left_step(e: &Array3<f64>, a: &Array3<f64>, w: &Array4<f64>, b: &Array3<f64>) -> Array3<f64> {
    let (_al, wl, bl) = e.dim();
    let (_, ko, al2) = a.dim();
    let (_, _, ki, wr) = w.dim();
    let (_, _, bl2) = b.dim();
    // T1(wl*bl, ko*al2) = e^T(al -> wl*bl) . a(al, ko*al2)
    let em = to_mat(e, 1); // (al, wl*bl)
    let am = to_mat(a, 1); // (al, ko*al2)
    let t1 = em.t().dot(&am); // (wl*bl, ko*al2)
    // T2(bl*al2, ki*wr) = T1 permuted (bl, al2, wl, ko) . w (wl*ko, ki*wr)
    let t1 = t1
        .into_shape((wl, bl, ko, al2))
        .expect("t1 shape")
        .permuted_axes([1, 3, 0, 2])
        .as_standard_layout()
        .to_owned()
        .into_shape((bl * al2, wl * ko))
        .expect("t1 mat");
    let wm = w.to_owned().into_shape((wl * ko, ki * wr)).expect("w mat");
    let t2 = t1.dot(&wm); // (bl*al2, ki*wr)
    // out(al2*wr, bl2) = T2 permuted (al2, wr, bl, ki) . b (bl*ki, bl2)
    let t2 = t2
        .into_shape((bl, al2, ki, wr))
        .expect("t2 shape")
        .permuted_axes([1, 3, 0, 2])
        .as_standard_layout()
        .to_owned()
        .into_shape((al2 * wr, bl * ki))
        .expect("t2 mat");
    let bm = to_mat(b, 2); // (bl*ki, bl2)
    t2.dot(&bm).into_shape((al2, wr, bl2)).expect("env")
}

/// Extends a right environment over one site.
/// e: (Ar, Wr, Br) covering sites to the right; a: (Al, Ko, Ar),
/// w: (Wl, Ko, Ki, Wr), b: (Bl, Ki, Br) -> (Al, Wl, Bl)
fn env_right_step(e: &Array3<f64>, a: &Array3<f64>, w: &Array4<f64>, b: &Array3<f64>) -> Array3<f64> {
    let (_ar, wr, br) = e.dim();
    let (al, ko, _) = a.dim();
    let (wl, _, ki, _) = w.dim();
    let (bl, _, _) = b.dim();
    // T1(al*ko, wr*br) = a (al*ko, ar) . e (ar, wr*br)
    let am = to_mat(a, 2); // (al*ko, ar)
    let em = to_mat(e, 1); // (ar, wr*br)
    let t1 = am.dot(&em); // (al*ko, wr*br)
    // T2(al*br, wl*ki) = T1 permuted (al, br, ko, wr) . w permuted (ko*wr, wl*ki)
    let t1 = t1
        .into_shape((al, ko, wr, br))
        .expect("t1 shape")
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .to_owned()
        .into_shape((al * br, ko * wr))
        .expect("t1 mat");
    let wm = w
        .view()
        .permuted_axes([1, 3, 0, 2])
        .as_standard_layout()
        .to_owned()
        .into_shape((ko * wr, wl * ki))
        .expect("w mat");
    let t2 = t1.dot(&wm); // (al*br, wl*ki)
    // out(al*wl, bl) = T2 permuted (al, wl, ki, br) . b permuted (ki*br, bl)
    let t2 = t2
        .into_shape((al, br, wl, ki))
        .expect("t2 shape")
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .to_owned()
        .into_shape((al * wl, ki * br))
        .expect("t2 mat");
    let bm = b
        .view()
        .permuted_axes([1, 2, 0])
        .as_standard_layout()
        .to_owned()
        .into_shape((ki * br, bl))
        .expect("b mat");
    t2.dot(&bm).into_shape((al, wl, bl)).expect("env")
}

/// One sandwich term with the v-independent factors pre-permuted, so a
/// Lanczos iteration costs three GEMMs plus two intermediate reshuffles.
struct PreparedSite {
    elm: Array2<f64>,     // (al*wl, bl)
    wm: Array2<f64>,      // (wl*ki, ko*wr)
    erm: Array2<f64>,     // (wr*br, ar)
    al: usize,
    wl: usize,
    ko: usize,
    ki: usize,
    wr: usize,
    ar: usize,
    br: usize,
    weight: f64,
}

impl PreparedSite {
    fn new(el: &Array3<f64>, w: &Array4<f64>, er: &Array3<f64>, weight: f64) -> Self {
        let (al, wl, _bl) = el.dim();
        let (_, ko, ki, wr) = w.dim();
        let (ar, _, br) = er.dim();
        let elm = to_mat(el, 2);
        let wm = w
            .view()
            .permuted_axes([0, 2, 1, 3])
            .as_standard_layout()
            .to_owned()
            .into_shape((wl * ki, ko * wr))
            .expect("w mat");
        let erm = er
            .view()
            .permuted_axes([1, 2, 0])
            .as_standard_layout()
            .to_owned()
            .into_shape((wr * br, ar))
            .expect("er mat");
        PreparedSite { elm, wm, erm, al, wl, ko, ki, wr, ar, br, weight }
    }

    /// v: (Bl, Ki, Br) -> (Al, Ko, Ar), scaled by `weight`.
    fn apply_into(&self, v: &Array3<f64>, out: &mut Array3<f64>) {
        let (al, wl, ko, ki, wr, ar, br) = (self.al, self.wl, self.ko, self.ki, self.wr, self.ar, self.br);
        let vm = to_mat(v, 1); // (bl, ki*br)
        let x1 = self.elm.dot(&vm); // (al*wl, ki*br)
        let x1 = x1
            .into_shape((al, wl, ki, br))
            .expect("x1 shape")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned()
            .into_shape((al * br, wl * ki))
            .expect("x1 mat");
        let x2 = x1.dot(&self.wm); // (al*br, ko*wr)
        let x2 = x2
            .into_shape((al, br, ko, wr))
            .expect("x2 shape")
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_shape((al * ko, wr * br))
            .expect("x2 mat");
        let res = x2.dot(&self.erm).into_shape((al, ko, ar)).expect("out");
        out.scaled_add(self.weight, &res);
    }
}

/// One-site effective application: input on the ket slot, output on the bra
/// slot. el: (Al, Wl, Bl), w: (Wl, Ko, Ki, Wr), er: (Ar, Wr, Br),
/// v: (Bl, Ki, Br) -> (Al, Ko, Ar)
fn site_apply(el: &Array3<f64>, w: &Array4<f64>, er: &Array3<f64>, v: &Array3<f64>) -> Array3<f64> {
    let prep = PreparedSite::new(el, w, er, 1.0);
    let (al, _, _) = el.dim();
    let (_, ko, _, _) = w.dim();
    let (ar, _, _) = er.dim();
    let mut out = Array3::<f64>::zeros((al, ko, ar));
    prep.apply_into(v, &mut out);
    out
}

/// Full sandwich `<bra| MPO |ket>` over equal-length tensor lists.
fn sandwich(bra: &[Array3<f64>], mpo: &Mpo, ket: &[Array3<f64>]) -> f64 {
    let mut e = Array3::<f64>::ones((1, 1, 1));
    for ((a, w), b) in bra.iter().zip(&mpo.tensors).zip(ket) {
        e = env_left_step(&e, a, w, b);
    }
    e[[0, 0, 0]]
}

// ---------------------------------------------------------------------------
// Effective forms
// ---------------------------------------------------------------------------

/// The quadratic form in a shape DMRG can sweep over.
pub enum EffectiveForm {
    Local(LocalEffective),
    Ti(TiEffective),
}

/// Local definition: `||[H_loc,O]||^2` as a bond-16 MPO, the two boundary
/// conjugation terms, and the identity-trace penalty projector.
pub struct LocalEffective {
    pub n: usize,
    pub params: IsingParams,
    form: Mpo,
    boundary_left: Mpo,
    boundary_right: Mpo,
    penalty: Mpo,
}

/// TI definition: one form MPO per relative cell shift `d` on the minimal
/// window of `n + 2 + d` sites, plus the `|ntr(H O)|^2` penalty on the cell.
pub struct TiEffective {
    pub n: usize,
    pub params: IsingParams,
    /// f_windows[d] lives on `n + 2 + d` sites.
    f_windows: Vec<Mpo>,
    penalty: Mpo,
    /// The raw `ntr(H O)` functional as a small MPS (for residual reporting).
    constraint: OperatorMps,
}

/// Builds the local-definition effective form on `n >= 2` sites.
pub fn build_local_effective(params: IsingParams, n: usize) -> Result<EffectiveForm> {
    if n < 2 {
        return Err(DmrgError::WindowTooSmall(n));
    }
    Ok(EffectiveForm::Local(LocalEffective {
        n,
        params,
        form: form_mpo(params, n),
        boundary_left: site_term_mpo(n, 0, &boundary_block()),
        boundary_right: site_term_mpo(n, n - 1, &boundary_block()),
        penalty: identity_projector_mpo(n),
    }))
}

/// The `ntr(H O)` functional on a gauged cell, as a Pauli sum.
fn ti_constraint_sum(params: IsingParams, n: usize) -> PauliSum {
    let mut v = PauliSum::new(n);
    let c = |x: f64| num_complex::Complex64::new(x, 0.0);
    if n >= 2 {
        let mut zz = PauliString::identity(n);
        zz.set_letter(0, 3);
        zz.set_letter(1, 3);
        v.add(zz, c(IsingParams::ZZ_COUPLING));
    }
    if params.h != 0.0 {
        v.add(PauliString::single(n, 0, 3), c(params.h));
    }
    if params.g != 0.0 {
        v.add(PauliString::single(n, 0, 1), c(params.g));
    }
    v
}

/// Builds the TI effective form on `n >= 2` sites.
pub fn build_ti_effective(params: IsingParams, n: usize) -> Result<EffectiveForm> {
    if n < 2 {
        return Err(DmrgError::WindowTooSmall(n));
    }
    let f_windows = (0..=n + 1).map(|d| form_mpo(params, n + 2 + d)).collect();
    let constraint = OperatorMps::from_pauli_sum(&ti_constraint_sum(params, n), 8)?;
    let penalty = outer_product_mpo(&constraint);
    Ok(EffectiveForm::Ti(TiEffective { n, params, f_windows, penalty, constraint }))
}

fn padded_tensors(cell: &OperatorMps, window: usize, offset: usize) -> Vec<Array3<f64>> {
    let padded = cell.padded(window, offset);
    (0..window).map(|i| padded.tensor(i).clone()).collect()
}

impl EffectiveForm {
    pub fn window(&self) -> usize {
        match self {
            EffectiveForm::Local(f) => f.n,
            EffectiveForm::Ti(f) => f.n,
        }
    }

    pub fn definition(&self) -> Definition {
        match self {
            EffectiveForm::Local(_) => Definition::Local,
            EffectiveForm::Ti(_) => Definition::TranslationInvariant,
        }
    }

    pub fn params(&self) -> IsingParams {
        match self {
            EffectiveForm::Local(f) => f.params,
            EffectiveForm::Ti(f) => f.params,
        }
    }

    /// The form value `-ntr([H,O]^2)` on an MPS (penalties excluded).
    pub fn value(&self, mps: &OperatorMps) -> f64 {
        match self {
            EffectiveForm::Local(f) => {
                let ts: Vec<Array3<f64>> = (0..f.n).map(|i| mps.tensor(i).clone()).collect();
                let ts_p: Vec<Array3<f64>>;
                let ts_ref = if mps.gauge() == Gauge::Local {
                    &ts
                } else {
                    ts_p = (0..f.n).map(|i| mps.promoted().tensor(i).clone()).collect();
                    &ts_p
                };
                sandwich(ts_ref, &f.form, ts_ref)
                    + sandwich(ts_ref, &f.boundary_left, ts_ref)
                    + sandwich(ts_ref, &f.boundary_right, ts_ref)
            }
            EffectiveForm::Ti(f) => {
                let mut total = 0.0;
                for d in 0..=f.n + 1 {
                    let w = f.n + 2 + d;
                    let bra = padded_tensors(mps, w, 1);
                    let ket = padded_tensors(mps, w, 1 + d);
                    let v = sandwich(&bra, &f.f_windows[d], &ket);
                    total += if d == 0 { v } else { 2.0 * v };
                }
                total
            }
        }
    }

    /// Unweighted penalty value: `(ntr O)^2` for local, `(ntr H O)^2` for TI.
    pub fn penalty_value(&self, mps: &OperatorMps) -> f64 {
        match self {
            EffectiveForm::Local(_) => {
                let id = OperatorMps::product_string(&PauliString::identity(self.window()), 1.0);
                let c = overlap_mps(mps, &id).unwrap_or(0.0);
                c * c
            }
            EffectiveForm::Ti(f) => {
                let c = overlap_mps(mps, &f.constraint).unwrap_or(0.0);
                c * c
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Sweeping machinery
// ---------------------------------------------------------------------------

/// Environment bookkeeping for one standard (bra = ket) MPO sandwich.
struct TermEnvs {
    mpo: Mpo,
    left: Vec<Option<Array3<f64>>>,
    right: Vec<Option<Array3<f64>>>,
    weight: f64,
}

impl TermEnvs {
    fn new(mpo: Mpo, n: usize, weight: f64) -> Self {
        let mut left = vec![None; n + 1];
        let mut right = vec![None; n + 1];
        left[0] = Some(Array3::ones((1, 1, 1)));
        right[n] = Some(Array3::ones((1, 1, 1)));
        TermEnvs { mpo, left, right, weight }
    }

    fn rebuild_right(&mut self, tensors: &[Array3<f64>]) {
        let n = tensors.len();
        for i in (0..n).rev() {
            let e = self.right[i + 1].as_ref().expect("right env");
            self.right[i] = Some(env_right_step(e, &tensors[i], &self.mpo.tensors[i], &tensors[i]));
        }
    }

    fn extend_left(&mut self, i: usize, t: &Array3<f64>) {
        let e = self.left[i].as_ref().expect("left env");
        self.left[i + 1] = Some(env_left_step(e, t, &self.mpo.tensors[i], t));
    }

    fn extend_right(&mut self, i: usize, t: &Array3<f64>) {
        let e = self.right[i + 1].as_ref().expect("right env");
        self.right[i] = Some(env_right_step(e, t, &self.mpo.tensors[i], t));
    }
}

/// Injects a phys-3 tensor into the 4-letter space (zero identity slot).
fn promote_phys(v: &Array3<f64>) -> Array3<f64> {
    let (dl, p, dr) = v.dim();
    if p == 4 {
        return v.clone();
    }
    let mut out = Array3::<f64>::zeros((dl, 4, dr));
    for a in 0..dl {
        for k in 0..3 {
            for b in 0..dr {
                out[[a, k + 1, b]] = v[[a, k, b]];
            }
        }
    }
    out
}

fn restrict_phys(v: &Array3<f64>, p: usize) -> Array3<f64> {
    if p == 4 {
        return v.clone();
    }
    v.slice(ndarray::s![.., 1..4, ..]).to_owned()
}

/// Solves the local site problem given an `apply` closure operating on
/// flattened tensors. Returns (eigenvalue, tensor, residual).
fn solve_site<F>(
    shape: (usize, usize, usize),
    mut apply: F,
    warm: &Array3<f64>,
    rng: &mut ChaCha20Rng,
    tol: f64,
) -> Result<(f64, Array3<f64>, f64)>
where
    F: FnMut(&Array3<f64>) -> Array3<f64>,
{
    let (dl, p, dr) = shape;
    let dim = dl * p * dr;
    let to_tensor = |v: &[f64]| -> Array3<f64> {
        Array3::from_shape_vec(shape, v.to_vec()).expect("site tensor")
    };
    if dim <= 96 {
        let mut m = Array2::<f64>::zeros((dim, dim));
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            let out = apply(&to_tensor(&e));
            e[j] = 0.0;
            for (i2, x) in out.iter().enumerate() {
                m[[i2, j]] = *x;
            }
        }
        // Symmetrize against roundoff.
        let m = (&m + &m.t()) * 0.5;
        let (vals, vecs) = linalg::eigh(&m)?;
        let v: Vec<f64> = (0..dim).map(|i| vecs[[i, 0]]).collect();
        let t = to_tensor(&v);
        Ok((vals[0], t, 0.0))
    } else {
        let warm_flat: Vec<f64> = warm.iter().cloned().collect();
        let cfg = LanczosConfig { max_subspace: 30.min(dim), max_restarts: 1, tol };
        let out = linalg::lanczos_smallest(
            |x, y| {
                let t = to_tensor(x);
                let r = apply(&t);
                y.copy_from_slice(r.as_slice().expect("contiguous"));
            },
            dim,
            Some(&warm_flat),
            &[],
            &cfg,
            rng,
        )?;
        let t = to_tensor(&out.vector);
        Ok((out.value, t, out.residual))
    }
}

fn normalize_tensor(t: &mut Array3<f64>) {
    let n = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        t.mapv_inplace(|x| x / n);
    }
}

/// Grows every bond of `mps` toward `d_new` by zero-padding plus a small
/// seeded perturbation, then re-canonicalizes at site 0.
fn grow_bonds(mps: &OperatorMps, d_new: usize, rng: &mut ChaCha20Rng) -> Result<OperatorMps> {
    let n = mps.n_sites();
    let mut caps = vec![1usize; n + 1];
    let mut left = 1usize;
    for i in 0..n {
        left = left.saturating_mul(mps.phys_dim(i)).min(1 << 30);
        caps[i + 1] = left.min(d_new);
    }
    let mut right = 1usize;
    for i in (0..n).rev() {
        right = right.saturating_mul(mps.phys_dim(i)).min(1 << 30);
        caps[i] = caps[i].min(right).min(if i == 0 { 1 } else { d_new });
    }
    caps[n] = 1;

    let dims = mps.bond_dims();
    let mut out = mps.clone();
    for i in 0..n {
        let (dl, p, dr) = out.tensor(i).dim();
        let (tl, tr) = (caps[i].max(dl), caps[i + 1].max(dr));
        if tl == dl && tr == dr {
            continue;
        }
        let old = out.tensor(i).clone();
        let rms = (old.iter().map(|x| x * x).sum::<f64>() / old.len() as f64).sqrt();
        let noise = 1e-3 * rms.max(1e-12);
        let mut t = Array3::<f64>::zeros((tl, p, tr));
        for a in 0..tl {
            for k in 0..p {
                for b in 0..tr {
                    t[[a, k, b]] = if a < dl && b < dr {
                        old[[a, k, b]]
                    } else {
                        noise * (rng.gen::<f64>() * 2.0 - 1.0)
                    };
                }
            }
        }
        out.set_tensor(i, t);
    }
    let _ = dims;
    out.normalized(0).map_err(Into::into)
}

/// Outcome of a DMRG minimization.
pub struct DmrgOutcome {
    pub result: SlowestResult,
    pub mps: OperatorMps,
    pub log: Vec<RunLogEntry>,
    pub converged: bool,
}

/// One-site DMRG minimization of an effective form under a sweep schedule.
///
/// Starts from seeded random tensors, grows the bond dimension by schedule,
/// and stops when the relative energy change between bond dimensions falls
/// below the schedule's outer tolerance. Penalty weights follow
/// `10 * (lambda_estimate + 1)` and escalate tenfold if the constraint
/// residual stays above threshold.
pub fn minimize(form: &EffectiveForm, schedule: &SweepSchedule, seed: u64) -> Result<DmrgOutcome> {
    schedule.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = form.window();
    let gauge = match form {
        EffectiveForm::Local(_) => Gauge::Local,
        EffectiveForm::Ti(_) => Gauge::TiFirstSite,
    };
    let mut mps = OperatorMps::random(n, schedule.bond_dims[0], gauge, &mut rng)?;
    let mut log = Vec::new();
    let mut penalty_weight = 10.0 * (form.value(&mps).abs() + 1.0);
    let residual_threshold = match form {
        EffectiveForm::Local(_) => 1e-8,
        EffectiveForm::Ti(_) => 1e-6,
    };

    let mut lambda_stage: Option<f64> = None;
    let mut converged = false;
    let mut escalations = 0;
    let mut stage_idx = 0;
    while stage_idx < schedule.bond_dims.len() {
        let d = schedule.bond_dims[stage_idx];
        if stage_idx > 0 {
            mps = grow_bonds(&mps, d, &mut rng)?;
        }
        let mut lambda_prev_sweep = f64::INFINITY;
        let mut lambda_now = f64::NAN;
        for sweep in 0..schedule.max_sweeps {
            let instability;
            match form {
                EffectiveForm::Local(f) => {
                    sweep_local(f, &mut mps, penalty_weight, &mut rng, schedule.inner_tol)?;
                }
                EffectiveForm::Ti(f) => {
                    sweep_ti(f, &mut mps, penalty_weight, &mut rng, schedule.inner_tol)?;
                }
            }
            let lam = form.value(&mps);
            let pen = form.penalty_value(&mps);
            let total = lam + penalty_weight * pen;
            instability = total > lambda_prev_sweep + 100.0 * schedule.inner_tol * total.abs().max(1e-12);
            log.push(RunLogEntry {
                bond_dim: d,
                sweep,
                lambda: lam,
                penalty_residual: pen.sqrt(),
                instability,
            });
            lambda_now = lam;
            let scale = total.abs().max(1e-12);
            if (lambda_prev_sweep - total).abs() <= schedule.inner_tol * scale {
                break;
            }
            lambda_prev_sweep = total;
            penalty_weight = penalty_weight.max(10.0 * (lam.abs() + 1.0) * 10f64.powi(escalations));
        }
        // Constraint residual check with tenfold escalation.
        let pen = form.penalty_value(&mps).sqrt();
        if pen > residual_threshold && escalations < 4 {
            escalations += 1;
            penalty_weight *= 10.0;
            continue; // rerun this stage
        }
        if let Some(prev) = lambda_stage {
            let scale = lambda_now.abs().max(1e-12);
            if (prev - lambda_now).abs() <= schedule.outer_tol * scale {
                converged = true;
                break;
            }
        }
        lambda_stage = Some(lambda_now);
        stage_idx += 1;
    }

    // Final normalization and sign convention.
    mps = mps.normalized(0)?;
    let sign = canonical_sign(&mps);
    if sign < 0.0 {
        mps.scale(-1.0);
    }

    let lambda = form.value(&mps);
    let pen_res = form.penalty_value(&mps).sqrt();
    if pen_res > residual_threshold * 100.0 {
        return Err(DmrgError::PenaltyStuck(pen_res));
    }

    let mut residuals = BTreeMap::new();
    residuals.insert("penalty_weight".to_string(), penalty_weight);
    match form {
        EffectiveForm::Local(_) => {
            residuals.insert("identity_trace".to_string(), pen_res);
        }
        EffectiveForm::Ti(_) => {
            residuals.insert("identity_trace".to_string(), 0.0);
            residuals.insert("ho_overlap".to_string(), pen_res);
        }
    }

    let vector = if n <= 10 {
        let v = mps.to_vector();
        Some(v)
    } else {
        None
    };
    let params = form.params();
    let result = SlowestResult {
        definition: form.definition(),
        g: params.g,
        h: params.h,
        n,
        lambda,
        residuals,
        vector,
    };
    Ok(DmrgOutcome { result, mps, log, converged })
}

/// Deterministic sign functional: the largest-magnitude coefficient among
/// single-site words and nearest-neighbor ZZ words must be positive. For
/// windows small enough to enumerate, the full-vector rule is used instead.
fn canonical_sign(mps: &OperatorMps) -> f64 {
    let n = mps.n_sites();
    if n <= 10 {
        let v = mps.to_vector();
        let mut best = 0.0f64;
        let mut val = 1.0f64;
        for &c in v.coeffs() {
            if c.abs() > best {
                best = c.abs();
                val = c;
            }
        }
        return if val < 0.0 { -1.0 } else { 1.0 };
    }
    let mut best = 0.0f64;
    let mut val = 1.0f64;
    let mut consider = |probe: &PauliSum, mps: &OperatorMps| {
        if let Ok(p) = OperatorMps::from_pauli_sum(probe, 4) {
            if let Ok(c) = overlap_mps(mps, &p) {
                if c.abs() > best {
                    best = c.abs();
                    val = c;
                }
            }
        }
    };
    for site in 0..n {
        for letter in 1..4u8 {
            let s = PauliSum::term(PauliString::single(n, site, letter), num_complex::Complex64::new(1.0, 0.0));
            consider(&s, mps);
        }
    }
    for site in 0..n - 1 {
        let mut w = PauliString::identity(n);
        w.set_letter(site, 3);
        w.set_letter(site + 1, 3);
        let s = PauliSum::term(w, num_complex::Complex64::new(1.0, 0.0));
        consider(&s, mps);
    }
    if val < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// One full back-and-forth sweep for the local form.
fn sweep_local(
    f: &LocalEffective,
    mps: &mut OperatorMps,
    penalty_weight: f64,
    rng: &mut ChaCha20Rng,
    inner_tol: f64,
) -> Result<()> {
    let n = f.n;
    let tensors: Vec<Array3<f64>> = (0..n).map(|i| mps.tensor(i).clone()).collect();
    let mut terms = vec![
        TermEnvs::new(f.form.clone(), n, 1.0),
        TermEnvs::new(f.boundary_left.clone(), n, 1.0),
        TermEnvs::new(f.boundary_right.clone(), n, 1.0),
        TermEnvs::new(f.penalty.clone(), n, penalty_weight),
    ];
    for t in &mut terms {
        t.rebuild_right(&tensors);
    }
    // Left-to-right.
    for i in 0..n {
        let shape = mps.tensor(i).dim();
        let warm = mps.tensor(i).clone();
        let prepared: Vec<PreparedSite> = terms
            .iter()
            .map(|t| {
                PreparedSite::new(
                    t.left[i].as_ref().expect("left env"),
                    &t.mpo.tensors[i],
                    t.right[i + 1].as_ref().expect("right env"),
                    t.weight,
                )
            })
            .collect();
        let apply = |v: &Array3<f64>| -> Array3<f64> {
            let mut out = Array3::<f64>::zeros(shape);
            for pr in &prepared {
                pr.apply_into(v, &mut out);
            }
            out
        };
        let (_, mut topt, _res) = solve_site(shape, apply, &warm, rng, inner_tol * 1e-3)?;
        normalize_tensor(&mut topt);
        mps.set_tensor(i, topt);
        if i + 1 < n {
            mps.push_right(i)?;
            for t in &mut terms {
                t.extend_left(i, mps.tensor(i));
            }
        }
    }
    // Right-to-left.
    for i in (0..n).rev() {
        let shape = mps.tensor(i).dim();
        let warm = mps.tensor(i).clone();
        let prepared: Vec<PreparedSite> = terms
            .iter()
            .map(|t| {
                PreparedSite::new(
                    t.left[i].as_ref().expect("left env"),
                    &t.mpo.tensors[i],
                    t.right[i + 1].as_ref().expect("right env"),
                    t.weight,
                )
            })
            .collect();
        let apply = |v: &Array3<f64>| -> Array3<f64> {
            let mut out = Array3::<f64>::zeros(shape);
            for pr in &prepared {
                pr.apply_into(v, &mut out);
            }
            out
        };
        let (_, mut topt, _res) = solve_site(shape, apply, &warm, rng, inner_tol * 1e-3)?;
        normalize_tensor(&mut topt);
        mps.set_tensor(i, topt);
        if i > 0 {
            mps.push_left(i)?;
            for t in &mut terms {
                t.extend_right(i, mps.tensor(i));
            }
        }
    }
    Ok(())
}

/// Environments for one shift `d` of the TI global contraction.
struct ShiftEnvs {
    d: usize,
    window: usize,
    left: Vec<Option<Array3<f64>>>,
    right: Vec<Option<Array3<f64>>>,
}

/// Window tensors for the TI sandwich at shift d: bra offset 1, ket offset 1+d.
fn ti_window_tensors(cell: &OperatorMps, window: usize, offset: usize) -> Vec<Array3<f64>> {
    padded_tensors(cell, window, offset)
}

/// One full back-and-forth sweep for the TI form (global contraction).
fn sweep_ti(
    f: &TiEffective,
    cell: &mut OperatorMps,
    penalty_weight: f64,
    rng: &mut ChaCha20Rng,
    inner_tol: f64,
) -> Result<()> {
    let n = f.n;
    // Cell-level penalty sandwich environments.
    let cell_tensors: Vec<Array3<f64>> = (0..n).map(|i| promote_phys(cell.tensor(i))).collect();
    let mut pen = TermEnvs::new(f.penalty.clone(), n, penalty_weight);
    pen.rebuild_right(&cell_tensors);

    // Per-shift environments on their windows.
    let mut shifts: Vec<ShiftEnvs> = (0..=n + 1)
        .map(|d| {
            let window = n + 2 + d;
            let mut left = vec![None; window + 1];
            let mut right = vec![None; window + 1];
            left[0] = Some(Array3::ones((1, 1, 1)));
            right[window] = Some(Array3::ones((1, 1, 1)));
            ShiftEnvs { d, window, left, right }
        })
        .collect();
    // Build right environments over full windows (bra offset 1, ket 1+d).
    for s in &mut shifts {
        let bra = ti_window_tensors(cell, s.window, 1);
        let ket = ti_window_tensors(cell, s.window, 1 + s.d);
        let mpo = &f.f_windows[s.d];
        for pos in (0..s.window).rev() {
            let e = s.right[pos + 1].as_ref().expect("right env");
            s.right[pos] = Some(env_right_step(e, &bra[pos], &mpo.tensors[pos], &ket[pos]));
        }
        // Left env up to position 1 (absorb the leading identity site).
        let e = s.left[0].as_ref().expect("left env");
        s.left[1] = Some(env_left_step(e, &bra[0], &mpo.tensors[0], &ket[0]));
    }

    // Left-to-right.
    for i in 0..n {
        optimize_ti_site(f, cell, &mut shifts, &pen, i, rng, inner_tol)?;
        if i + 1 < n {
            cell.push_right(i)?;
            // Extend left envs across window position 1 + i.
            for s in &mut shifts {
                let pos = 1 + i;
                let bra_t = ti_pos_tensor(cell, s.window, 1, pos);
                let ket_t = ti_pos_tensor(cell, s.window, 1 + s.d, pos);
                let e = s.left[pos].as_ref().expect("left env").clone();
                s.left[pos + 1] = Some(env_left_step(&e, &bra_t, &f.f_windows[s.d].tensors[pos], &ket_t));
            }
            pen.extend_left(i, &promote_phys(cell.tensor(i)));
        }
    }

    // Rebuild for the return sweep: full left envs, incremental right envs.
    let cell_tensors: Vec<Array3<f64>> = (0..n).map(|i| promote_phys(cell.tensor(i))).collect();
    let mut pen = TermEnvs::new(f.penalty.clone(), n, penalty_weight);
    pen.left[0] = Some(Array3::ones((1, 1, 1)));
    for i in 0..n {
        let e = pen.left[i].as_ref().unwrap().clone();
        pen.left[i + 1] = Some(env_left_step(&e, &cell_tensors[i], &pen.mpo.tensors[i], &cell_tensors[i]));
    }
    for s in &mut shifts {
        let bra = ti_window_tensors(cell, s.window, 1);
        let ket = ti_window_tensors(cell, s.window, 1 + s.d);
        let mpo = &f.f_windows[s.d];
        s.left[0] = Some(Array3::ones((1, 1, 1)));
        for pos in 0..s.window {
            let e = s.left[pos].as_ref().expect("left env").clone();
            s.left[pos + 1] = Some(env_left_step(&e, &bra[pos], &mpo.tensors[pos], &ket[pos]));
        }
        s.right[s.window] = Some(Array3::ones((1, 1, 1)));
        // Right envs down to the last ket slot position.
        for pos in (n + s.d..s.window).rev() {
            let e = s.right[pos + 1].as_ref().expect("right env").clone();
            let bra_t = ti_pos_tensor(cell, s.window, 1, pos);
            let ket_t = ti_pos_tensor(cell, s.window, 1 + s.d, pos);
            s.right[pos] = Some(env_right_step(&e, &bra_t, &mpo.tensors[pos], &ket_t));
        }
    }

    for i in (0..n).rev() {
        optimize_ti_site(f, cell, &mut shifts, &pen, i, rng, inner_tol)?;
        if i > 0 {
            cell.push_left(i)?;
            for s in &mut shifts {
                let pos = 1 + s.d + i;
                let bra_t = ti_pos_tensor(cell, s.window, 1, pos);
                let ket_t = ti_pos_tensor(cell, s.window, 1 + s.d, pos);
                let e = s.right[pos + 1].as_ref().expect("right env").clone();
                s.right[pos] = Some(env_right_step(&e, &bra_t, &f.f_windows[s.d].tensors[pos], &ket_t));
            }
            pen.extend_right(i, &promote_phys(cell.tensor(i)));
        }
    }
    Ok(())
}

/// The window tensor at `pos` for a cell padded at `offset`.
fn ti_pos_tensor(cell: &OperatorMps, window: usize, offset: usize, pos: usize) -> Array3<f64> {
    let n = cell.n_sites();
    let _ = window;
    if pos >= offset && pos < offset + n {
        promote_phys(cell.tensor(pos - offset))
    } else {
        let mut t = Array3::<f64>::zeros((1, 4, 1));
        t[[0, 0, 0]] = 1.0;
        t
    }
}

/// Builds and solves the effective one-site problem of the TI form at cell
/// site `i`: the d = 0 sandwich plus cross-shift applications and their
/// transposes, plus the cell-level penalty.
#[allow(clippy::too_many_arguments)]
fn optimize_ti_site(
    f: &TiEffective,
    cell: &mut OperatorMps,
    shifts: &mut [ShiftEnvs],
    pen: &TermEnvs,
    i: usize,
    rng: &mut ChaCha20Rng,
    inner_tol: f64,
) -> Result<()> {
    let shape = cell.tensor(i).dim();
    let p_dim = shape.1;
    let warm = cell.tensor(i).clone();

    // For d = 0: a standard sandwich with both slots at position 1 + i.
    // For d >= 1: C_d(v) contracts a strip from the ket slot back to the bra
    // slot; C_d^T(v) is the mirror strip. Both contribute (the cell enters
    // the form twice, once in each shifted copy).
    let apply2 = |v: &Array3<f64>| -> Array3<f64> {
        let v4 = promote_phys(v);
        let mut out4 = Array3::<f64>::zeros((shape.0, 4, shape.2));
        for s in shifts.iter() {
            let d = s.d;
            let mpo = &f.f_windows[d];
            let p1 = 1 + i;
            let p2 = 1 + d + i;
            if d == 0 {
                let el = s.left[p1].as_ref().expect("left env");
                let er = s.right[p1 + 1].as_ref().expect("right env");
                out4.scaled_add(1.0, &site_apply(el, &mpo.tensors[p1], er, &v4));
                continue;
            }
            // --- C_d(v): insert v at the ket slot p2, read out at bra slot p1.
            {
                let mut er = s.right[p2 + 1].as_ref().expect("right env").clone();
                let bra_p2 = ti_pos_tensor(cell, s.window, 1, p2);
                er = env_right_step(&er, &bra_p2, &mpo.tensors[p2], &v4);
                for pos in (p1 + 1..p2).rev() {
                    let bra_t = ti_pos_tensor(cell, s.window, 1, pos);
                    let ket_t = ti_pos_tensor(cell, s.window, 1 + d, pos);
                    er = env_right_step(&er, &bra_t, &mpo.tensors[pos], &ket_t);
                }
                let el = s.left[p1].as_ref().expect("left env");
                let ket_p1 = ti_pos_tensor(cell, s.window, 1 + d, p1);
                out4.scaled_add(1.0, &site_apply(el, &mpo.tensors[p1], &er, &ket_p1));
            }
            // --- C_d^T(v): insert v at the bra slot p1, read out at ket slot p2.
            {
                let mut el = s.left[p1].as_ref().expect("left env").clone();
                let ket_p1 = ti_pos_tensor(cell, s.window, 1 + d, p1);
                el = env_left_step(&el, &v4, &mpo.tensors[p1], &ket_p1);
                for pos in p1 + 1..p2 {
                    let bra_t = ti_pos_tensor(cell, s.window, 1, pos);
                    let ket_t = ti_pos_tensor(cell, s.window, 1 + d, pos);
                    el = env_left_step(&el, &bra_t, &mpo.tensors[pos], &ket_t);
                }
                let er = s.right[p2 + 1].as_ref().expect("right env");
                let bra_p2 = ti_pos_tensor(cell, s.window, 1, p2);
                out4.scaled_add(1.0, &site_apply_ket_out(&el, &mpo.tensors[p2], er, &bra_p2));
            }
        }
        // Cell-level penalty term.
        let el = pen.left[i].as_ref().expect("pen left");
        let er = pen.right[i + 1].as_ref().expect("pen right");
        out4.scaled_add(pen.weight, &site_apply(el, &pen.mpo.tensors[i], er, &v4));
        out4
    };

    let apply_restricted = |v: &Array3<f64>| -> Array3<f64> { restrict_phys(&apply2(v), p_dim) };
    let (_, mut topt, _res) = solve_site(shape, apply_restricted, &warm, rng, inner_tol * 1e-3)?;
    normalize_tensor(&mut topt);
    cell.set_tensor(i, topt);
    Ok(())
}

/// Transposed one-site application: input on the bra slot, output on the ket
/// slot. el: (Al, Wl, Bl), w: (Wl, Ko, Ki, Wr), er: (Ar, Wr, Br),
/// v: (Al, Ko, Ar) -> (Bl, Ki, Br)
fn site_apply_ket_out(el: &Array3<f64>, w: &Array4<f64>, er: &Array3<f64>, v: &Array3<f64>) -> Array3<f64> {
    // Swap bra/ket roles: transpose envs in their (a, w, b) -> (b, w, a)
    // axes and the MPO in its phys indices.
    let el_sw = el.view().permuted_axes([2, 1, 0]).as_standard_layout().to_owned();
    let er_sw = er.view().permuted_axes([2, 1, 0]).as_standard_layout().to_owned();
    let w_t = w.view().permuted_axes([0, 2, 1, 3]).as_standard_layout().to_owned();
    site_apply(&el_sw, &w_t, &er_sw, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{local_form, ti_form, SolverCaps};
    use crate::pauli::OperatorVector;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn params(g: f64, h: f64) -> IsingParams {
        IsingParams::new(g, h).unwrap()
    }

    /// G-MPO applied to a coefficient vector must equal -i [H_loc, O].
    #[test]
    fn g_mpo_matches_commutator() {
        let p = params(0.9, 0.35);
        let n = 3;
        let g = g_mpo(p, n);
        let h_loc = crate::ising::build_h_loc(p, n);
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut v = OperatorVector::zeros(n);
        for c in v.coeffs_mut() {
            *c = rng.gen::<f64>() - 0.5;
        }
        let o = v.to_pauli_sum(0.0);
        let comm = crate::pauli::commutator(&h_loc, &o).unwrap();

        // Apply the MPO to the dense coefficient tensor.
        let mps = OperatorMps::from_vector(&v, 64).unwrap();
        let tensors: Vec<Array3<f64>> = (0..n).map(|i| mps.tensor(i).clone()).collect();
        // Contract <e_w | G | O> for every word w by building G|O> densely.
        for idx in 0..(1usize << (2 * n)) {
            let word = crate::pauli::PauliString::from_index(n, idx);
            let bra = OperatorMps::product_string(&word, 1.0);
            let bra_t: Vec<Array3<f64>> = (0..n).map(|i| bra.tensor(i).clone()).collect();
            let got = sandwich(&bra_t, &g, &tensors);
            // -i [H, O] coefficient: commutator coefficients are imaginary.
            let expect = comm.coeff(&word).im;
            assert_abs_diff_eq!(got, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn local_effective_value_matches_exact_form() {
        let p = params(1.05, 0.1);
        let n = 4;
        let form = build_local_effective(p, n).unwrap();
        let exact = local_form(p, n, &SolverCaps::default()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..3 {
            let m = OperatorMps::random(n, 8, Gauge::Local, &mut rng).unwrap();
            let v = m.to_vector();
            // Exact form lives on the traceless basis; identity contributes 0.
            let mut x = vec![0.0; exact.dim()];
            for idx in 1..v.coeffs().len() {
                x[idx - 1] = v.coeffs()[idx];
            }
            let lhs = form.value(&m);
            let rhs = exact.value(&x);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-9);
        }
    }

    #[test]
    fn local_effective_identity_is_zero_mode() {
        let p = params(1.05, 0.4);
        let form = build_local_effective(p, 3).unwrap();
        let id = OperatorMps::product_string(&crate::pauli::PauliString::identity(3), 1.0);
        assert_abs_diff_eq!(form.value(&id), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(form.penalty_value(&id), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn local_effective_nonnegative() {
        let p = params(0.7, 0.9);
        let form = build_local_effective(p, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(100);
        for _ in 0..20 {
            let m = OperatorMps::random(3, 6, Gauge::Local, &mut rng).unwrap();
            assert!(form.value(&m) >= -1e-10);
        }
    }

    #[test]
    fn ti_effective_value_matches_exact_form() {
        let p = params(0.8, 0.45);
        let n = 3;
        let form = build_ti_effective(p, n).unwrap();
        let exact = ti_form(p, n, &SolverCaps::default()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        for _ in 0..3 {
            let m = OperatorMps::random(n, 8, Gauge::TiFirstSite, &mut rng).unwrap();
            let v = m.to_vector();
            let mut x = vec![0.0; exact.dim()];
            for (bi, xi) in x.iter_mut().enumerate() {
                let word = exact.basis.word_at(bi);
                *xi = v.get(&word);
            }
            let lhs = form.value(&m);
            let rhs = exact.value(&x);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }

    #[test]
    fn dmrg_local_matches_exact_small() {
        let p = params(1.05, 0.1);
        let n = 3;
        let caps = SolverCaps::default();
        let exact_r = crate::exact::solve(&local_form(p, n, &caps).unwrap(), 1).unwrap();
        let form = build_local_effective(p, n).unwrap();
        let schedule = SweepSchedule {
            bond_dims: vec![4, 8],
            inner_tol: 1e-9,
            outer_tol: 5e-3,
            max_sweeps: 40,
        };
        let out = minimize(&form, &schedule, 11).unwrap();
        let rel = (out.result.lambda - exact_r.lambda).abs() / exact_r.lambda.abs().max(1e-12);
        assert!(rel < 1e-6, "dmrg {} vs exact {}", out.result.lambda, exact_r.lambda);
    }

    #[test]
    fn dmrg_ti_matches_exact_small() {
        let p = params(1.05, 0.4);
        let n = 3;
        let caps = SolverCaps::default();
        let exact_r = crate::exact::solve(&ti_form(p, n, &caps).unwrap(), 2).unwrap();
        let form = build_ti_effective(p, n).unwrap();
        let schedule = SweepSchedule {
            bond_dims: vec![4, 12],
            inner_tol: 1e-9,
            outer_tol: 5e-3,
            max_sweeps: 40,
        };
        let out = minimize(&form, &schedule, 3).unwrap();
        let rel = (out.result.lambda - exact_r.lambda).abs() / exact_r.lambda.abs().max(1e-6);
        assert!(rel < 1e-4, "dmrg {} vs exact {}", out.result.lambda, exact_r.lambda);
    }
}
