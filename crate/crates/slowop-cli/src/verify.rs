//! Cross-backend verification suite: DMRG vs exact, stochastic vs exact
//! correlator, Chebyshev vs eigendecomposition, MPO vs dense.

use anyhow::Result;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use slowop::dmrg::{build_local_effective, build_ti_effective, minimize, SweepSchedule};
use slowop::dynamics::{self, ChebyshevConfig, EBar};
use slowop::exact::{evaluate_lambda, local_form, solve, ti_form, SolverCaps};
use slowop::ising::{build_h_loc, hamiltonian_mpo, HamiltonianMpo, IsingParams};
use slowop::pauli::hs_norm_sq;

pub struct Check {
    pub name: &'static str,
    pub tolerance: String,
    pub measured: String,
    pub pass: bool,
}

fn params(g: f64, h: f64) -> IsingParams {
    IsingParams::new(g, h).unwrap()
}

fn check_mpo_vs_dense(fixture: Option<&HamiltonianMpo>) -> Result<Check> {
    let p = params(1.05, 0.1);
    let mut worst = 0.0f64;
    match fixture {
        Some(mpo) => {
            let mut diff = mpo.contract();
            diff.add_sum(&build_h_loc(p, mpo.n), Complex64::new(-1.0, 0.0));
            worst = hs_norm_sq(&diff).sqrt();
        }
        None => {
            for n in 1..=6 {
                let mpo = hamiltonian_mpo(p, n);
                let mut diff = mpo.contract();
                diff.add_sum(&build_h_loc(p, n), Complex64::new(-1.0, 0.0));
                worst = worst.max(hs_norm_sq(&diff).sqrt());
            }
        }
    }
    Ok(Check {
        name: "mpo_vs_dense",
        tolerance: "1e-12".into(),
        measured: format!("{worst:.3e}"),
        pass: worst <= 1e-12,
    })
}

fn check_local_form_analytic() -> Result<Check> {
    let (g, h) = (1.05, 0.1);
    let form = local_form(params(g, h), 1, &SolverCaps::default())?;
    let m = form.to_dense_matrix();
    let expect = [
        [4.0 * h * h + 8.0, 0.0, -4.0 * g * h],
        [0.0, 4.0 * g * g + 4.0 * h * h + 8.0, 0.0],
        [-4.0 * g * h, 0.0, 4.0 * g * g],
    ];
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((m[[i, j]] - expect[i][j]).abs());
        }
    }
    Ok(Check {
        name: "local_form_n1_analytic",
        tolerance: "1e-12".into(),
        measured: format!("{worst:.3e}"),
        pass: worst <= 1e-12,
    })
}

fn check_dmrg_vs_exact_local() -> Result<Check> {
    let p = params(1.05, 0.1);
    let n = 4;
    let exact_r = solve(&local_form(p, n, &SolverCaps::default())?, 1)?;
    let schedule = SweepSchedule { bond_dims: vec![8, 16], inner_tol: 1e-9, outer_tol: 5e-3, max_sweeps: 40 };
    let d = minimize(&build_local_effective(p, n)?, &schedule, 2)?;
    let rel = (d.result.lambda - exact_r.lambda).abs() / exact_r.lambda.abs().max(1e-12);
    Ok(Check {
        name: "dmrg_vs_exact_local",
        tolerance: "rel 1e-6".into(),
        measured: format!("{rel:.3e}"),
        pass: rel <= 1e-6,
    })
}

fn check_dmrg_vs_exact_ti() -> Result<Check> {
    let p = params(1.05, 0.4);
    let n = 3;
    let exact_r = solve(&ti_form(p, n, &SolverCaps::default())?, 3)?;
    let schedule = SweepSchedule { bond_dims: vec![4, 12], inner_tol: 1e-9, outer_tol: 5e-3, max_sweeps: 40 };
    let d = minimize(&build_ti_effective(p, n)?, &schedule, 4)?;
    let rel = (d.result.lambda - exact_r.lambda).abs() / exact_r.lambda.abs().max(1e-6);
    Ok(Check {
        name: "dmrg_vs_exact_ti",
        tolerance: "rel 1e-4".into(),
        measured: format!("{rel:.3e}"),
        pass: rel <= 1e-4,
    })
}

fn check_chebyshev_vs_eigen() -> Result<Check> {
    let p = params(1.05, 0.3);
    let l = 6;
    let h = slowop::ising::build_hamiltonian(p, l, true)?;
    let eig = dynamics::diagonalize(p, l, dynamics::EXACT_DIAG_CAP)?;
    let cfg = ChebyshevConfig { e_bar: EBar::Auto, ..Default::default() };
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let dim = 1usize << l;
    let mut psi: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    let nrm: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    for c in &mut psi {
        *c /= nrm;
    }
    let mut worst = 0.0f64;
    for &t in &[0.5, 2.0] {
        let (cheb, _, _) = dynamics::chebyshev_evolve(&psi, &h, t, &cfg)?;
        // Reference through the eigenbasis.
        let v = &eig.vectors;
        let mut coef = vec![Complex64::default(); dim];
        for i in 0..dim {
            for b in 0..dim {
                coef[i] += Complex64::new(v[[b, i]], 0.0) * psi[b];
            }
        }
        let mut reference = vec![Complex64::default(); dim];
        for i in 0..dim {
            let ph = Complex64::new(0.0, -eig.energies[i] * t).exp();
            for b in 0..dim {
                reference[b] += Complex64::new(v[[b, i]], 0.0) * ph * coef[i];
            }
        }
        let err: f64 = cheb
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err);
    }
    Ok(Check {
        name: "chebyshev_vs_eigen",
        tolerance: "1e-9".into(),
        measured: format!("{worst:.3e}"),
        pass: worst <= 1e-9,
    })
}

fn check_stochastic_vs_exact() -> Result<Check> {
    let p = params(1.05, 0.1);
    let l = 8;
    let o = slowop::probes::diffusion_mode(p, 4)?.embed(l, 0, false)?;
    let times = [0.5, 1.5];
    let cfg = ChebyshevConfig { e_bar: EBar::Auto, ..Default::default() };
    let st = dynamics::two_point_correlator(&o, p, l, &times, 30, 11, &cfg)?;
    let ex = dynamics::exact_correlator(&o, p, l, &times, dynamics::EXACT_DIAG_CAP)?;
    let worst = st
        .values
        .iter()
        .zip(&ex.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(Check {
        name: "stochastic_vs_exact_correlator",
        tolerance: "5e-2 (K=30, L=8)".into(),
        measured: format!("{worst:.3e}"),
        pass: worst <= 5e-2,
    })
}

fn check_lambda_l_independence() -> Result<Check> {
    let p = params(1.05, 0.1);
    let n = 4;
    let r = solve(&local_form(p, n, &SolverCaps::default())?, 7)?;
    let o = r.to_pauli_sum(0.0).unwrap();
    let a = evaluate_lambda(&o, p, n + 2)?;
    let b = evaluate_lambda(&o, p, n + 5)?;
    let diff = (a - b).abs();
    Ok(Check {
        name: "lambda_l_independence",
        tolerance: "1e-10".into(),
        measured: format!("{diff:.3e}"),
        pass: diff <= 1e-10,
    })
}

/// Runs the verification suite, printing one line per check.
/// Returns true when every check passed.
pub fn run_verify(fixture: Option<&HamiltonianMpo>) -> Result<bool> {
    let checks = vec![
        check_mpo_vs_dense(fixture)?,
        check_local_form_analytic()?,
        check_dmrg_vs_exact_local()?,
        check_dmrg_vs_exact_ti()?,
        check_chebyshev_vs_eigen()?,
        check_stochastic_vs_exact()?,
        check_lambda_l_independence()?,
    ];
    let mut all = true;
    for c in &checks {
        println!(
            "{} {} (tolerance {}, measured {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.tolerance,
            c.measured
        );
        all &= c.pass;
    }
    Ok(all)
}
