use slowop::dmrg::{build_local_effective, minimize, SweepSchedule};
use slowop::ising::IsingParams;
use std::time::Instant;

fn main() {
    let p0 = IsingParams::new(1.05, 0.0).unwrap();
    let schedule = SweepSchedule {
        bond_dims: vec![8, 16, 32, 64, 128, 256],
        inner_tol: 1e-7,
        outer_tol: 5e-3,
        max_sweeps: 30,
    };
    for n in [13, 14] {
        let t1 = Instant::now();
        let form = build_local_effective(p0, n).unwrap();
        let out = minimize(&form, &schedule, 1000 + n as u64).unwrap();
        print!("N={n}: lambda={:.6e} D={} conv={} ({:.0?}) | stages:", out.result.lambda, out.mps.max_bond_dim(), out.converged, t1.elapsed());
        let mut last = 0;
        for e in &out.log { if e.bond_dim != last { print!(" D{}@{:.4e}", e.bond_dim, e.lambda); last = e.bond_dim; } }
        println!();
    }
}
