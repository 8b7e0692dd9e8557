//! Experiment drivers: grid dispatch, output staging, and caching.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use slowop::dmrg::{self, SweepSchedule};
use slowop::dynamics::{self, ChebyshevConfig, EBar, SitePick};
use slowop::exact::{self, Definition, SlowestResult, SolverCaps};
use slowop::ising::IsingParams;
use slowop::mps::OperatorMps;
use slowop::pauli::{hs_norm, PauliSum};
use slowop::probes::{self, ProbeTag, ProbeVariant};

use crate::config::{Experiment, ExperimentConfig, TOOL_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Exact,
    Dmrg,
}

pub fn parse_backend(s: &str) -> Result<Backend> {
    Ok(match s {
        "exact" => Backend::Exact,
        "dmrg" => Backend::Dmrg,
        _ => bail!("unknown backend {s:?} (expected exact|dmrg)"),
    })
}

pub fn parse_definition(s: &str) -> Result<Definition> {
    Ok(match s {
        "local" => Definition::Local,
        "ti" | "translation_invariant" => Definition::TranslationInvariant,
        _ => bail!("unknown definition {s:?} (expected local|ti)"),
    })
}

fn parse_e_bar(s: &str) -> Result<EBar> {
    if s == "auto" {
        Ok(EBar::Auto)
    } else {
        Ok(EBar::Fixed(s.parse::<f64>().context("e_bar")?))
    }
}

/// Staged output files, committed (and cached) together at the end of a run.
pub struct Staging {
    pub files: Vec<(PathBuf, String)>,
}

impl Staging {
    fn new() -> Self {
        Staging { files: Vec::new() }
    }

    fn add(&mut self, path: PathBuf, content: String) {
        self.files.push((path, content));
    }

    fn commit(&self) -> Result<()> {
        for (path, content) in &self.files {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).ok();
            }
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub point_errors: usize,
    #[allow(dead_code)]
    pub cache_hit: bool,
}

fn cache_root() -> PathBuf {
    std::env::var_os("SLOWOP_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".slowop-cache"))
}

fn try_cache_restore(config: &ExperimentConfig) -> Option<Vec<PathBuf>> {
    let dir = cache_root().join(config.hash());
    let manifest = fs::read_to_string(dir.join("manifest.txt")).ok()?;
    let base = PathBuf::from(config.get("output")?);
    let parent = base.parent()?.to_path_buf();
    let mut restored = Vec::new();
    for (i, rel) in manifest.lines().enumerate() {
        let data = fs::read(dir.join(format!("file{i}"))).ok()?;
        let dest = parent.join(rel);
        if let Some(p) = dest.parent() {
            fs::create_dir_all(p).ok();
        }
        fs::write(&dest, data).ok()?;
        restored.push(dest);
    }
    Some(restored)
}

fn cache_store(config: &ExperimentConfig, staging: &Staging) {
    let Some(out) = config.get("output") else { return };
    let Some(parent) = PathBuf::from(out).parent().map(Path::to_path_buf) else { return };
    let dir = cache_root().join(config.hash());
    if fs::create_dir_all(&dir).is_err() {
        return;
    }
    let mut manifest = String::new();
    for (i, (path, content)) in staging.files.iter().enumerate() {
        let rel = match path.strip_prefix(&parent) {
            Ok(r) => r.to_string_lossy().to_string(),
            Err(_) => continue,
        };
        if fs::write(dir.join(format!("file{i}")), content).is_err() {
            return;
        }
        manifest.push_str(&rel);
        manifest.push('\n');
    }
    let _ = fs::write(dir.join("manifest.txt"), manifest);
}

fn header_comments(config: &ExperimentConfig, wall: f64) -> String {
    format!(
        "# tool_version={TOOL_VERSION}\n# config_hash={}\n# walltime_s={wall:.3}\n",
        config.hash()
    )
}

// ---------------------------------------------------------------------------
// Solver plumbing shared by the experiments
// ---------------------------------------------------------------------------

pub struct SolvedPoint {
    pub result: SlowestResult,
    pub mps: Option<OperatorMps>,
    pub log: Vec<dmrg::RunLogEntry>,
}

fn schedule_from(config: &ExperimentConfig, def: Definition) -> Result<SweepSchedule> {
    let default_dims = match def {
        Definition::Local => "8,16,32,64,128,256",
        Definition::TranslationInvariant => "16,64,128",
    };
    let default_inner = match def {
        Definition::Local => 1e-7,
        Definition::TranslationInvariant => 1e-4,
    };
    let bond_dims = config
        .get_or("bond_dims", default_dims)
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| anyhow!("bond_dims: {e}")))
        .collect::<Result<Vec<usize>>>()?;
    Ok(SweepSchedule {
        bond_dims,
        inner_tol: config.f64_value("inner_tol", default_inner)?,
        outer_tol: config.f64_value("outer_tol", 5e-3)?,
        max_sweeps: config.usize_value("max_sweeps", 40)?,
    })
}

pub fn solve_point(
    def: Definition,
    backend: Backend,
    params: IsingParams,
    n: usize,
    seed: u64,
    schedule: &SweepSchedule,
) -> Result<SolvedPoint> {
    let caps = SolverCaps::default();
    match backend {
        Backend::Exact => {
            let form = match def {
                Definition::Local => exact::local_form(params, n, &caps)?,
                Definition::TranslationInvariant => exact::ti_form(params, n, &caps)?,
            };
            let result = exact::solve(&form, seed)?;
            Ok(SolvedPoint { result, mps: None, log: Vec::new() })
        }
        Backend::Dmrg => {
            let form = match def {
                Definition::Local => dmrg::build_local_effective(params, n)?,
                Definition::TranslationInvariant => dmrg::build_ti_effective(params, n)?,
            };
            let out = dmrg::minimize(&form, schedule, seed)?;
            Ok(SolvedPoint { result: out.result, mps: Some(out.mps), log: out.log })
        }
    }
}

/// The solved operator on an `l`-site periodic chain, unit-normalized:
/// the window embedding for the local definition, the cyclic cell sum for
/// the TI one. Requires the dense coefficient vector (window-capped).
fn chain_operator(def: Definition, point: &SolvedPoint, l: usize) -> Result<PauliSum> {
    let vec = point
        .result
        .vector
        .as_ref()
        .ok_or_else(|| anyhow!("window too large to materialize the operator for dynamics"))?;
    let sum = vec.to_pauli_sum(0.0);
    let out = match def {
        Definition::Local => sum.embed(l, 0, false)?,
        Definition::TranslationInvariant => probes::ti_chain_operator(&sum, l)?,
    };
    let nrm = hs_norm(&out);
    Ok(out.scaled(num_complex::Complex64::new(1.0 / nrm, 0.0)))
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct GridPoint {
    g: f64,
    h: f64,
    n: usize,
    seed: u64,
}

fn grid_points(config: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let gs = config.f64_grid("g", "1.05")?;
    let hs = config.f64_grid("h", "0.1")?;
    let ns = config.usize_grid("N", "5")?;
    if gs.is_empty() || hs.is_empty() || ns.is_empty() {
        bail!("empty parameter grid");
    }
    let seed = config.u64_value("seed", 12345)?;
    let mut pts = Vec::new();
    let mut idx = 0u64;
    for &g in &gs {
        for &h in &hs {
            for &n in &ns {
                pts.push(GridPoint { g, h, n, seed: seed.wrapping_add(idx) });
                idx += 1;
            }
        }
    }
    Ok(pts)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.12e}")
}

fn run_find(config: &ExperimentConfig, staging: &mut Staging) -> Result<usize> {
    let def = parse_definition(&config.get_or("definition", "local"))?;
    let backend = parse_backend(&config.get_or("backend", "exact"))?;
    let schedule = schedule_from(config, def)?;
    let points = grid_points(config)?;
    let t0 = Instant::now();
    let solved: Vec<(GridPoint, Result<SolvedPoint>)> = points
        .into_par_iter()
        .map(|pt| {
            let params = IsingParams::new(pt.g, pt.h)?;
            let r = solve_point(def, backend, params, pt.n, pt.seed, &schedule);
            Ok::<_, anyhow::Error>((pt, r))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (pt, r) in &solved {
        match r {
            Ok(sp) => results.push(sp.result.to_json()),
            Err(e) => errors.push(serde_json::json!({
                "g": pt.g, "h": pt.h, "N": pt.n, "error": e.to_string(),
            })),
        }
    }
    let doc = serde_json::json!({
        "tool_version": TOOL_VERSION,
        "config_hash": config.hash(),
        "results": results,
        "errors": errors,
    });
    let out = config.output()?;
    staging.add(out.clone(), serde_json::to_string_pretty(&doc)? + "\n");

    if backend == Backend::Dmrg {
        let stem = out.with_extension("");
        for (pt, r) in &solved {
            if let Ok(sp) = r {
                if let Some(mps) = &sp.mps {
                    let tag = format!("g{}_h{}_N{}", pt.g, pt.h, pt.n);
                    let mps_path = PathBuf::from(format!("{}_{}.mps.json", stem.display(), tag));
                    staging.add(mps_path, serde_json::to_string(&mps.to_json())? + "\n");
                    let mut log = String::from("bond_dim,sweep,lambda,penalty_residual,instability\n");
                    for e in &sp.log {
                        let _ = writeln!(
                            log,
                            "{},{},{},{},{}",
                            e.bond_dim,
                            e.sweep,
                            fmt_f(e.lambda),
                            fmt_f(e.penalty_residual),
                            e.instability
                        );
                    }
                    let log_path = PathBuf::from(format!("{}_{}.runlog.csv", stem.display(), tag));
                    staging.add(log_path, log);
                }
            }
        }
    }
    let _ = t0;
    Ok(errors_len(&solved))
}

fn errors_len(solved: &[(GridPoint, Result<SolvedPoint>)]) -> usize {
    solved.iter().filter(|(_, r)| r.is_err()).count()
}

/// Per-point probe overlaps for either definition, choosing the dense route
/// when the coefficient vector exists and the MPS route otherwise.
fn point_overlaps(
    def: Definition,
    params: IsingParams,
    n: usize,
    sp: &SolvedPoint,
) -> Result<Vec<(ProbeTag, f64)>> {
    let mut out = Vec::new();
    match def {
        Definition::Local => {
            if let Some(v) = &sp.result.vector {
                let o = v.to_pauli_sum(0.0);
                for tag in ProbeTag::all() {
                    let p = probes::window_probe(tag, params, n)?;
                    out.push((tag, probes::overlap(&o, &p)?));
                }
            } else {
                let mps = sp.mps.as_ref().ok_or_else(|| anyhow!("no operator representation"))?;
                for tag in ProbeTag::all() {
                    let p = probes::window_probe(tag, params, n)?;
                    out.push((tag, probes::overlap_probe_mps(mps, &p)?));
                }
            }
        }
        Definition::TranslationInvariant => {
            if let Some(v) = &sp.result.vector {
                let l = 2 * n + 3;
                let cell = v.to_pauli_sum(0.0);
                let total = probes::ti_chain_operator(&cell, l)?;
                for tag in ProbeTag::all() {
                    let p = probes::ti_probe(tag, params, n, l)?;
                    out.push((tag, probes::overlap_normalized(&total, &p)?));
                }
            } else {
                let mps = sp.mps.as_ref().ok_or_else(|| anyhow!("no operator representation"))?;
                for tag in ProbeTag::all() {
                    let cell = probes::ti_probe_cell(tag, params, n)?;
                    out.push((tag, probes::overlap_ti_mps(mps, &cell)?));
                }
            }
        }
    }
    Ok(out)
}

fn run_sweep_overlap(config: &ExperimentConfig, staging: &mut Staging) -> Result<usize> {
    let def = parse_definition(&config.get_or("definition", "local"))?;
    let backend = parse_backend(&config.get_or("backend", "exact"))?;
    let schedule = schedule_from(config, def)?;
    let variant = match def {
        Definition::Local => ProbeVariant::LocalWindow,
        Definition::TranslationInvariant => ProbeVariant::TranslationInvariant,
    };
    let t0 = Instant::now();
    let points = grid_points(config)?;
    let rows: Vec<(GridPoint, Result<Vec<(ProbeTag, f64)>>)> = points
        .into_par_iter()
        .map(|pt| {
            let r = (|| -> Result<Vec<(ProbeTag, f64)>> {
                let params = IsingParams::new(pt.g, pt.h)?;
                let sp = solve_point(def, backend, params, pt.n, pt.seed, &schedule)?;
                point_overlaps(def, params, pt.n, &sp)
            })();
            (pt, r)
        })
        .collect();

    let mut csv = header_comments(config, t0.elapsed().as_secs_f64());
    csv.push_str("g,h,N,probe,variant,value\n");
    let mut errs = 0;
    for (pt, r) in &rows {
        match r {
            Ok(ovs) => {
                for (tag, v) in ovs {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        pt.g,
                        pt.h,
                        pt.n,
                        tag.name(),
                        match variant {
                            ProbeVariant::LocalWindow => "local_window",
                            ProbeVariant::TranslationInvariant => "translation_invariant",
                        },
                        fmt_f(*v)
                    );
                }
            }
            Err(e) => {
                errs += 1;
                let _ = writeln!(csv, "# error: g={} h={} N={}: {}", pt.g, pt.h, pt.n, e);
            }
        }
    }
    staging.add(config.output()?, csv);
    Ok(errs)
}

fn run_sweep_scaling(config: &ExperimentConfig, staging: &mut Staging) -> Result<usize> {
    let def = parse_definition(&config.get_or("definition", "local"))?;
    let backend = parse_backend(&config.get_or("backend", "dmrg"))?;
    let schedule = schedule_from(config, def)?;
    let t0 = Instant::now();
    let points = grid_points(config)?;
    let rows: Vec<(GridPoint, Result<f64>)> = points
        .into_par_iter()
        .map(|pt| {
            let r = (|| -> Result<f64> {
                let params = IsingParams::new(pt.g, pt.h)?;
                let sp = solve_point(def, backend, params, pt.n, pt.seed, &schedule)?;
                Ok(sp.result.lambda)
            })();
            (pt, r)
        })
        .collect();

    let mut lam_csv = header_comments(config, t0.elapsed().as_secs_f64());
    lam_csv.push_str("g,h,N,kind,lambda\n");
    let mut errs = 0;
    // Group by (g, h) for slopes; grid order is deterministic.
    let mut by_gh: Vec<((f64, f64), Vec<(usize, f64, &'static str)>)> = Vec::new();
    for (pt, r) in &rows {
        match r {
            Ok(lam) => {
                let _ = writeln!(lam_csv, "{},{},{},slowest,{}", pt.g, pt.h, pt.n, fmt_f(*lam));
                let key = (pt.g, pt.h);
                match by_gh.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, v)) => v.push((pt.n, *lam, "slowest")),
                    None => by_gh.push((key, vec![(pt.n, *lam, "slowest")])),
                }
            }
            Err(e) => {
                errs += 1;
                let _ = writeln!(lam_csv, "# error: g={} h={} N={}: {}", pt.g, pt.h, pt.n, e);
            }
        }
    }
    // Optimized diffusion mode reference for the local definition.
    if def == Definition::Local {
        for ((g, h), pts) in &mut by_gh {
            let params = IsingParams::new(*g, *h)?;
            let ns: Vec<usize> = pts.iter().map(|(n, _, _)| *n).collect();
            for n in ns {
                if let Ok(od) = probes::optimized_diffusion_mode(params, n) {
                    let _ = writeln!(lam_csv, "{},{},{},diffusion_opt,{}", g, h, n, fmt_f(od.lambda));
                    pts.push((n, od.lambda, "diffusion_opt"));
                }
            }
        }
    }

    let mut slope_csv = header_comments(config, t0.elapsed().as_secs_f64());
    slope_csv.push_str("g,h,kind,N_low,N_high,slope\n");
    for ((g, h), pts) in &by_gh {
        for kind in ["slowest", "diffusion_opt"] {
            let series: Vec<(usize, f64)> = pts
                .iter()
                .filter(|(_, _, k)| *k == kind)
                .map(|(n, l, _)| (*n, *l))
                .collect();
            if series.len() < 2 {
                continue;
            }
            match probes::instant_slopes(&series) {
                Ok(slopes) => {
                    for s in slopes {
                        let _ = writeln!(
                            slope_csv,
                            "{},{},{},{},{},{}",
                            g,
                            h,
                            kind,
                            s.n_low,
                            s.n_high,
                            fmt_f(s.slope)
                        );
                    }
                }
                Err(e) => {
                    let _ = writeln!(slope_csv, "# error: g={g} h={h} kind={kind}: {e}");
                }
            }
        }
    }

    let out = config.output()?;
    let slopes_path = sibling(&out, "slopes");
    staging.add(out, lam_csv);
    staging.add(slopes_path, slope_csv);
    Ok(errs)
}

fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    let ext = path.extension().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn single_point(config: &ExperimentConfig) -> Result<(IsingParams, usize)> {
    let gs = config.f64_grid("g", "1.05")?;
    let hs = config.f64_grid("h", "0.1")?;
    let ns = config.usize_grid("N", "5")?;
    if gs.len() != 1 || hs.len() != 1 || ns.len() != 1 {
        bail!("this experiment takes a single (g, h, N) point");
    }
    Ok((IsingParams::new(gs[0], hs[0])?, ns[0]))
}

fn cheb_config(config: &ExperimentConfig) -> Result<ChebyshevConfig> {
    Ok(ChebyshevConfig {
        e_bar: parse_e_bar(&config.get_or("e_bar", "1000"))?,
        trunc_tol: config.f64_value("trunc_tol", 1e-13)?,
        max_terms: 400_000,
    })
}

fn run_evolve(config: &ExperimentConfig, staging: &mut Staging) -> Result<usize> {
    let def = parse_definition(&config.get_or("definition", "local"))?;
    let backend = parse_backend(&config.get_or("backend", "exact"))?;
    let (params, n) = single_point(config)?;
    let l = config.usize_value("L", 10)?;
    let times = config.f64_grid("times", "0:10:0.5")?;
    let seed = config.u64_value("seed", 12345)?;
    let method = config.get_or("method", "exact");
    let schedule = schedule_from(config, def)?;
    let t0 = Instant::now();

    let sp = solve_point(def, backend, params, n, seed, &schedule)?;
    let o = chain_operator(def, &sp, l)?;
    let mut ts = match method.as_str() {
        "exact" => dynamics::exact_correlator(&o, params, l, &times, dynamics::EXACT_DIAG_CAP)?,
        "stochastic" => {
            let k = config.usize_value("K", 50)?;
            dynamics::two_point_correlator(&o, params, l, &times, k, seed, &cheb_config(config)?)?
        }
        other => bail!("unknown method {other:?} (expected exact|stochastic)"),
    };
    ts.meta.insert("N".into(), n.to_string());
    ts.meta.insert("definition".into(), def.to_string());
    ts.meta.insert("lambda".into(), format!("{}", sp.result.lambda));
    ts.meta.insert("config_hash".into(), config.hash());
    ts.meta.insert("tool_version".into(), TOOL_VERSION.into());

    let out = config.output()?;
    let env = dynamics::gaussian_envelope(sp.result.lambda, &times);
    staging.add(sibling(&out, "envelope"), env.to_csv());
    staging.add(out, ts.to_csv());
    let _ = t0;
    Ok(0)
}

fn run_otoc(config: &ExperimentConfig, staging: &mut Staging) -> Result<usize> {
    let def = parse_definition(&config.get_or("definition", "local"))?;
    let backend = parse_backend(&config.get_or("backend", "exact"))?;
    let (params, n) = single_point(config)?;
    let l = config.usize_value("L", 11)?;
    let times = config.f64_grid("times", "0:10:0.5")?;
    let seed = config.u64_value("seed", 12345)?;
    let schedule = schedule_from(config, def)?;
    let axes: Vec<u8> = config
        .get_or("axes", "x,y,z")
        .split(',')
        .map(|a| match a.trim() {
            "x" => Ok(1u8),
            "y" => Ok(2u8),
            "z" => Ok(3u8),
            other => Err(anyhow!("unknown axis {other:?}")),
        })
        .collect::<Result<Vec<u8>>>()?;
    let picks: Vec<(String, SitePick)> = if let Some(sites) = config.get("sites") {
        sites
            .split(',')
            .map(|s| -> Result<(String, SitePick)> {
                let site: usize = s.trim().parse()?;
                Ok((format!("site{site}"), SitePick::Absolute(site)))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        config
            .get_or("offsets", "0,1,2,3")
            .split(',')
            .map(|s| -> Result<(String, SitePick)> {
                let off: usize = s.trim().parse()?;
                Ok((format!("center+{off}"), SitePick::CenterOffset { n, offset: off }))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let sp = solve_point(def, backend, params, n, seed, &schedule)?;
    let o = chain_operator(def, &sp, l)?;
    let eig = dynamics::diagonalize(params, l, dynamics::EXACT_DIAG_CAP)?;
    let outdir = config.output()?;
    for &axis in &axes {
        for (tag, pick) in &picks {
            let mut ts = dynamics::otoc_with(&eig, &o, axis, *pick, &times)?;
            ts.meta.insert("config_hash".into(), config.hash());
            ts.meta.insert("tool_version".into(), TOOL_VERSION.into());
            ts.meta.insert("definition".into(), def.to_string());
            let name = format!(
                "otoc_{}_{}.csv",
                ["i", "x", "y", "z"][axis as usize],
                tag.replace('+', "p")
            );
            staging.add(outdir.join(name), ts.to_csv());
        }
    }
    Ok(0)
}

fn run_entropy(config: &ExperimentConfig, staging: &mut Staging) -> Result<usize> {
    let def = parse_definition(&config.get_or("definition", "local"))?;
    let (params, n) = single_point(config)?;
    let seed = config.u64_value("seed", 12345)?;
    let schedule = schedule_from(config, def)?;
    let t0 = Instant::now();
    let sp = solve_point(def, Backend::Dmrg, params, n, seed, &schedule)?;
    let mps = sp.mps.as_ref().expect("dmrg returns an MPS");
    let prof = mps.entropy_profile()?;
    let mut csv = header_comments(config, t0.elapsed().as_secs_f64());
    csv.push_str("cut,entropy_nats,max_bound,log_d\n");
    for i in 0..prof.cuts.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            prof.cuts[i],
            fmt_f(prof.entropy[i]),
            fmt_f(prof.max_bound[i]),
            fmt_f(prof.log_d)
        );
    }
    staging.add(config.output()?, csv);
    Ok(0)
}

fn run_transition(config: &ExperimentConfig, staging: &mut Staging) -> Result<usize> {
    let def = parse_definition(&config.get_or("definition", "ti"))?;
    if def != Definition::TranslationInvariant {
        bail!("transition detection is defined for the TI slowest operator");
    }
    let backend = parse_backend(&config.get_or("backend", "exact"))?;
    let gs = config.f64_grid("g", "1.05")?;
    let ns = config.usize_grid("N", "6")?;
    if gs.len() != 1 || ns.len() != 1 {
        bail!("transition takes a single g and N with an h grid");
    }
    let (g, n) = (gs[0], ns[0]);
    let hs = config.f64_grid("h", "0.0:0.6:0.02")?;
    let threshold = config.f64_value("threshold", 0.05)?;
    let seed = config.u64_value("seed", 12345)?;
    let schedule = schedule_from(config, def)?;
    let t0 = Instant::now();

    let rows: Vec<(f64, Result<Vec<(ProbeTag, f64)>>)> = hs
        .par_iter()
        .enumerate()
        .map(|(i, &h)| {
            let r = (|| -> Result<Vec<(ProbeTag, f64)>> {
                let params = IsingParams::new(g, h)?;
                let sp = solve_point(def, backend, params, n, seed.wrapping_add(i as u64), &schedule)?;
                point_overlaps(def, params, n, &sp)
            })();
            (h, r)
        })
        .collect();

    let mut csv = header_comments(config, t0.elapsed().as_secs_f64());
    csv.push_str("g,h,N,probe,variant,value\n");
    let mut errs = 0;
    let mut hv = Vec::new();
    let mut ox = Vec::new();
    let mut oz = Vec::new();
    for (h, r) in &rows {
        match r {
            Ok(ovs) => {
                let mut x = 0.0;
                let mut z = 0.0;
                for (tag, v) in ovs {
                    let _ = writeln!(csv, "{},{},{},{},translation_invariant,{}", g, h, n, tag.name(), fmt_f(*v));
                    match tag {
                        ProbeTag::MagnetizationX => x = *v,
                        ProbeTag::MagnetizationZ => z = *v,
                        _ => {}
                    }
                }
                hv.push(*h);
                ox.push(x);
                oz.push(z);
            }
            Err(e) => {
                errs += 1;
                let _ = writeln!(csv, "# error: g={g} h={h} N={n}: {e}");
            }
        }
    }
    let hstar = probes::detect_transition(&hv, &ox, &oz, threshold);
    let mut tcsv = header_comments(config, t0.elapsed().as_secs_f64());
    tcsv.push_str("N,g,threshold,h_star\n");
    let _ = writeln!(
        tcsv,
        "{},{},{},{}",
        n,
        g,
        threshold,
        hstar.map(fmt_f).unwrap_or_else(|| "none".to_string())
    );
    let out = config.output()?;
    staging.add(sibling(&out, "transition"), tcsv);
    staging.add(out, csv);
    Ok(errs)
}

/// Runs an experiment end to end: cache lookup, staging, commit, cache store.
pub fn run(config: &ExperimentConfig, no_cache: bool) -> Result<RunOutcome> {
    if config.experiment == Experiment::Verify {
        bail!("verify is driven by crate::verify, not run()");
    }
    config.output().context("every experiment needs output=")?;
    if !no_cache {
        if let Some(files) = try_cache_restore(config) {
            eprintln!("cache hit {}", config.hash());
            return Ok(RunOutcome { files, point_errors: 0, cache_hit: true });
        }
    }
    let mut staging = Staging::new();
    let errs = match config.experiment {
        Experiment::Find => run_find(config, &mut staging)?,
        Experiment::SweepOverlap => run_sweep_overlap(config, &mut staging)?,
        Experiment::SweepScaling => run_sweep_scaling(config, &mut staging)?,
        Experiment::Evolve => run_evolve(config, &mut staging)?,
        Experiment::Otoc => run_otoc(config, &mut staging)?,
        Experiment::Entropy => run_entropy(config, &mut staging)?,
        Experiment::Transition => run_transition(config, &mut staging)?,
        Experiment::Verify => unreachable!(),
    };
    staging.commit()?;
    if !no_cache && errs == 0 {
        cache_store(config, &staging);
    }
    Ok(RunOutcome {
        files: staging.files.iter().map(|(p, _)| p.clone()).collect(),
        point_errors: errs,
        cache_hit: false,
    })
}
