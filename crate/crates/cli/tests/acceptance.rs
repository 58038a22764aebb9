//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p torcont-cli --test acceptance`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use torcont::colloc::{build_mesh, interpolate, segment_jacobian, Trajectory};
use torcont::contin::{correct, Branch, PointType, Start, ZeroProblem};
use torcont::fourier::{basis_row, dft_matrix, rotation_matrix};
use torcont::odesys::{builtin, ClosureField, LinearField};
use torcont::po::floquet_at;
use torcont::store::{restart_tor2tor, RunStore, Snapshot, TorusSnapshot};
use torcont::torus::{resample, validate_invariance, TorusProblem};
use torcont_cli::config::LoadedConfig;
use torcont_cli::pipeline::{run_config, StageSummary};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> LoadedConfig {
    LoadedConfig::load(&configs().join(name)).expect("checked-in config")
}

fn stage<'a>(done: &'a [StageSummary], id: &str) -> Result<&'a Branch, String> {
    done.iter()
        .find(|s| s.run_id == id)
        .map(|s| &s.branch)
        .ok_or_else(|| format!("stage {id} did not run"))
}

fn monitor_spread(branch: &Branch, name: &str) -> Result<f64, String> {
    let i = branch.monitor(name).ok_or_else(|| format!("no monitor {name}"))?;
    let v0 = branch.points[0].monitors[i];
    Ok(branch.points.iter().map(|p| (p.monitors[i] - v0).abs()).fold(0.0, f64::max))
}

// ---------------------------------------------------------------- Langford

struct Langford {
    store: RunStore,
    done: Vec<StageSummary>,
    po_time: Duration,
}

fn langford_pipeline(root: &Path) -> Result<Langford, String> {
    let cfg = load("langford.toml");
    let store = RunStore::new(root);
    let mut sink = Vec::new();
    let clock = Instant::now();
    let mut done = run_config(&cfg, &store, Some("po"), &mut sink).map_err(|e| e.to_string())?;
    let po_time = clock.elapsed();
    for id in ["tr1", "tr2"] {
        done.extend(run_config(&cfg, &store, Some(id), &mut sink).map_err(|e| format!("{id}: {e}"))?);
    }
    Ok(Langford { store, done, po_time })
}

fn criterion_1(l: &Langford) -> Outcome {
    let po = stage(&l.done, "po")?;
    let irho = po.monitor("rho").unwrap();
    let tr: Vec<f64> = po.events(PointType::TR).map(|p| p.monitors[irho]).collect();
    let ok = tr.len() == 1 && (tr[0] - 0.6154).abs() < 0.005 && l.po_time < Duration::from_secs(120);
    check(ok, format!("TR at rho = {tr:?} (target 0.6154 +- 0.005), {:.1} s", l.po_time.as_secs_f64()))
}

fn criterion_2(l: &Langford) -> Outcome {
    let tr1 = stage(&l.done, "tr1")?;
    let tr2 = stage(&l.done, "tr2")?;
    let start = &tr1.points[0];
    // the stored first point, rebuilt from disk, satisfies the torus equations
    let released = ["varrho", "rho", "om1", "om2"];
    let r = restart_tor2tor(&l.store, "tr1", start.label.unwrap(), &released).map_err(|e| e.to_string())?;
    let res = r.problem.residual(&r.start.u).map_err(|e| e.to_string())?.amax();
    let snap = l.store.read_solution("tr1", 1).map_err(|e| e.to_string())?.into_torus().map_err(|e| e.to_string())?;
    let steps = tr1.points.len() - 1;
    let eps_spread = monitor_spread(tr1, "eps")?;
    let varrho_spread = monitor_spread(tr2, "varrho")?;
    let ivarrho = tr1.monitor("varrho").unwrap();
    let moved = (tr1.points.last().unwrap().monitors[ivarrho] - start.monitors[ivarrho]).abs();
    let ok = snap.segments.len() == 101
        && start.iterations <= 10
        && res < 1e-8
        && steps >= 20
        && eps_spread < 1e-10
        && moved > 1e-3
        && varrho_spread < 1e-10
        && tr2.points.len() > 1;
    check(
        ok,
        format!(
            "{} segments, start Newton {} it, residual {res:.1e}, {steps} points, eps spread {eps_spread:.1e}, \
             restart varrho spread {varrho_spread:.1e} over {} points",
            snap.segments.len(),
            start.iterations,
            tr2.points.len()
        ),
    )
}

fn criterion_3(l: &Langford) -> Outcome {
    let tr1 = stage(&l.done, "tr1")?;
    let labels: Vec<u32> = tr1
        .labeled()
        .filter(|p| matches!(p.kind, Some(PointType::EP) | Some(PointType::RO)))
        .filter_map(|p| p.label)
        .take(5)
        .collect();
    if labels.len() < 5 {
        return Err(format!("only {} EP/RO labels", labels.len()));
    }
    let vf = builtin("langford").unwrap();
    let fine_mesh = Arc::new(build_mesh(40, 4).unwrap());
    let released = ["varrho", "rho", "om1", "om2"];
    let settings = load("langford.toml").config.stages[1].cont.settings();
    let mut ok = true;
    let mut parts = Vec::new();
    for label in labels {
        let snap = l.store.read_solution("tr1", label).map_err(|e| e.to_string())?;
        let sol = snap.into_torus().and_then(|t| t.solution()).map_err(|e| e.to_string())?;
        let coarse = validate_invariance(vf.as_ref(), &sol, 20).map_err(|e| e.to_string())?;
        let fine = resample(vf.as_ref(), &sol, 100, fine_mesh.clone()).map_err(|e| e.to_string())?;
        let fp = TorusProblem::new(vf.clone(), &fine, &released).map_err(|e| e.to_string())?;
        let seed = fp.unit_vector("rho").unwrap();
        let (u, _) = correct(&fp, &Start::with_seed(fp.to_vector(&fine), seed), &settings).map_err(|e| e.to_string())?;
        let refined = validate_invariance(vf.as_ref(), &fp.solution(&u), 20).map_err(|e| e.to_string())?;
        ok &= coarse.max < 1e-3 && refined.max < coarse.max;
        parts.push(format!("{label}: {:.1e} -> {:.1e}", coarse.max, refined.max));
    }
    check(ok, format!("max deviation N=50/NTST=20 -> N=100/NTST=40: {}", parts.join(", ")))
}

fn criterion_9(l: &Langford, scratch: &Path) -> Outcome {
    // every stored snapshot re-serializes to exactly the bytes on disk and
    // survives a solution rebuild unchanged
    let mut files = 0;
    for run in ["po", "tr1", "tr2"] {
        for label in l.store.labels(run, None).map_err(|e| e.to_string())? {
            let path = l.store.run_dir(run).join(format!("sol_{label}.json"));
            let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
            let snap = l.store.read_solution(run, label).map_err(|e| e.to_string())?;
            if serde_json::to_string(&snap).unwrap() != text.trim_end() {
                return Err(format!("{} does not round-trip", path.display()));
            }
            if let Snapshot::Torus(t) = &snap {
                let sol = t.solution().map_err(|e| e.to_string())?;
                let again = TorusSnapshot::new(&t.system, &sol, &t.released, t.point.clone());
                if &again != t {
                    return Err(format!("{} changes when rebuilt", path.display()));
                }
            }
            files += 1;
        }
    }
    // replay tr1 and tr2 from a copy of the po run directory alone
    let replay = RunStore::new(scratch);
    copy_dir(&l.store.run_dir("po"), &replay.run_dir("po")).map_err(|e| e.to_string())?;
    let cfg = load("langford.toml");
    let mut sink = Vec::new();
    for id in ["tr1", "tr2"] {
        run_config(&cfg, &replay, Some(id), &mut sink).map_err(|e| format!("replay {id}: {e}"))?;
    }
    let mut same = true;
    for id in ["tr1", "tr2"] {
        let a = std::fs::read(l.store.run_dir(id).join("bd.jsonl")).map_err(|e| e.to_string())?;
        let b = std::fs::read(replay.run_dir(id).join("bd.jsonl")).map_err(|e| e.to_string())?;
        same &= a == b;
    }
    check(same, format!("{files} snapshots re-serialize bit-exactly; replayed tr1/tr2 tables identical: {same}"))
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        std::fs::copy(e.path(), to.join(e.file_name()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- Van der Pol

fn criterion_4(root: &Path) -> Outcome {
    let cfg = load("vdp.toml");
    let store = RunStore::new(root);
    let clock = Instant::now();
    let done = run_config(&cfg, &store, None, &mut Vec::new()).map_err(|e| e.to_string())?;
    let elapsed = clock.elapsed();
    let first = stage(&done, "vdp_torus")?;
    let snap = store.read_solution("vdp_torus", 1).map_err(|e| e.to_string())?.into_torus().map_err(|e| e.to_string())?;
    let varrho_spread = monitor_spread(first, "varrho")?;
    let second = stage(&done, "vdp_torus_varrho")?;
    let bps: Vec<&_> = second.events(PointType::BP).collect();
    let third = stage(&done, "vdp_torus_bp")?;
    let max_it = cfg.config.stages[2].cont.settings().max_newton_iter;
    let converged_first = third.points.len() > 1 && third.points[1].iterations <= max_it;

    // the switched branch starts at the BP and leaves the primary branch
    let bp = bps.first().ok_or("no BP recorded")?;
    let ia = second.monitor("a").unwrap();
    let iv = second.monitor("varrho").unwrap();
    let shared = third.points[0].monitors.iter().zip(&bp.monitors).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let k = third.points.len().min(6) - 1;
    let q = &third.points[k];
    let off = distance_to_branch(second, ia, iv, q.monitors[ia], q.monitors[iv]);
    let ok = snap.segments.len() == 21
        && snap.mesh.ntst == 40
        && varrho_spread < 1e-10
        && !bps.is_empty()
        && converged_first
        && shared < 1e-6
        && off > 1e-4
        && elapsed < Duration::from_secs(600);
    check(
        ok,
        format!(
            "21 segments/NTST 40: {}, varrho spread {varrho_spread:.1e}, {} BPs, switched step 1 in {} it, \
             BP mismatch {shared:.1e}, step {k} off primary by {off:.1e}, {:.1} s",
            snap.segments.len() == 21 && snap.mesh.ntst == 40,
            bps.len(),
            third.points.get(1).map(|p| p.iterations).unwrap_or(0),
            elapsed.as_secs_f64()
        ),
    )
}

/// Distance in the (a, varrho) plane from a point to the piecewise-linear
/// primary branch.
fn distance_to_branch(branch: &Branch, ia: usize, iv: usize, a: f64, v: f64) -> f64 {
    let mut pts: Vec<(i64, f64, f64)> = branch.points.iter().map(|p| (p.index, p.monitors[ia], p.monitors[iv])).collect();
    pts.sort_by_key(|p| p.0);
    pts.windows(2)
        .map(|w| {
            let (x0, y0, x1, y1) = (w[0].1, w[0].2, w[1].1, w[1].2);
            let (dx, dy) = (x1 - x0, y1 - y0);
            let len2 = dx * dx + dy * dy;
            let s = if len2 > 0.0 { (((a - x0) * dx + (v - y0) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            ((a - x0 - s * dx).powi(2) + (v - y0 - s * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------- matrices

fn criterion_5() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for modes in [1usize, 3, 10, 50] {
        let tol = if modes == 50 { 1e-10 } else { 1e-12 };
        let c = dft_matrix(modes).unwrap();
        let ns = c.n_seg;
        let eye = DMatrix::<f64>::identity(ns, ns);
        let coeffs = DVector::from_fn(ns, |_, _| rng.gen_range(-1.0..1.0));
        let g = |phi: f64| basis_row(modes, phi).dot(&coeffs);
        let samples = DVector::from_iterator(ns, c.angles.iter().map(|&p| g(p)));
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let ra = rotation_matrix(modes, a);
        let shifted = &c.finv * &ra * &c.f * &samples;
        let expected = DVector::from_iterator(ns, c.angles.iter().map(|&p| g(p + 2.0 * PI * a)));
        let deriv: f64 = (1..=modes).map(|k| k as f64 * coeffs[2 * k]).sum();
        let errs = [
            (&c.f * &c.finv - &eye).amax(),
            (&ra.transpose() * &ra - &eye).amax(),
            (&ra * rotation_matrix(modes, b) - rotation_matrix(modes, a + b)).amax(),
            (shifted - expected).amax(),
            (c.phase_weights.dot(&samples) - deriv).abs(),
        ];
        for e in errs {
            worst = worst.max(e / tol);
            ok &= e < tol;
        }
    }
    check(ok, format!("worst error / tolerance = {worst:.2e} over N in {{1, 3, 10, 50}}"))
}

// ---------------------------------------------------------------- collocation

fn linear_ivp_endpoint_error(lam: f64, ntst: usize, m: usize) -> f64 {
    let vf = ClosureField::new("exp", 1, &["lam"], true, |_, y, p, f| f[0] = p[0] * y[0]);
    let mesh = Arc::new(build_mesh(ntst, m).unwrap());
    let nx = mesh.num_basepoints();
    let traj = Trajectory::new(mesh, 1, vec![0.0; nx], 1.0, 0.0).unwrap();
    let jac = segment_jacobian(&vf, &traj, &[lam]).unwrap().to_dense();
    let mut a = DMatrix::zeros(nx, nx);
    a.rows_mut(0, nx - 1).copy_from(&jac.view((0, 0), (nx - 1, nx)));
    a[(nx - 1, 0)] = 1.0;
    let mut b = DVector::zeros(nx);
    b[nx - 1] = 1.0;
    let x = a.lu().solve(&b).unwrap();
    (x[nx - 1] - lam.exp()).abs()
}

fn fitted_slope(h: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

fn criterion_6() -> Outcome {
    let m = 3;
    let ntsts = [2usize, 4, 8, 16];
    let h: Vec<f64> = ntsts.iter().map(|&n| 1.0 / n as f64).collect();
    let end: Vec<f64> = ntsts.iter().map(|&n| linear_ivp_endpoint_error(1.0, n, m)).collect();
    let end_slope = fitted_slope(&h, &end);
    let interior: Vec<f64> = ntsts
        .iter()
        .map(|&n| {
            let mesh = Arc::new(build_mesh(4 * n, m).unwrap());
            let traj = Trajectory::from_fn(mesh, 1, 0.0, 1.0, |t| Ok(vec![(2.0 * t).exp()])).unwrap();
            (0..997)
                .map(|i| {
                    let t = (i as f64 + 0.5) / 997.0;
                    (interpolate(&traj, t).unwrap()[0] - (2.0 * t).exp()).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let int_slope = fitted_slope(&h, &interior);
    let ok = (end_slope - 2.0 * m as f64).abs() < 0.5 && (int_slope - (m + 1) as f64).abs() < 0.5;
    check(ok, format!("endpoint slope {end_slope:.2} (target 6), interpolation slope {int_slope:.2} (target 4)"))
}

// ---------------------------------------------------------------- monodromy

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let n = a.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &b / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

fn criterion_7() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let period = rng.gen_range(0.5..2.0);
        let vf = LinearField::new(a.clone()).unwrap();
        let d = floquet_at(&vf, &[0.0; 3], 0.0, period, &[]).map_err(|e| e.to_string())?;
        let mut oracle: Vec<Complex<f64>> = expm_taylor(&(a * period)).complex_eigenvalues().iter().copied().collect();
        for mu in &d.multipliers {
            let (i, dist) = oracle
                .iter()
                .enumerate()
                .map(|(i, e)| (i, (e - mu).norm()))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            worst = worst.max(dist);
            oracle.remove(i);
        }
    }
    check(worst < 1e-6, format!("max multiplier deviation {worst:.1e} over 20 random systems"))
}

// ---------------------------------------------------------------- deficit

fn criterion_8(langford: &RunStore, vdp: &Path) -> Outcome {
    let vdp = RunStore::new(vdp);
    let mut parts = Vec::new();
    let mut ok = true;
    for (store, run, released) in [
        (langford, "tr1", ["varrho", "rho", "om1", "om2"]),
        (&vdp, "vdp_torus", ["a", "Om2", "om2", "om1"]),
    ] {
        let snap = store.read_solution(run, 1).and_then(Snapshot::into_torus).map_err(|e| e.to_string())?;
        let vf = builtin(&snap.system).unwrap();
        let sol = snap.solution().map_err(|e| e.to_string())?;
        let p0 = TorusProblem::with_released_unchecked(vf.clone(), &sol, &[]).map_err(|e| e.to_string())?;
        let rejected = TorusProblem::new(vf.clone(), &sol, &[]).is_err();
        let p4 = TorusProblem::new(vf.clone(), &sol, &released).map_err(|e| e.to_string())?;
        let u = p4.to_vector(&sol);
        let op = p4.linearize(&u).map_err(|e| e.to_string())?;
        // one pseudo-arclength row makes the bordered system square
        let square = op.num_equations() + 1 == op.num_unknowns() && p4.residual(&u).unwrap().len() == op.num_equations();
        ok &= p0.dimension_deficit() == -3 && rejected && square;
        parts.push(format!(
            "{} (autonomous: {}): deficit {} with 0 released, bordered {}x{} with 4 released",
            snap.system,
            vf.autonomous(),
            p0.dimension_deficit(),
            op.num_equations() + 1,
            op.num_unknowns()
        ));
    }
    check(ok, parts.join("; "))
}

// ---------------------------------------------------------------- main

fn report(n: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    match outcome {
        Ok(msg) => println!("PASS criterion {n}: {name} -- {msg}"),
        Err(msg) => {
            *failures += 1;
            println!("FAIL criterion {n}: {name} -- {msg}");
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut failures = 0;
    let langford = langford_pipeline(&tmp.path().join("langford"));
    let vdp_root = tmp.path().join("vdp");
    let on_langford = |f: &dyn Fn(&Langford) -> Outcome| match &langford {
        Ok(l) => f(l),
        Err(e) => Err(format!("Langford pipeline failed: {e}")),
    };
    report(1, "Langford TR detection", on_langford(&criterion_1), &mut failures);
    report(2, "Langford torus family", on_langford(&criterion_2), &mut failures);
    report(3, "torus invariance oracle", on_langford(&criterion_3), &mut failures);
    report(4, "Van der Pol pipeline", criterion_4(&vdp_root), &mut failures);
    report(5, "matrix property suite", criterion_5(), &mut failures);
    report(6, "collocation order", criterion_6(), &mut failures);
    report(7, "monodromy oracle", criterion_7(), &mut failures);
    report(
        8,
        "dimension-deficit accounting",
        on_langford(&|l| criterion_8(&l.store, &vdp_root)),
        &mut failures,
    );
    report(
        9,
        "persistence",
        on_langford(&|l| criterion_9(l, &tmp.path().join("replay"))),
        &mut failures,
    );
    println!("{} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
