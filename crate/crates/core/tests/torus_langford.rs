use std::f64::consts::PI;
use std::sync::Arc;

use torcont::colloc::build_mesh;
use torcont::contin::{correct, run, Bound, Branch, ContinuationSettings, PointType, Start, ZeroProblem};
use torcont::odesys::builtin_langford;
use torcont::po::{PeriodicOrbit, PoProblem};
use torcont::store::{
    po_snapshots, restart_tor2tor, restart_tr2tor, run_meta, torus_snapshots, RunStore, SolutionKind,
};
use torcont::torus::validate_invariance;
use torcont::Error;

fn po_run(store: &RunStore) -> Branch {
    let vf = builtin_langford();
    let mesh = Arc::new(build_mesh(20, 4).unwrap());
    let t = 2.0 * PI / 3.5;
    let orbit = PeriodicOrbit::from_simulation(vf.as_ref(), mesh, &[0.3, 0.4, 0.0], &[3.5, 1.5, 0.0], 100.0 * t, t).unwrap();
    let mut prob = PoProblem::new(vf, &orbit, &["rho"]).unwrap();
    let settings = ContinuationSettings {
        h0: 0.05,
        h_max: 0.2,
        pt_max: 100,
        bounds: vec![Bound { monitor: "rho".into(), min: Some(0.2), max: Some(2.0) }],
        ..Default::default()
    };
    let start = Start::new(prob.to_vector(&orbit));
    let br = run(&mut prob, &start, &settings).unwrap();
    let snaps = po_snapshots("langford", &prob, &br).unwrap();
    let meta = run_meta("po", SolutionKind::Po, "langford", &prob.released_names(), &prob, &settings, &br);
    store.write_run(&meta, &br, &snaps).unwrap();
    br
}

#[test]
fn langford_tori_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let po = po_run(&store);
    let tr = po.events(PointType::TR).next().expect("a TR point").label.unwrap();
    let released = ["varrho", "rho", "om1", "om2"];

    // degenerate perturbation and wrong point types are rejected
    assert!(matches!(restart_tr2tor(&store, "po", tr, None, Some(0.0), &released), Err(Error::Config(_))));
    assert!(matches!(restart_tr2tor(&store, "po", 1, None, None, &released), Err(Error::Type(_))));
    assert!(matches!(restart_tor2tor(&store, "po", tr, &released), Err(Error::Type(_))));

    // default N = 10 gives 21 segments
    let mut r = restart_tr2tor(&store, "po", tr, None, None, &released).unwrap();
    assert_eq!(r.problem.modes, 10);
    let settings = ContinuationSettings {
        h0: 0.01,
        h_min: 1e-3,
        h_max: 0.02,
        pt_max: 12,
        npr: 4,
        bi_direct: false,
        ..Default::default()
    };
    let (_, it) = correct(&r.problem, &r.start, &settings).unwrap();
    assert!(it <= 10);
    let br = run(&mut r.problem, &r.start, &settings).unwrap();
    assert_eq!(br.points.len(), 13);
    let ieps = br.monitor("eps").unwrap();
    let ivarrho = br.monitor("varrho").unwrap();
    assert!(br.points.iter().all(|p| p.monitors[ieps] == 0.0));
    assert!((br.points[12].monitors[ivarrho] - br.points[0].monitors[ivarrho]).abs() > 1e-3);
    for p in br.labeled() {
        let rep = validate_invariance(r.vf.as_ref(), &r.problem.solution(&p.u), 20).unwrap();
        assert!(rep.max < 1e-3, "label {:?}: {}", p.label, rep.max);
    }
    let snaps = torus_snapshots("langford", &r.problem, &br).unwrap();
    let meta = run_meta("tr1", SolutionKind::Torus, "langford", &r.problem.released, &r.problem, &settings, &br);
    store.write_run(&meta, &br, &snaps).unwrap();

    // a restart rebuilds the discretization exactly and is already converged
    let last = *store.labels("tr1", Some(PointType::EP)).unwrap().last().unwrap();
    let r0 = restart_tor2tor(&store, "tr1", last, &released).unwrap();
    let stored = snaps.iter().find(|s| s.point().label == last).unwrap().clone().into_torus().unwrap();
    assert_eq!(r0.problem.modes, stored.modes);
    assert_eq!(r0.problem.mesh.ntst, stored.mesh.ntst);
    assert!(r0.problem.residual(&r0.start.u).unwrap().amax() < 1e-8);
    let (u, it) = correct(&r0.problem, &r0.start, &settings).unwrap();
    assert_eq!(it, 0);
    assert_eq!(u, r0.start.u);

    // releasing eps instead of varrho keeps varrho fixed
    let mut r2 = restart_tor2tor(&store, "tr1", last, &["eps", "rho", "om1", "om2"]).unwrap();
    let br2 = run(&mut r2.problem, &r2.start, &ContinuationSettings { pt_max: 8, bi_direct: true, ..settings }).unwrap();
    let v0 = br2.points[0].monitors[ivarrho];
    assert!(br2.points.iter().all(|p| (p.monitors[ivarrho] - v0).abs() < 1e-10));
    assert!(br2.points.iter().any(|p| p.monitors[ieps].abs() > 1e-3));
}
