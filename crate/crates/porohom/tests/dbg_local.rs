use porohom::homog;
use porohom::macrobiot::*;
use porohom::matopt::SlpProblem;
use porohom::mesh::CellMesh;
use porohom::spline::SplineBox;
use porohom::tensor::Voigt6;

#[test]
fn debug_local_gradient() {
    let mesh = CellMesh::load_json(std::path::Path::new("/tmp/pcell/cell.json")).unwrap();
    let rec: homog::CoefficientsRecord = serde_json::from_reader(
        std::fs::File::open("/tmp/pcell/coeffs.json").unwrap()).unwrap();
    let h = homog::HomCoefficients::from_record(&rec);
    let mm = MacroMesh::cuboid(MacroConfig::default()).unwrap();
    let coeffs: Vec<MacroCoefficients> = (0..mm.n_subdomains).map(|_| MacroCoefficients::from(&h)).collect();
    let state = solve_state(&mm, &coeffs).unwrap();
    let lift = mm.outlet_lift_indicator();
    let adj = solve_adjoint(&mm, &coeffs, -1.0, &lift).unwrap();
    let e = mm.element_near_inlet();
    let tensors = element_tensors(&mm, &state, &adj, e);
    println!("strain_pair norm {:.3e}", tensors.strain_pair.norm());
    println!("pressure_strain norm {:.3e}", tensors.pressure_strain.norm());
    println!("flow_adjoint norm {:.3e}", tensors.flow_adjoint.norm());
    println!("flow_lift norm {:.3e}", tensors.flow_lift.norm());
    let spline = SplineBox::build([2,2,2],[2,2,2],0.03).unwrap();
    let p = LocalProblem::new(tensors, -1.0, spline, mesh, Voigt6::isotropic(1.0,0.3), 0.0, 1.0, [false,false,true]).unwrap();
    let mut x = vec![0.0; p.dim()];
    let (v0, st) = p.evaluate(&x).unwrap();
    let g = p.gradients(&x, &st).unwrap();
    let gmax = g.objective.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("F_e {:.6e}  grad max {:.3e}", v0.objective, gmax);
    // FD on one alpha coordinate
    let ci = 4;
    let h2 = 1e-5;
    x[ci] = h2;
    let (vp, _) = p.evaluate(&x).unwrap();
    x[ci] = -h2;
    let (vm, _) = p.evaluate(&x).unwrap();
    println!("coord {ci}: analytic {:.6e} fd {:.6e}", g.objective[ci], (vp.objective - vm.objective)/(2.0*h2));
}

#[test]
fn debug_local_slp() {
    let mesh = CellMesh::load_json(std::path::Path::new("/tmp/pcell/cell12.json")).unwrap();
    let rec: homog::CoefficientsRecord = serde_json::from_reader(
        std::fs::File::open("/tmp/pcell/coeffs.json").unwrap()).unwrap();
    let h = homog::HomCoefficients::from_record(&rec);
    let mm = MacroMesh::cuboid(MacroConfig::default()).unwrap();
    let coeffs: Vec<MacroCoefficients> = (0..mm.n_subdomains).map(|_| MacroCoefficients::from(&h)).collect();
    let state = solve_state(&mm, &coeffs).unwrap();
    let lift = mm.outlet_lift_indicator();
    let adj = solve_adjoint(&mm, &coeffs, -1.0, &lift).unwrap();
    let e = mm.element_near_inlet();
    let tensors = element_tensors(&mm, &state, &adj, e);
    let spline = SplineBox::build([3,3,3],[3,3,3],0.02).unwrap();
    let p = LocalProblem::new(tensors, -1.0, spline, mesh, Voigt6::isotropic(1.0,0.3), 0.0, 1.0, [false,false,true]).unwrap();
    let x = vec![0.0; p.dim()];
    let (v0, st) = p.evaluate(&x).unwrap();
    let g = p.gradients(&x, &st).unwrap();
    let gmax = g.objective.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("start F_e {:.6e} grad max {:.3e}", v0.objective, gmax);
    let opts = porohom::matopt::SlpOptions { max_iters: 5, injectivity_samples: 0, ..Default::default() };
    let rec2 = two_scale_local_optimize(&p, x, &opts).unwrap();
    for it in &rec2.iterates {
        println!("iter {} obj {:.8e} merit {:.6e} viol {:.2e} radius {:.3e} step {:.3e} acc {}",
            it.iter, it.objective, it.merit, it.max_violation, it.trust_radius, it.step_norm, it.accepted);
    }
    println!("msg {}", rec2.message);
}

#[test]
fn debug_gradient_distribution() {
    let mesh = CellMesh::load_json(std::path::Path::new("/tmp/pcell/cell12.json")).unwrap();
    let rec: homog::CoefficientsRecord = serde_json::from_reader(
        std::fs::File::open("/tmp/pcell/coeffs.json").unwrap()).unwrap();
    let h = homog::HomCoefficients::from_record(&rec);
    let mm = MacroMesh::cuboid(MacroConfig::default()).unwrap();
    let coeffs: Vec<MacroCoefficients> = (0..mm.n_subdomains).map(|_| MacroCoefficients::from(&h)).collect();
    let state = solve_state(&mm, &coeffs).unwrap();
    let lift = mm.outlet_lift_indicator();
    let adj = solve_adjoint(&mm, &coeffs, -1.0, &lift).unwrap();
    let e = mm.element_near_inlet();
    let tensors = element_tensors(&mm, &state, &adj, e);
    let spline = SplineBox::build([3,3,3],[3,3,3],0.02).unwrap();
    let p = LocalProblem::new(tensors, -1.0, spline, mesh, Voigt6::isotropic(1.0,0.3), 0.0, 1.0, [false,false,true]).unwrap();
    let x = vec![0.0; p.dim()];
    let (_, st) = p.evaluate(&x).unwrap();
    let g = p.gradients(&x, &st).unwrap();
    let mut idx: Vec<usize> = (0..g.objective.len()).collect();
    idx.sort_by(|&a, &b| g.objective[b].abs().partial_cmp(&g.objective[a].abs()).unwrap());
    for &i in idx.iter().take(8) {
        println!("coord {i} ({:?}): g = {:.4e}", p.space.coord(i), g.objective[i]);
    }
    let big = g.objective.iter().filter(|v| v.abs() > 1e-5).count();
    println!("{big} coords with |g| > 1e-5 out of {}", g.objective.len());
    // FD on an interior alpha coordinate with a solid step
    let ci = 3 * 62 + 1; // master (2,2,2) dim 1
    let mut xx = x.clone();
    let h2 = 1e-4;
    xx[ci] = h2;
    let (vp, _) = p.evaluate(&xx).unwrap();
    xx[ci] = -h2;
    let (vm, _) = p.evaluate(&xx).unwrap();
    println!("alpha coord {ci}: analytic {:.6e} fd {:.6e}", g.objective[ci], (vp.objective - vm.objective)/(2.0*h2));
}
