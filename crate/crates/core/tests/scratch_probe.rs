// Temporary development probe; removed before release.
use ovs_core::electrostatics::{half_wave_voltage, mean_field_angle, solve_potential, FieldError};
use ovs_core::mesh::{optical_path_samples, VoxelMesh};
use ovs_core::scene::{ElectrodeMode, Scene};

#[test]
#[ignore]
fn probe_sections() {
    use ovs_core::mechanics::stress_along_path;
    use ovs_core::sweep::{evaluate_mode_detailed, EvalOptions};
    for (name, y) in [("cu_10_0", 0.0), ("cu_10_0", -1e-6), ("ito_0_5", 0.0)] {
        let mut scene = Scene::default_scene().with_mode(ElectrodeMode::builtin(name).unwrap());
        scene.path.entry[1] = y;
        let mode = scene.electrode.clone().unwrap();
        let eval = evaluate_mode_detailed(&scene, &mode, EvalOptions { keep_stress: true }).unwrap();
        let last_stress = eval.stress_snapshots.last().unwrap();
        let path_stress = stress_along_path(last_stress, &eval.samples);
        let sections = eval.sections_snapshots.last().unwrap();
        println!("== {name} path y = {y}: final error {:.3e}", eval.result.curve.last().unwrap().error);
        for (m, (s, sec)) in path_stress.iter().zip(sections).enumerate() {
            println!(
                "  s{m:02} sxx {:9.2e} syy {:9.2e} szz {:9.2e} sxy {:9.2e} syz {:9.2e} szx {:9.2e} | dn {:9.2e} th {:7.3} dm {:9.2e}",
                s.xx, s.yy, s.zz, s.xy, s.yz, s.zx, sec.delta_n, sec.theta_signed, sec.delta_m
            );
        }
    }
}

#[test]
#[ignore]
fn probe_thermal() {
    use ovs_core::thermal::run_transient;
    for h_conv in [0.0, 5.0, 10.0, 20.0] {
        let mut scene = Scene::default_scene();
        scene.sim.convection_h = h_conv;
        let t0 = std::time::Instant::now();
        let mesh = VoxelMesh::build(&scene).unwrap();
        let hist = run_transient(&mesh, &scene.sim).unwrap();
        let last = hist.times.len() - 1;
        let mean = hist.crystal_mean(&mesh, last);
        // Max nodal temperature in the crystal region at the end.
        let mut tmax: f64 = 0.0;
        for e in mesh.crystal_elements() {
            for n in mesh.element_active_nodes(e) {
                tmax = tmax.max(hist.fields[last][n]);
            }
        }
        println!(
            "h = {h_conv:5.1}: crystal mean(60s) = {mean:8.3} K, max = {tmax:8.3} K  ({:.2?})",
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_mechanics_timing() {
    use ovs_core::mechanics::{MechBc, ThermoelasticSystem};
    use ovs_core::thermal::run_transient;
    let scene = Scene::default_scene();
    let mesh = VoxelMesh::build(&scene).unwrap();
    println!("active nodes: {}", mesh.n_active_nodes());
    let hist = run_transient(&mesh, &scene.sim).unwrap();
    let t0 = std::time::Instant::now();
    let sys = ThermoelasticSystem::new(&mesh, MechBc::Standard, scene.sim.solver_rel_tol).unwrap();
    println!("assembly: {:.2?}", t0.elapsed());
    let mut prev = None;
    for k in 1..4 {
        let t0 = std::time::Instant::now();
        let f = sys.solve(&hist.fields[k], scene.sim.reference_t(), prev.as_ref()).unwrap();
        println!(
            "snapshot {k}: {} iters, rel res {:.2e}, {:.2?}",
            f.report.iterations,
            f.report.relative_residual,
            t0.elapsed()
        );
        prev = Some(f);
    }
}

#[test]
#[ignore]
fn probe_sweep() {
    use ovs_core::sweep::{compare_modes};
    let scene = Scene::default_scene();
    let modes = ElectrodeMode::builtins();
    let t0 = std::time::Instant::now();
    let report = compare_modes(&scene, &modes).unwrap();
    println!("sweep wall time: {:.1?}", t0.elapsed());
    for r in &report.results {
        println!(
            "{:10} angle {:7.3}  hwv {:10.3e}  total {:10.3e}  corrected {:10.3e}",
            r.name, r.mean_angle, r.hwv, r.total_error, r.corrected_total
        );
        let errs: Vec<String> = r.curve.iter().map(|p| format!("{:9.2e}", p.error)).collect();
        let temps: Vec<String> = r.curve.iter().map(|p| format!("{:6.2}", p.crystal_t)).collect();
        println!("   T: {}", temps.join(" "));
        println!("   e: {}", errs.join(" "));
    }
}

#[test]
#[ignore]
fn probe_angles() {
    for h in [1e-3, 0.5e-3] {
        println!("--- resolution {h}");
        for name in ElectrodeMode::builtin_names() {
            let t0 = std::time::Instant::now();
            let mut scene = Scene::default_scene().with_mode(ElectrodeMode::builtin(name).unwrap());
            scene.sim.mesh_resolution = h;
            let mesh = VoxelMesh::build(&scene).unwrap();
            let samples = optical_path_samples(&mesh, &scene).unwrap();
            let mode = scene.electrode.as_ref().unwrap();
            let field = solve_potential(&mesh, mode, &scene.optics, 1e-10).unwrap();
            let summary = mean_field_angle(&field, &samples).unwrap();
            let hwv = match half_wave_voltage(&mesh, mode, &scene.optics, &samples, 1e-10) {
                Ok(v) => v,
                Err(FieldError::EffectivelyInfiniteHwv) => f64::INFINITY,
                Err(e) => panic!("{e}"),
            };
            println!(
                "{name:10} angle {:8.3} deg   hwv {:12.4e} V   ({:.2?})",
                summary.mean_angle,
                hwv,
                t0.elapsed()
            );
        }
    }
}
