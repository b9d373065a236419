//! Library-level runs across modules on small arrays.

use qsirs::eval::{mask_levels, run_experiment, ExperimentKind, ExperimentOptions};
use qsirs::optimizer::{optimize, Method};
use qsirs::quantize::{assemble, build_catalog, quantize, read_bom_csv, AssemblyMap, TransformSet};
use qsirs::Scenario;

#[test]
fn joint_and_ao_agree_on_four_by_four() {
    let s = Scenario::comparison(4);
    let joint = optimize(&s, Method::Joint, 0).unwrap();
    let ao = optimize(&s, Method::Ao, 0).unwrap();
    let focus = optimize(&s, Method::Focus, 0).unwrap();
    assert!(
        (joint.rho_db - ao.rho_db).abs() < 0.75,
        "joint {} ao {}",
        joint.rho_db,
        ao.rho_db
    );
    assert!(ao.rho_db > focus.rho_db);
    for sol in [&joint, &ao] {
        let (rho, side, _, _) = mask_levels(&s, &sol.w).unwrap();
        assert!((rho - sol.rho_db).abs() < 1e-9);
        assert!(rho - side >= s.solver.delta_db() - 1e-6, "gap {}", rho - side);
    }
    let trace = &ao.traces.ao_rho_db;
    assert!(trace.windows(2).all(|p| p[1] >= p[0] - 1e-9));
}

#[test]
fn quantized_map_round_trips_through_files() {
    let s = Scenario::comparison(4);
    let sol = optimize(&s, Method::Ao, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for set in [TransformSet::MirrorOnly, TransformSet::MirrorRotation] {
        for bits in 1..=4 {
            let q = quantize(&s, &sol, bits).unwrap();
            let map = assemble(&q, &build_catalog(bits, set).unwrap()).unwrap();
            let p = dir.path().join("a.json");
            map.write_json(&p).unwrap();
            let back = AssemblyMap::read_json(&p).unwrap();
            assert_eq!(back.reconstruct_levels().unwrap(), q.levels);
        }
    }
}

#[test]
fn quantization_experiment_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let opts = ExperimentOptions {
        out_root: dir.path().to_path_buf(),
        sizes: Some(vec![4]),
        pattern_step_deg: 10.0,
        ..ExperimentOptions::default()
    };
    let report = run_experiment(ExperimentKind::Quantization, &Scenario::comparison(4), &opts).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert!(report.rows.iter().all(|r| r.error.is_none()));
    let continuous = report.rows[0].rho_db.unwrap();
    let four_bit = report.rows[4].rho_db.unwrap();
    assert!(continuous - four_bit < 1.0);
    for f in ["metrics.csv", "scenario.json", "assembly_2bit.json", "bom_2bit.csv"] {
        assert!(report.dir.join(f).exists(), "{f} missing");
    }
    let bom = read_bom_csv(report.dir.join("bom_2bit.csv")).unwrap();
    assert_eq!(bom.iter().map(|l| l.count).sum::<usize>(), 16);
}
