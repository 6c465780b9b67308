use std::fs;

use bubblepair::chaos::{AttractorClass, AttractorRecord, LyapunovSpectrum, ParamPoint, PoincareSet, Synchrony};
use bubblepair::continuation::{
    Arm, Axis, Branch, BranchPoint, CellOutcome, ChartCell, ChartGrid, GridAxis, Termination, JUMP_EVENT,
};
use bubblepair::io::{
    chart_csv, config_to_json, parse_config, parse_config_str, poincare_csv, sweep_csv, write_outputs, JobStatus,
    RunManifest, RunResults,
};
use bubblepair::{Error, State};

fn record(eps: f64, exps: [f64; 5], class: Option<AttractorClass>, period: Option<usize>) -> AttractorRecord {
    let s = State::new(1.0, 0.0, 1.0, 0.0, 0.0);
    AttractorRecord {
        point: ParamPoint {
            p_ac: 1.2e6,
            d_ratio: 21.0,
            eps,
        },
        initial_state: s,
        final_state: s,
        spectrum: LyapunovSpectrum::from_exponents(exps, class.is_some(), 10, 20, exps.iter().sum()),
        class,
        synchrony: Synchrony::Synchronous,
        poincare: PoincareSet {
            samples: vec![[1.0, 0.5, 1.0, 0.5], [0.25, -0.125, 0.25, -0.125]],
            skip: 10,
        },
        period,
    }
}

fn sample_branch() -> Branch {
    Branch {
        label: "sync".into(),
        axis: Axis::Eps,
        arm: Arm::Up,
        points: vec![
            BranchPoint {
                value: 1.0,
                record: record(1.0, [0.04, 0.0, -0.025, -0.28, -0.32], Some(AttractorClass::Chaotic), None),
                event: None,
            },
            BranchPoint {
                value: 1.0005,
                record: record(1.0005, [0.0, -0.0625, -0.125, -0.25, -0.5], None, Some(4)),
                event: Some(JUMP_EVENT.into()),
            },
        ],
        termination: Termination::RangeEnd,
    }
}

#[test]
fn poincare_golden() {
    let ps = record(1.0, [0.0; 5], None, None).poincare;
    let got = String::from_utf8(poincare_csv(&ps).unwrap()).unwrap();
    let want = "k,r1,u1,r2,u2\n\
                0,1.0000000000000000e0,5.0000000000000000e-1,1.0000000000000000e0,5.0000000000000000e-1\n\
                1,2.5000000000000000e-1,-1.2500000000000000e-1,2.5000000000000000e-1,-1.2500000000000000e-1\n";
    assert_eq!(got, want);
}

#[test]
fn sweep_golden() {
    let got = String::from_utf8(sweep_csv(&[sample_branch()]).unwrap()).unwrap();
    let want = "branch,arm,eps,lambda1,lambda2,lambda3,lambda4,lambda5,eff_l1,eff_l2,class,sync,period,event\n\
sync,up,1.0000000000000000e0,4.0000000000000001e-2,0.0000000000000000e0,-2.5000000000000001e-2,-2.8000000000000003e-1,-3.2000000000000001e-1,4.0000000000000001e-2,-2.5000000000000001e-2,Chaotic,Synchronous,,\n\
sync,up,1.0004999999999999e0,0.0000000000000000e0,-6.2500000000000000e-2,-1.2500000000000000e-1,-2.5000000000000000e-1,-5.0000000000000000e-1,-6.2500000000000000e-2,-1.2500000000000000e-1,Unconverged,Synchronous,4,jump\n";
    assert_eq!(got, want);
}

#[test]
fn single_cell_chart_has_one_row() {
    let axis = |param| GridAxis {
        param,
        lo: 1.0,
        hi: 1.0,
        n: 1,
    };
    let grid = ChartGrid {
        x: axis(Axis::DRatio),
        y: axis(Axis::Eps),
        seed_index: (0, 0),
        cells: vec![ChartCell {
            ix: 0,
            iy: 0,
            x_value: 17.5,
            y_value: 1.024,
            initial_state: State::rest(1.0),
            outcome: CellOutcome::Resolved {
                effective: (0.0125, 0.00390625),
                class: AttractorClass::Hyperchaotic,
                converged: true,
                synchrony: Synchrony::NotApplicable,
                final_state: State::rest(1.0),
            },
        }],
    };
    let got = String::from_utf8(chart_csv(&grid).unwrap()).unwrap();
    let want = "ix,iy,x_value,y_value,eff_l1,eff_l2,class,converged\n\
                0,0,1.7500000000000000e1,1.0240000000000000e0,1.2500000000000001e-2,3.9062500000000000e-3,Hyperchaotic,true\n";
    assert_eq!(got, want);

    let mut failed = grid.clone();
    failed.cells[0].outcome = CellOutcome::Failed {
        reason: "breakdown".into(),
    };
    let got = String::from_utf8(chart_csv(&failed).unwrap()).unwrap();
    assert!(got.ends_with("0,0,1.7500000000000000e1,1.0240000000000000e0,,,Failed,false\n"), "{got}");
}

#[test]
fn outputs_written_and_no_temporaries_left() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(&RunResults::Sweep(vec![sample_branch()]), dir.path()).unwrap();
    assert_eq!(paths, vec![dir.path().join("sweep.csv")]);
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, vec!["sweep.csv".to_string()]);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(!text.contains('\r'));
    let jump_row = text.lines().nth(2).unwrap();
    assert!(jump_row.ends_with(",jump"));
}

#[test]
fn failed_write_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    // A directory squatting on the output name makes the final rename fail.
    fs::create_dir(dir.path().join("record.json")).unwrap();
    let rec = record(1.0, [0.04, 0.0, -0.025, -0.28, -0.32], Some(AttractorClass::Chaotic), None);
    let err = write_outputs(&RunResults::Analyze(rec), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io(_)), "{err:?}");
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, vec!["record.json".to_string()]);
}

#[test]
fn config_file_round_trip_and_manifest_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(
        &path,
        r#"{"physical": {"p_ac": 1.68e6, "d_ratio": 24.93},
            "analysis": {"transient_periods": 100, "measure_periods": 400},
            "command": {"kind": "chart",
                        "x": {"param": "d_ratio", "lo": 6, "hi": 35, "n": 4},
                        "y": {"param": "pac", "lo": 1.2e6, "hi": 1.8e6, "n": 3},
                        "seed": {"x": 17.5, "y": 1.52e6, "state": {"r1": 1.09, "u1": -0.47, "r2": 0.77, "u2": 0.49}}}}"#,
    )
    .unwrap();
    let cfg = parse_config(&path).unwrap();
    let again = parse_config_str(&config_to_json(&cfg).unwrap()).unwrap();
    assert_eq!(cfg, again);

    let manifest = RunManifest::new(
        cfg.clone(),
        std::time::Duration::from_millis(1500),
        vec![JobStatus {
            job: "chart".into(),
            ok: true,
            detail: String::new(),
        }],
    );
    let mpath = manifest.write(dir.path()).unwrap();
    assert_eq!(parse_config(&mpath).unwrap(), cfg);
}

#[test]
fn missing_file_is_io_error() {
    let err = parse_config(std::path::Path::new("/nonexistent/run.json")).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

#[test]
fn unknown_key_is_named_with_its_path() {
    match parse_config_str(r#"{"physical": {"pp": 1}}"#).unwrap_err() {
        Error::Config { key, .. } => assert_eq!(key, "physical.pp"),
        other => panic!("{other:?}"),
    }
    match parse_config_str(r#"{"analysis": {"measure_periods": -1}}"#).unwrap_err() {
        Error::Config { key, .. } => assert_eq!(key, "analysis.measure_periods"),
        other => panic!("{other:?}"),
    }
}
