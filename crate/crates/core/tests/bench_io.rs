mod common;

use nalgebra::DVector;
use serde_json::Value;

use common::*;
use phsyn::experiment::{run_table1_experiment, write_table_csv};
use phsyn::hinf::sigma_sweep;
use phsyn::io::{
    load_controller, load_plant, plant_from_json, plant_to_json, save_controller, save_plant, save_state_space,
    write_popov_csv, write_sigma_csv, LoadedController, LoadedPlant, SampledPlant,
};
use phsyn::linalg::logspace;
use phsyn::msd::{msd_plant, MSDConfig};
use phsyn::passivity::popov_sweep;
use phsyn::ph::{theta_to_controller, validate_ph_form, ThetaLayout, ThetaVector, DEFAULT_Q_SHIFT};
use phsyn::synthesis::{initial_theta, loss, SynthesisConfig};
use phsyn::{Error, PlantEvaluator, PlantResponse, ToleranceSet};

#[test]
fn generated_plants_are_port_hamiltonian() {
    for n_masses in [1, 2, 5, 10, 50] {
        for damper in [0.0, 1.0] {
            let cfg = MSDConfig {
                damper,
                ..MSDConfig::new(n_masses)
            };
            let plant = msd_plant(&cfg).unwrap();
            assert_eq!(plant.states(), 2 * n_masses);
            assert!(validate_ph_form(plant.ph(), &ToleranceSet::default()).passed());
            let back = plant_from_json(&plant_to_json(&plant).unwrap()).unwrap();
            assert_eq!(back.ph(), plant.ph());
            assert_eq!(back.b1(), plant.b1());
            assert_eq!(back.d21(), plant.d21());
        }
    }
}

#[test]
fn plant_file_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plant.json");
    let plant = msd_plant(&MSDConfig::new(5)).unwrap();
    save_plant(&plant, &path).unwrap();
    let LoadedPlant::Model(back) = load_plant(&path).unwrap() else {
        panic!("expected a model");
    };
    let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(back.ph().q()), bits(plant.ph().q()));
    assert_eq!(bits(back.c1()), bits(plant.c1()));
    let text = std::fs::read_to_string(&path).unwrap();
    let value: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["format"], "ph-plant/v1");
    for key in ["j", "r", "q", "g", "f", "s", "n", "b1", "c1", "d11", "d12", "d21"] {
        assert!(value.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn unknown_format_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plant.json");
    std::fs::write(&path, r#"{"format": "ph-plant/v9"}"#).unwrap();
    assert!(matches!(load_plant(&path), Err(Error::Schema(_))));
    std::fs::write(&path, "not json").unwrap();
    assert!(matches!(load_plant(&path), Err(Error::Schema(_))));
}

#[test]
fn indefinite_dissipation_is_named() {
    let plant = msd_plant(&MSDConfig::new(2)).unwrap();
    let mut value: Value = serde_json::from_str(&plant_to_json(&plant).unwrap()).unwrap();
    value["r"][0][0] = Value::from(-1.0);
    let err = plant_from_json(&value.to_string()).unwrap_err();
    assert!(err.to_string().contains("W positive semidefiniteness"), "{err}");
}

#[test]
fn controller_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ctrl = theta_to_controller(&initial_theta(ThetaLayout::new(3, 2), 5), DEFAULT_Q_SHIFT);
    let ph_path = dir.path().join("k.json");
    save_controller(&ctrl, &ph_path).unwrap();
    let LoadedController::Ph(back) = load_controller(&ph_path).unwrap() else {
        panic!("expected a port-Hamiltonian controller");
    };
    assert_eq!(back, ctrl);
    let ss_path = dir.path().join("k_ss.json");
    save_state_space(&ctrl.to_state_space(), &ss_path).unwrap();
    let LoadedController::StateSpace(ss) = load_controller(&ss_path).unwrap() else {
        panic!("expected a state-space controller");
    };
    assert_eq!(ss.a(), ctrl.to_state_space().a());
}

#[test]
fn sampled_plant_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sampled.json");
    let plant = msd_plant(&MSDConfig::new(3)).unwrap();
    let sampled = SampledPlant::from_model(&plant, &logspace(1e-2, 1e2, 30)).unwrap();
    sampled.save(&path).unwrap();
    let LoadedPlant::Sampled(back) = load_plant(&path).unwrap() else {
        panic!("expected a sampled plant");
    };
    assert_eq!(back.frequencies(), sampled.frequencies());
    for w in back.frequencies() {
        assert_eq!(back.evaluate(w).unwrap().p12, sampled.evaluate(w).unwrap().p12);
    }
}

#[test]
fn sampled_and_model_losses_agree() {
    let plant = msd_plant(&MSDConfig::new(5)).unwrap();
    let omegas = logspace(1e-3, 1e3, 200);
    let sampled = SampledPlant::from_model(&plant, &omegas).unwrap();
    let model = PlantEvaluator::new(&plant);
    for seed in 0..5 {
        let theta = initial_theta(ThetaLayout::new(2, 2), seed);
        for gamma in [0.05, 0.2, 0.4] {
            let a = loss(gamma, &sampled, &theta, &omegas).unwrap();
            let b = loss(gamma, &model, &theta, &omegas).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn sampled_plant_refuses_foreign_frequencies() {
    let plant = msd_plant(&MSDConfig::new(2)).unwrap();
    let sampled = SampledPlant::from_model(&plant, &[0.1, 1.0, 10.0]).unwrap();
    let theta = ThetaVector::new(ThetaLayout::new(1, 2), DVector::from_element(ThetaLayout::new(1, 2).len(), 0.3))
        .unwrap();
    assert!(matches!(loss(0.1, &sampled, &theta, &[0.5]), Err(Error::MissingSample { .. })));
}

#[test]
fn csv_outputs_have_headers() {
    let plant = msd_plant(&MSDConfig::new(2)).unwrap();
    let ss = plant.ph().to_state_space();
    let grid = logspace(0.1, 10.0, 5);
    let mut sigma = Vec::new();
    write_sigma_csv(&mut sigma, &sigma_sweep(&ss, &grid).unwrap()).unwrap();
    let sigma = String::from_utf8(sigma).unwrap();
    assert_eq!(sigma.lines().next(), Some("omega,sigma_1,sigma_2"));
    assert_eq!(sigma.lines().count(), 6);
    let mut popov = Vec::new();
    write_popov_csv(&mut popov, &popov_sweep(&ss, &grid).unwrap()).unwrap();
    let popov = String::from_utf8(popov).unwrap();
    assert_eq!(popov.lines().next(), Some("omega,eig_1,eig_2"));
}

#[test]
fn small_benchmark_table() {
    let cells = run_table1_experiment(&[1], &[4, 10], &MSDConfig::new(2), &SynthesisConfig::default());
    assert_eq!(cells.len(), 2);
    for cell in &cells {
        assert!(cell.error.is_none(), "{:?}", cell.error);
        assert!(cell.hinf.unwrap() > 0.0);
    }
    let ten = cells.iter().find(|c| c.n == 10).unwrap().hinf.unwrap();
    assert!((0.44..=0.55).contains(&ten), "{ten}");
    let mut out = Vec::new();
    write_table_csv(&mut out, &cells).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("n,metric,k=1\n4,hinf-norm,"));
}

#[test]
fn sampled_plant_blocks_match_reference_evaluation() {
    let plant = msd_plant(&MSDConfig::new(3)).unwrap();
    let sampled = SampledPlant::from_model(&plant, &[0.4, 2.0]).unwrap();
    let pp = plant.partitioned();
    for w in [0.4, 2.0] {
        let reference = dense_transfer(&pp.a, &pp.b2, &pp.c2, &pp.d22, C::new(0.0, w));
        let got = &sampled.evaluate(w).unwrap().p22;
        assert!((got - reference).iter().all(|z| z.norm() < 1e-12));
    }
}
