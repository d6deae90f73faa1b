mod common;

use ltn_core::closed_loop::{certificate_for, lyapunov_decrease_check, lyapunov_floor, run_closed_loop};
use ltn_core::scenarios::{random_initial_state, resolve_system, run_pipeline, RunConfig, RunOutput};
use ltn_core::synthesis::{synthesize, validate_certificate};
use ltn_core::{Controller, ControllerKind, DisturbanceSpec, LtnError, SynthesisOptions, SynthesisResult, VertexMode};

fn rodent(kind: ControllerKind, t_d: usize) -> RunOutput {
    let mut cfg = RunConfig::rodent(kind);
    cfg.t_d = t_d;
    cfg.vertex_mode = Some(VertexMode::Reduced);
    let resolved = resolve_system(&cfg, None).unwrap();
    run_pipeline(&cfg, &resolved, &SynthesisOptions::default()).unwrap()
}

#[test]
fn rodent_feedforward_is_certified_and_tracks() {
    let out = rodent(ControllerKind::Feedforward, 40);
    let res = &out.result;
    assert_eq!((res.k1.shape(), res.k2.shape()), ((5, 4), (5, 4)));
    assert!(res.gamma > 0.0 && res.p_min_eig > 0.0);
    let rep = validate_certificate(res, &out.data, res.alpha, true);
    assert!(rep.pass, "{:?}", rep.failures);
    assert!(rep.worst_vertex() >= -1e-8);
    assert!(out.trace.final_error_inf() < 1e-2);

    let sys = ltn_core::scenarios::rodent_system();
    let zm_model = sys.w() + sys.b() * &res.k1;
    assert!((&res.zm - zm_model).amax() < 1e-8);
}

#[test]
fn rodent_integral_is_certified_and_tracks() {
    let out = rodent(ControllerKind::Integral, 40);
    let res = &out.result;
    assert!(res.zu_min_singular_value().unwrap() > 1e-8);
    let rep = validate_certificate(res, &out.data, res.alpha, true);
    assert!(rep.pass, "{:?}", rep.failures);
    assert!(out.trace.final_error_inf() < 1e-2);
    let xi_star = out.xi_star.as_ref().unwrap();
    let xi_end = out.trace.xi.as_ref().unwrap().last().unwrap();
    assert!((xi_end - xi_star).amax() < 1e-3);
    let floor = lyapunov_floor(res, &out.reference, Some(xi_star));
    assert!(floor < 1e-5);
    let (violations, checked, _) = lyapunov_decrease_check(&out.trace, Some(xi_star), floor).unwrap();
    assert!(checked > 0);
    assert_eq!(violations, 0);
}

#[test]
fn lyapunov_function_decreases_along_feedforward_runs() {
    let out = rodent(ControllerKind::Feedforward, 40);
    let sys = ltn_core::scenarios::rodent_system();
    let cert = certificate_for(&out.result, &out.reference).unwrap();
    let ctrl = Controller::from_result(&out.result, out.reference.clone());
    for seed in 0..10 {
        let x0 = random_initial_state(&sys, 1000 + seed);
        let trace = run_closed_loop(&sys, &ctrl, &x0, 600, DisturbanceSpec::None, 0, Some(&cert)).unwrap();
        let floor = lyapunov_floor(&out.result, &out.reference, None);
        let (violations, _, _) = lyapunov_decrease_check(&trace, None, floor).unwrap();
        assert_eq!(violations, 0, "seed {seed}");
    }
}

#[test]
fn result_json_round_trips() {
    let out = rodent(ControllerKind::Integral, 40);
    let text = out.result.to_json();
    let back = SynthesisResult::from_json(&text).unwrap();
    assert_eq!(back, out.result);
    assert!(SynthesisResult::from_json("{\"gamma\": 1}").is_err());
}

#[test]
fn pipeline_is_deterministic() {
    let a = rodent(ControllerKind::Feedforward, 40);
    let b = rodent(ControllerKind::Feedforward, 40);
    assert_eq!(a.dataset.to_json(), b.dataset.to_json());
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
}

#[test]
fn integral_design_with_fewer_inputs_than_nodes_is_infeasible() {
    let mut rng = common::rng(4);
    let (_, _, dm) = common::rich_instance(&mut rng, 3, 1, 30);
    let err = synthesize(&dm, ControllerKind::Integral, &SynthesisOptions::default()).unwrap_err();
    assert!(matches!(err, LtnError::Infeasible(_)), "{err}");
}

#[test]
fn arousal_designs_are_reported_infeasible() {
    for kind in [ControllerKind::Feedforward, ControllerKind::Integral] {
        let cfg = RunConfig::arousal(kind);
        let resolved = resolve_system(&cfg, None).unwrap();
        let a = resolved.arousal.as_ref().unwrap();
        assert!((a.phi.transpose() * resolved.system.b())[(0, 0)] < 0.0);
        let err = run_pipeline(&cfg, &resolved, &SynthesisOptions::default()).unwrap_err();
        assert!(matches!(err, LtnError::Infeasible(_)), "{kind:?}: {err}");
    }
}

#[test]
fn poor_data_are_rejected_before_solving() {
    let mut cfg = RunConfig::rodent(ControllerKind::Feedforward);
    cfg.t_d = 8;
    let resolved = resolve_system(&cfg, None).unwrap();
    let err = run_pipeline(&cfg, &resolved, &SynthesisOptions::default()).unwrap_err();
    assert!(matches!(err, LtnError::Richness(_)), "{err}");
}
