use std::fs;
use std::path::{Path, PathBuf};

use ltn_core::closed_loop::{certificate_for, lyapunov_decrease_check, lyapunov_floor, run_closed_loop, steady_state_metrics};
use ltn_core::data::{build_data_matrices, DEFAULT_EPS_SAT};
use ltn_core::scenarios::{random_initial_state, resolve_system, run_pipeline, RunConfig, Scenario};
use ltn_core::synthesis::{assemble_program, synthesize, validate_certificate};
use ltn_core::{Controller, ControllerKind, DataSet, DisturbanceSpec, LtnError, SynthesisOptions, SynthesisResult, VertexMode};
use nalgebra::DVector;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::*;

pub type CmdResult = Result<(), LtnError>;

fn read(path: &Path) -> Result<String, LtnError> {
    fs::read_to_string(path).map_err(|e| LtnError::InvalidParameter(format!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, LtnError> {
    fs::create_dir_all(dir).map_err(|e| LtnError::InvalidParameter(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| LtnError::InvalidParameter(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn parse_box(text: &str, flag: &str) -> Result<(f64, f64), LtnError> {
    let bad = || LtnError::InvalidParameter(format!("{flag} expects LO:HI, got '{text}'"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn parse_list(text: &str, flag: &str) -> Result<Vec<f64>, LtnError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LtnError::InvalidParameter(format!("{flag}: '{t}' is not a number")))
        })
        .collect()
}

fn parse_meta(text: &str) -> Result<(f64, f64), LtnError> {
    let (mut alpha, mut s) = (None, None);
    for part in text.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| LtnError::InvalidParameter(format!("--system-meta: expected key=value, got '{part}'")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| LtnError::InvalidParameter(format!("--system-meta: bad number '{v}'")))?;
        match k.trim() {
            "alpha" => alpha = Some(v),
            "s" => s = Some(v),
            other => return Err(LtnError::InvalidParameter(format!("--system-meta: unknown key '{other}'"))),
        }
    }
    match (alpha, s) {
        (Some(a), Some(s)) if a > 0.0 && a < 1.0 && s > 0.0 => Ok((a, s)),
        (Some(_), Some(_)) => Err(LtnError::InvalidParameter("--system-meta needs 0 < alpha < 1 and s > 0".into())),
        _ => Err(LtnError::InvalidParameter("--system-meta needs both alpha and s".into())),
    }
}

fn meta_of(meta: &MetaSource) -> Result<(f64, f64), LtnError> {
    if let Some(path) = &meta.system {
        let sys = ltn_core::LtnSystem::from_json(&read(path)?)?;
        return Ok((sys.alpha(), sys.s()));
    }
    match &meta.system_meta {
        Some(text) => parse_meta(text),
        None => Err(LtnError::InvalidParameter("give --system FILE or --system-meta alpha=..,s=..".into())),
    }
}

fn controller_kind(c: ControllerArg) -> ControllerKind {
    match c {
        ControllerArg::Ff => ControllerKind::Feedforward,
        ControllerArg::Integral => ControllerKind::Integral,
    }
}

fn vertex_mode(v: Option<VertexModeArg>) -> Option<VertexMode> {
    v.map(|v| match v {
        VertexModeArg::Full => VertexMode::Full,
        VertexModeArg::Reduced => VertexMode::Reduced,
    })
}

/// Start from the scenario defaults and apply the system and data flags.
fn base_config(source: &SystemSource, data: &DataOptions, kind: ControllerKind) -> Result<(RunConfig, Option<String>), LtnError> {
    let (mut cfg, text) = match (&source.system, source.scenario) {
        (Some(path), _) => {
            let mut cfg = RunConfig::rodent(kind);
            cfg.scenario = Scenario::File;
            cfg.system_file = Some(path.display().to_string());
            cfg.x_box = None;
            cfg.u_box = (0.0, 1.0);
            (cfg, Some(read(path)?))
        }
        (None, Some(ScenarioArg::Rodent)) => (RunConfig::rodent(kind), None),
        (None, Some(ScenarioArg::Arousal)) => (RunConfig::arousal(kind), None),
        (None, None) => {
            return Err(LtnError::InvalidParameter("name a scenario (rodent, arousal) or pass --system FILE".into()))
        }
    };
    if let Some(seed) = source.seed_system {
        cfg.seed_system = seed;
    }
    cfg.seed_data = data.seed_data;
    if let Some(t) = data.t_d {
        cfg.t_d = t;
    }
    if let Some(b) = &data.x_box {
        cfg.x_box = Some(parse_box(b, "--x-box")?);
    }
    if let Some(b) = &data.u_box {
        cfg.u_box = parse_box(b, "--u-box")?;
    }
    Ok((cfg, text))
}

fn apply_loop(cfg: &mut RunConfig, run: &LoopOptions) -> CmdResult {
    cfg.seed_init = run.seed_init;
    cfg.seed_noise = run.seed_noise;
    cfg.disturbance = DisturbanceSpec::parse(&run.disturbance)?;
    cfg.horizon = run.horizon;
    cfg.tol = run.tol;
    if let Some(r) = &run.reference {
        cfg.reference = Some(parse_list(r, "--reference")?);
    }
    Ok(())
}

/// Print to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn config_hash(value: &Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest(command: &str, config: Value, files: &[PathBuf], extra: Value) -> String {
    let names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    let m = json!({
        "tool": "ltn-ctrl",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "solver_backend": ltn_sdp::Backend::from_env().map(|b| b.name()).unwrap_or("unknown"),
        "config_hash": config_hash(&config),
        "config": config,
        "files": names,
        "summary": extra,
    });
    serde_json::to_string_pretty(&m).expect("serializable")
}

fn solver_options(mode: Option<VertexMode>) -> Result<SynthesisOptions, LtnError> {
    ltn_sdp::Backend::from_env()?;
    Ok(SynthesisOptions {
        vertex_mode: mode,
        ..SynthesisOptions::default()
    })
}

fn load_dataset(path: &Path) -> Result<DataSet, LtnError> {
    let ds = DataSet::from_json(&read(path)?)?;
    ds.validate()?;
    Ok(ds)
}

fn x0_for(sys: &ltn_core::LtnSystem, run: &LoopOptions) -> Result<DVector<f64>, LtnError> {
    let Some(text) = &run.x0 else {
        return Ok(random_initial_state(sys, run.seed_init));
    };
    let x0 = DVector::from_vec(parse_list(text, "--x0")?);
    if x0.len() != sys.n() {
        return Err(LtnError::Dimension(format!("--x0 has {} entries, expected {}", x0.len(), sys.n())));
    }
    if !sys.is_admissible(&x0) && run.force {
        eprintln!(
            "warning: --x0 lies outside [0, {:.4}]^n; clamped because of --force",
            sys.state_upper_bound()
        );
        return Ok(sys.clamp_to_box(&x0));
    }
    sys.check_admissible(&x0)?;
    Ok(x0)
}

fn result_summary(res: &SynthesisResult) -> Value {
    json!({
        "controller": res.kind.short(),
        "vertex_mode": res.vertex_mode.name(),
        "gamma": res.gamma,
        "p_min_eig": res.p_min_eig,
        "p_condition": res.p_condition,
        "zu_min_singular_value": res.zu_min_singular_value(),
        "solver_iterations": res.solver.iterations,
        "solve_time_s": res.solver.solve_time_s,
    })
}

pub fn collect(args: &CollectArgs) -> CmdResult {
    let (cfg, text) = base_config(&args.source, &args.data, ControllerKind::Feedforward)?;
    cfg.validate()?;
    let resolved = resolve_system(&cfg, text.as_deref())?;
    let ds = ltn_core::scenarios::collect_for(&cfg, &resolved.system)?;
    let files = vec![
        write(&args.out, "system.json", &resolved.system.to_json())?,
        write(&args.out, "dataset.json", &ds.to_json())?,
    ];
    let config = json!({
        "scenario": cfg.scenario,
        "system_file": cfg.system_file,
        "t_d": cfg.t_d,
        "seed_data": cfg.seed_data,
        "seed_system": cfg.seed_system,
        "x_box": cfg.x_box.unwrap_or((0.0, resolved.system.state_upper_bound())),
        "u_box": cfg.u_box,
    });
    write(&args.out, "manifest.json", &manifest("collect", config, &files, json!({ "samples": ds.len() })))?;
    emit(&format!("wrote {} samples to {}", ds.len(), args.out.join("dataset.json").display()));
    Ok(())
}

pub fn check_data(args: &CheckDataArgs) -> CmdResult {
    let (alpha, s) = meta_of(&args.meta)?;
    let ds = load_dataset(&args.dataset)?;
    let dm = build_data_matrices(&ds, alpha, s, DEFAULT_EPS_SAT)?;
    let rep = dm.richness();
    emit(&rep.to_string());
    if rep.pass {
        Ok(())
    } else {
        Err(LtnError::Richness(format!("nodes {:?} are rank deficient", rep.deficient_nodes)))
    }
}

pub fn synthesize_cmd(args: &SynthesizeArgs) -> CmdResult {
    let (alpha, s) = meta_of(&args.meta)?;
    let ds = load_dataset(&args.dataset)?;
    let dm = build_data_matrices(&ds, alpha, s, DEFAULT_EPS_SAT)?;
    let kind = controller_kind(args.design.controller);
    let opts = solver_options(vertex_mode(args.design.vertex_mode))?;
    let res = synthesize(&dm, kind, &opts)?;
    let summary = result_summary(&res);
    emit(&serde_json::to_string_pretty(&summary).expect("serializable"));
    if let Some(dir) = &args.out {
        let files = vec![write(dir, "result.json", &res.to_json())?];
        let config = json!({
            "dataset": args.dataset.display().to_string(),
            "alpha": alpha,
            "s": s,
            "controller": kind.short(),
            "vertex_mode": res.vertex_mode.name(),
        });
        write(dir, "manifest.json", &manifest("synthesize", config, &files, summary))?;
    }
    Ok(())
}

pub fn closed_loop(args: &ClosedLoopArgs) -> CmdResult {
    let res = SynthesisResult::from_json(&read(&args.result)?)?;
    let data = DataOptions {
        t_d: None,
        seed_data: 1,
        x_box: None,
        u_box: None,
    };
    let (mut cfg, text) = base_config(&args.source, &data, res.kind)?;
    apply_loop(&mut cfg, &args.run)?;
    cfg.validate()?;
    let resolved = resolve_system(&cfg, text.as_deref())?;
    let sys = &resolved.system;
    if res.n() != sys.n() || res.m() != sys.m() {
        return Err(LtnError::Dimension(format!(
            "gains are for n={}, m={} but the system has n={}, m={}",
            res.n(),
            res.m(),
            sys.n(),
            sys.m()
        )));
    }
    let r = match &cfg.reference {
        Some(r) => DVector::from_row_slice(r),
        None => resolved.default_reference.clone(),
    };
    if r.len() != sys.n() {
        return Err(LtnError::Dimension(format!("--reference has {} entries, expected {}", r.len(), sys.n())));
    }
    ltn_core::closed_loop::check_reference(sys, &r, res.kind == ControllerKind::Integral)?;
    let x0 = x0_for(sys, &args.run)?;
    let cert = certificate_for(&res, &r)?;
    let ctrl = Controller::from_result(&res, r.clone());
    let trace = run_closed_loop(sys, &ctrl, &x0, cfg.horizon, cfg.disturbance, cfg.seed_noise, Some(&cert))?;
    let metrics = steady_state_metrics(&trace, cfg.tail_fraction, cfg.tol)?;
    let summary = json!({
        "metrics": metrics,
        "xi_star": cert.xi_star.as_ref().map(|v| v.as_slice().to_vec()),
        "converged": metrics.final_error_inf < cfg.tol,
    });
    emit(&serde_json::to_string_pretty(&summary).expect("serializable"));
    if let Some(dir) = &args.out {
        let files = vec![
            write(dir, "trace.csv", &trace.to_csv())?,
            write(dir, "metrics.json", &serde_json::to_string_pretty(&summary).expect("serializable"))?,
        ];
        let mut config = serde_json::to_value(&cfg).expect("serializable");
        config["result"] = json!(args.result.display().to_string());
        config["x0"] = json!(x0.as_slice());
        write(dir, "manifest.json", &manifest("closed-loop", config, &files, json!({})))?;
    }
    Ok(())
}

pub fn case_study(args: &CaseStudyArgs) -> CmdResult {
    let kind = controller_kind(args.design.controller);
    let (mut cfg, text) = base_config(&args.source, &args.data, kind)?;
    apply_loop(&mut cfg, &args.run)?;
    cfg.vertex_mode = vertex_mode(args.design.vertex_mode);
    cfg.validate()?;
    let resolved = resolve_system(&cfg, text.as_deref())?;
    let opts = solver_options(cfg.vertex_mode)?;
    let mut out = run_pipeline(&cfg, &resolved, &opts)?;
    if args.run.x0.is_some() {
        // rerun the loop from the requested start
        let x0 = x0_for(&resolved.system, &args.run)?;
        let cert = certificate_for(&out.result, &out.reference)?;
        let ctrl = Controller::from_result(&out.result, out.reference.clone());
        out.trace = run_closed_loop(&resolved.system, &ctrl, &x0, cfg.horizon, cfg.disturbance, cfg.seed_noise, Some(&cert))?;
        out.metrics = steady_state_metrics(&out.trace, cfg.tail_fraction, cfg.tol)?;
        out.x0 = x0;
    }
    let cert_report = validate_certificate(&out.result, &out.data, out.result.alpha, true);
    let floor = lyapunov_floor(&out.result, &out.reference, out.xi_star.as_ref());
    let lyap = lyapunov_decrease_check(&out.trace, out.xi_star.as_ref(), floor);
    let mut summary = json!({
        "synthesis": result_summary(&out.result),
        "certificate_valid": cert_report.pass,
        "certificate_failures": cert_report.failures,
        "worst_vertex_min_eig": cert_report.worst_vertex(),
        "metrics": out.metrics,
        "converged": out.metrics.final_error_inf < cfg.tol,
        "reference": out.reference.as_slice(),
        "x0": out.x0.as_slice(),
        "xi_star": out.xi_star.as_ref().map(|v| v.as_slice().to_vec()),
        "lyapunov": lyap.map(|(violations, checked, worst)| json!({
            "violations": violations,
            "floor": floor,
            "checked_steps": checked,
            "worst_relative_decrease": worst,
        })),
    });
    if let Some(a) = &resolved.arousal {
        let first = out.trace.states.first().expect("nonempty trace");
        let last = out.trace.states.last().expect("nonempty trace");
        summary["arousal"] = json!({
            "phi_t_b": (a.phi.transpose() * a.system.b())[(0, 0)],
            "resamples": a.resamples,
            "initial_percent": a.arousal(first),
            "final_percent": a.arousal(last),
            "target_percent": a.arousal(&out.reference),
        });
    }
    emit(&serde_json::to_string_pretty(&summary).expect("serializable"));
    if let Some(dir) = &args.out {
        let files = vec![
            write(dir, "system.json", &resolved.system.to_json())?,
            write(dir, "dataset.json", &out.dataset.to_json())?,
            write(dir, "result.json", &out.result.to_json())?,
            write(dir, "trace.csv", &out.trace.to_csv())?,
            write(dir, "metrics.json", &serde_json::to_string_pretty(&summary).expect("serializable"))?,
        ];
        let config = serde_json::to_value(&cfg).expect("serializable");
        write(dir, "manifest.json", &manifest("case-study", config, &files, json!({ "converged": summary["converged"] })))?;
    }
    Ok(())
}

pub fn export_sdp(args: &ExportSdpArgs) -> CmdResult {
    let (alpha, s) = meta_of(&args.meta)?;
    let ds = load_dataset(&args.dataset)?;
    let dm = build_data_matrices(&ds, alpha, s, DEFAULT_EPS_SAT)?;
    let rep = dm.richness();
    if !rep.pass {
        return Err(LtnError::Richness(format!("nodes {:?} are rank deficient", rep.deficient_nodes)));
    }
    let kind = controller_kind(args.design.controller);
    let mode = vertex_mode(args.design.vertex_mode).unwrap_or_else(|| VertexMode::default_for(dm.n));
    let prog = assemble_program(&dm, kind, mode, &SynthesisOptions::default())?;
    let text = prog.problem.to_json();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| LtnError::InvalidParameter(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(&args.out, text).map_err(|e| LtnError::InvalidParameter(format!("cannot write {}: {e}", args.out.display())))?;
    emit(&format!(
        "wrote {} ({} scalars, {} PSD blocks, {} equality blocks)",
        args.out.display(),
        prog.problem.num_scalars(),
        prog.problem.psd_constraints().len(),
        prog.problem.equality_constraints().len()
    ));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_and_lists() {
        assert_eq!(parse_box("0:0.25", "--u-box").unwrap(), (0.0, 0.25));
        assert!(parse_box("1:0", "--u-box").is_err());
        assert!(parse_box("0.5", "--u-box").is_err());
        assert_eq!(parse_list("1, 2.5,3", "--x0").unwrap(), vec![1.0, 2.5, 3.0]);
        assert!(parse_list("1,,3", "--x0").is_err());
        assert!(parse_list("1,nan", "--x0").is_err());
    }

    #[test]
    fn system_meta() {
        assert_eq!(parse_meta("alpha=0.9,s=0.4").unwrap(), (0.9, 0.4));
        assert_eq!(parse_meta(" s=1 , alpha=0.5").unwrap(), (0.5, 1.0));
        assert!(parse_meta("alpha=0.9").is_err());
        assert!(parse_meta("alpha=1.5,s=1").is_err());
        assert!(parse_meta("alpha=0.5,s=1,beta=2").is_err());
    }
}
