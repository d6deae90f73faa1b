mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use ltn_core::LtnError;

use args::{Cli, Command};

/// 0 ok, 1 validation, 2 infeasible synthesis, 3 numerical failure.
fn exit_code(err: &LtnError) -> u8 {
    match err {
        LtnError::Infeasible(_) => 2,
        LtnError::Numerical(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Collect(a) => commands::collect(a),
        Command::CheckData(a) => commands::check_data(a),
        Command::Synthesize(a) => commands::synthesize_cmd(a),
        Command::ClosedLoop(a) => commands::closed_loop(a),
        Command::CaseStudy(a) => commands::case_study(a),
        Command::ExportSdp(a) => commands::export_sdp(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
