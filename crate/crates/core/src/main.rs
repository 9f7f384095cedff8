use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(nodal_core::cli::run(std::env::args_os()))
}
