use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cmr::cli::run(std::env::args_os()))
}
