use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(pnlp::cli::run(std::env::args_os()))
}
