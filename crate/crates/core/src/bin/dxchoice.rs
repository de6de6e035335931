use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dxchoice::cli::cli_dispatch(std::env::args_os()) as u8)
}
