use std::process::ExitCode;

fn main() -> ExitCode {
    are_estimation::cli::main_with_args(std::env::args_os())
}
