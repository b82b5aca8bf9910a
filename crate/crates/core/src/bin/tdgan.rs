use std::process::ExitCode;

fn main() -> ExitCode {
    tdgan::cli::main_with_args(std::env::args_os())
}
