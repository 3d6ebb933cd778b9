use std::process::ExitCode;

fn main() -> ExitCode {
    egossl::cli::main_with_args(std::env::args_os())
}
