use std::process::ExitCode;

fn main() -> ExitCode {
    fidest::cli::main_with_args(std::env::args_os())
}
