use std::process::ExitCode;

fn main() -> ExitCode {
    argd::cli::main_with_args(std::env::args_os())
}
