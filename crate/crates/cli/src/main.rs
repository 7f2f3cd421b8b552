use std::process::ExitCode;

fn main() -> ExitCode {
    dedupsec_cli::main_with(std::env::args_os())
}
