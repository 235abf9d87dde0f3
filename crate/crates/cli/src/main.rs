use std::process::ExitCode;

fn main() -> ExitCode {
    segtune_cli::main_with(std::env::args_os())
}
