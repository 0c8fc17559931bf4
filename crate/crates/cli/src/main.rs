use std::process::ExitCode;

fn main() -> ExitCode {
    gbv_cli::run()
}
