use std::process::ExitCode;

fn main() -> ExitCode {
    let mut out = std::io::stdout().lock();
    ExitCode::from(shadowadj_cli::run(std::env::args_os(), &mut out))
}
