use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let result = shielda_core::cli::dispatch(std::env::args_os());
    print!("{}", result.stdout);
    eprint!("{}", result.stderr);
    let _ = std::io::stdout().flush();
    ExitCode::from(u8::try_from(result.code).unwrap_or(1))
}
