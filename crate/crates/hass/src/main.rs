use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let args = std::env::args_os().collect();
    let code = hass::commands::run(args, &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code as u8)
}
