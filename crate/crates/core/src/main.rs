use std::io::{self, Write};

fn main() {
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    let mut stderr = io::stderr();
    let code = tempoquant::cli::main_with(std::env::args_os(), stdin.lock(), &mut stdout, &mut stderr);
    let _ = stdout.flush();
    std::process::exit(code);
}
