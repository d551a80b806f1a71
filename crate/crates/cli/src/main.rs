use std::io::Write;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = aric_cli::Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match aric_cli::run(cli, &mut out) {
        Ok(()) => aric_cli::EXIT_OK,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e:#}");
            aric_cli::exit_code(&e)
        }
    };
    let _ = out.flush();
    std::process::exit(code);
}
