use clap::Parser;
use gprompt_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut log = stdout.lock();
    if let Err(e) = run(cli, &mut log) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
