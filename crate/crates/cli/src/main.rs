use clap::Parser;
use ecg_ssl_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(manifest) => {
            println!(
                "{}: wrote {} files",
                manifest.command,
                manifest.outputs.len() + 1
            );
        }
        Err(e) => {
            eprintln!("ecg-ssl {}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}
