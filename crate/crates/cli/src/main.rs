use clap::Parser;
use stylo_cli::Cli;

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    stylo_cli::run(cli)
}
