use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on malformed arguments, like config errors.
    let cli = mixgame_cli::Cli::parse();
    std::process::exit(mixgame_cli::run(cli));
}
