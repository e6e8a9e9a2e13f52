mod args;
mod commands;

use clap::Parser;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = args::Cli::parse_from(&argv);
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match (&cli.replay, &cli.command) {
        (Some(_), Some(_)) => Err(noncls::Error::InvalidParams("--replay takes no subcommand".into())),
        (Some(m), None) => commands::replay(m),
        (None, _) => commands::execute(&cli, &argv, true),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
