use clap::Parser;
use svcm_cli::{run, Cli, EXIT_CONFIG};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let name = cli.command.name();
    match run(&cli.command) {
        Ok(outcome) => println!("{}", outcome.to_json(name)),
        Err(err) => {
            eprintln!("{}", err.to_json(name));
            std::process::exit(err.code);
        }
    }
}
