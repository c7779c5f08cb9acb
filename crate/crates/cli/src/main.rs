use clap::Parser;
use dirac_cli::{main_with, Cli, Failure, EXIT_SCHEMA};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            let f = Failure { code: EXIT_SCHEMA, module: "cli", condition: "arguments".into(), message: e.kind().to_string() };
            println!("{}", f.to_json());
            std::process::exit(EXIT_SCHEMA);
        }
        Err(e) => e.exit(),
    };
    std::process::exit(main_with(cli));
}
