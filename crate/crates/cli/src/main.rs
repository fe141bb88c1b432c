use clap::Parser;

fn main() {
    let cli = iqa_cli::Cli::parse();
    if let Err(e) = iqa_cli::run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
