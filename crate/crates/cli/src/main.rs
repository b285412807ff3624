use clap::Parser;

fn main() {
    let cli = sodet_cli::Cli::parse();
    if let Err(err) = sodet_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
