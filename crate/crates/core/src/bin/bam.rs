use clap::Parser;

fn main() {
    let cli = bam::cli::Cli::parse();
    if let Err(e) = bam::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
