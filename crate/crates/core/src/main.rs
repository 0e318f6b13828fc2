use clap::Parser;

fn main() {
    let cli = qmetro::cli::Cli::parse();
    std::process::exit(qmetro::cli::run(&cli));
}
