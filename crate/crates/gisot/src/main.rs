use clap::Parser;

fn main() {
    let cli = gisot::cli::Cli::parse();
    std::process::exit(gisot::execute(&cli));
}
