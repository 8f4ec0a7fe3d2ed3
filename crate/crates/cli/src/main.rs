use clap::Parser;
use gemmforge_cli::{main_with, Args};

fn main() {
    let args = Args::parse();
    std::process::exit(main_with(&args, &mut std::io::stdout()));
}
