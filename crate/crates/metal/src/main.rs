use clap::Parser;
use metal::cli::{execute, Cli, Command, Mode};

fn main() {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Train(a) => (Mode::Train, a),
        Command::Adapt(a) => (Mode::Adapt, a),
        Command::Baseline(a) => (Mode::Baseline, a),
        Command::Active(a) => (Mode::Active, a),
    };
    std::process::exit(execute(mode, args));
}
