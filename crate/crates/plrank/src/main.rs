use plrank::cli;

fn main() {
    std::process::exit(cli::run());
}
