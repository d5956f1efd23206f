use tdd_governor::cli;

fn main() {
    std::process::exit(cli::run_cli());
}
