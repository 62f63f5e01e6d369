fn main() {
    std::process::exit(uncertainty_cli::run(std::env::args_os().collect()));
}
