fn main() {
    std::process::exit(robustgp_cli::run(std::env::args_os().collect()));
}
