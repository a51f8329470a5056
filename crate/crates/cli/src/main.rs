fn main() {
    std::process::exit(accguard_cli::run(std::env::args_os().collect()));
}
