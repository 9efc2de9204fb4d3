fn main() {
    std::process::exit(hedkit_cli::run(std::env::args_os()));
}
