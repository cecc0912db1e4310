fn main() {
    std::process::exit(weightfix_cli::run(std::env::args_os()));
}
