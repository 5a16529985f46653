fn main() {
    std::process::exit(mombo_cli::run(std::env::args_os()));
}
