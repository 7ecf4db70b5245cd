fn main() {
    std::process::exit(incindex::cli::run(std::env::args_os()));
}
