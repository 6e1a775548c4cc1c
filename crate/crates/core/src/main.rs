fn main() {
    std::process::exit(spectest::cli::run(std::env::args_os()));
}
