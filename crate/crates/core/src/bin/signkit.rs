fn main() {
    std::process::exit(signkit::cli::run(std::env::args_os()));
}
