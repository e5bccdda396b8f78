fn main() {
    std::process::exit(pdesde::cli::run(std::env::args_os()));
}
