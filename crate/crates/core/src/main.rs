fn main() {
    std::process::exit(accent_ssl::cli::run(std::env::args_os()));
}
