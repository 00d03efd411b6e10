fn main() {
    std::process::exit(tilprofile::cli::run(std::env::args_os()));
}
