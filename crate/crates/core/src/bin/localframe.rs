fn main() {
    std::process::exit(localframe::cli::run(std::env::args_os()));
}
