fn main() {
    std::process::exit(tzsl::cli::run(std::env::args_os()));
}
