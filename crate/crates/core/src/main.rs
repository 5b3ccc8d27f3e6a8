fn main() {
    std::process::exit(rsfilt::cli::run(std::env::args_os()));
}
