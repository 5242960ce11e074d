fn main() {
    std::process::exit(descpress::cli::run(std::env::args_os()));
}
