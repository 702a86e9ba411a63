fn main() {
    std::process::exit(zoomnet::cli::run(std::env::args_os()));
}
