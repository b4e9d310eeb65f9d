fn main() {
    std::process::exit(tracemix_cli::run(std::env::args_os()));
}
