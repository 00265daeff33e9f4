fn main() {
    std::process::exit(gscore_cli::run(std::env::args_os()));
}
