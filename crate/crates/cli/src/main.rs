fn main() {
    std::process::exit(chronopyr_cli::run(std::env::args_os()));
}
