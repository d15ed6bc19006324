fn main() {
    std::process::exit(kdforge_cli::run(std::env::args_os()));
}
