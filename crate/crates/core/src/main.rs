fn main() {
    std::process::exit(crossiris::cli::run(std::env::args_os()));
}
