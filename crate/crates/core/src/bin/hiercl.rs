fn main() {
    std::process::exit(hiercl::cli::run(std::env::args_os()));
}
