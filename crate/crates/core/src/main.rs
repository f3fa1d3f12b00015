fn main() {
    std::process::exit(conjnngp::cli::run(std::env::args_os()));
}
