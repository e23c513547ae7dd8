fn main() {
    std::process::exit(hstf::cli::run(std::env::args_os()));
}
