fn main() {
    std::process::exit(tcn_core::cli::run(std::env::args_os()));
}
