fn main() {
    std::process::exit(wfbm::cli::run_from_args(std::env::args_os()));
}
