fn main() {
    std::process::exit(gridsched::cli::run_from_args(std::env::args_os()));
}
