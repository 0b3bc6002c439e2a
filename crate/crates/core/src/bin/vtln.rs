fn main() {
    std::process::exit(vtln::cli::run_from(std::env::args_os()));
}
