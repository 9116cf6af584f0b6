fn main() {
    std::process::exit(editloop_cli::run_from_args(std::env::args_os()));
}
