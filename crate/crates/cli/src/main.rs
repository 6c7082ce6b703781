fn main() {
    std::process::exit(pfe_cli::dispatch(std::env::args_os()));
}
