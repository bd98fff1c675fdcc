fn main() {
    std::process::exit(triderm::cli::dispatch(std::env::args_os()));
}
