fn main() {
    std::process::exit(feerate_lab::cli::dispatch(std::env::args_os()));
}
