fn main() {
    std::process::exit(ncfscil_cli::dispatch(std::env::args_os()));
}
