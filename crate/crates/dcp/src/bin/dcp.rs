fn main() {
    std::process::exit(dcp::cli::dispatch(std::env::args_os()));
}
