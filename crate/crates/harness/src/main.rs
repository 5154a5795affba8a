fn main() {
    std::process::exit(rdpg_harness::cli::dispatch(std::env::args_os()));
}
