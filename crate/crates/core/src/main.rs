fn main() {
    std::process::exit(resunet::cli::dispatch(std::env::args_os()));
}
