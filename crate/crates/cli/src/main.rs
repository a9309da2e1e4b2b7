fn main() {
    std::process::exit(titans_cli::dispatch(std::env::args_os()));
}
