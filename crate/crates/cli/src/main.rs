fn main() {
    std::process::exit(roigraph::cli::run(std::env::args_os()));
}
