fn main() {
    std::process::exit(gladformer::harness::cli::run(std::env::args_os()));
}
