fn main() {
    std::process::exit(bertctc_harness::cli::run(std::env::args_os()));
}
