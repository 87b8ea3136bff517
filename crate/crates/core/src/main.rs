fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(dnsgd_core::harness::cli::run(&args));
}
