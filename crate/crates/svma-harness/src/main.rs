fn main() {
    std::process::exit(svma_harness::cli::run());
}
