fn main() {
    std::process::exit(morpho_core::cli::run());
}
