fn main() {
    std::process::exit(udtw::cli::run(std::env::args().collect()));
}
