fn main() {
    std::process::exit(naipw::cli::run_main(std::env::args()));
}
