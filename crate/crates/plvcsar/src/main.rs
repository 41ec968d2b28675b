fn main() {
    std::process::exit(plvcsar::cli::run(std::env::args().collect()));
}
