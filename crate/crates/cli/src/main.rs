fn main() {
    std::process::exit(cellvec_cli::run(std::env::args()));
}
