fn main() {
    std::process::exit(orbitgraph::cli::run());
}
