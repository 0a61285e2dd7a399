fn main() {
    std::process::exit(facetset::cli::main());
}
