fn main() {
    std::process::exit(intersect_eval::cli::main());
}
