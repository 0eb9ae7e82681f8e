fn main() {
    std::process::exit(keeplora::cli::main());
}
