fn main() {
    std::process::exit(promptdag::cli::main());
}
