fn main() {
    std::process::exit(stefan::cli::main());
}
