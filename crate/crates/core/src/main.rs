fn main() {
    std::process::exit(electrocat::cli::main());
}
