fn main() {
    std::process::exit(dialogen::cli::main());
}
