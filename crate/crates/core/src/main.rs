fn main() {
    std::process::exit(paretoda::cli::main());
}
