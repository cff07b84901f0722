fn main() {
    std::process::exit(clipdiv::cli::main());
}
