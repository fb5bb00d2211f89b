fn main() {
    std::process::exit(hypermm::cli::main_with_args());
}
