fn main() {
    std::process::exit(vactmc::cli::main_exit());
}
