fn main() {
    std::process::exit(wftnet::cli::main_from_env());
}
