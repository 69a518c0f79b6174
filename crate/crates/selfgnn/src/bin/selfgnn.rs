fn main() {
    std::process::exit(selfgnn::cli::main_entry());
}
