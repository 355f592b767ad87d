fn main() {
    std::process::exit(ldct_core::cli::main_entry());
}
