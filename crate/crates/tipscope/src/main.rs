fn main() {
    std::process::exit(tipscope::cli::main_entry(std::env::args_os()));
}
