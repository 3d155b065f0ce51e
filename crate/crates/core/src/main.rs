fn main() {
    std::process::exit(videostudio::cli::main_exit_code());
}
