fn main() {
    std::process::exit(afwave::cli::main_with(std::env::args_os()));
}
