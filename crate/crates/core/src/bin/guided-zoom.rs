fn main() {
    std::process::exit(guided_zoom::cli::main_with(std::env::args_os()));
}
