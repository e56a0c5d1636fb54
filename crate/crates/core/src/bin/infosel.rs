fn main() {
    std::process::exit(infosel::cli::main_with_args(std::env::args_os()));
}
