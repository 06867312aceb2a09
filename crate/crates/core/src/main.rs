fn main() {
    std::process::exit(tristyle::cli::run(std::env::args_os()));
}
