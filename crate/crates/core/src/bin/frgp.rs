fn main() {
    std::process::exit(frgp::cli::run(std::env::args_os()));
}
