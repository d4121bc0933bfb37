fn main() {
    std::process::exit(densir::cli::run(std::env::args_os()));
}
