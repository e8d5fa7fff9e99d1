fn main() {
    std::process::exit(vig_lrgc::cli::run(std::env::args_os()));
}
