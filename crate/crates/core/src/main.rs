fn main() {
    std::process::exit(boxplain::cli::run(std::env::args_os()));
}
