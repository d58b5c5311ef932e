fn main() {
    std::process::exit(metaimage::cli::run(std::env::args_os()));
}
