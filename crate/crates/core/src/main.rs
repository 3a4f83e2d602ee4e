fn main() {
    std::process::exit(pointseq::cli::run(std::env::args_os()));
}
