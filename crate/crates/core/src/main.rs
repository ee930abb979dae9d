fn main() {
    std::process::exit(relscope::cli::run(std::env::args_os()));
}
