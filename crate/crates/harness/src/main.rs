fn main() {
    std::process::exit(framemix::cli::run(std::env::args_os()));
}
