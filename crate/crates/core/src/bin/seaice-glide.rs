fn main() {
    std::process::exit(seaice_glide::cli::run(std::env::args_os()));
}
