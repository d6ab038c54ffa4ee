fn main() {
    std::process::exit(ldm_anon::cli::run(std::env::args_os()));
}
