fn main() {
    std::process::exit(pagetrace_cli::run(std::env::args_os()));
}
