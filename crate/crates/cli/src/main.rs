fn main() {
    std::process::exit(branchlab_cli::run(std::env::args_os()));
}
