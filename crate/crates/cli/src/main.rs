fn main() {
    std::process::exit(smgcn_cli::run(std::env::args_os()));
}
