fn main() {
    std::process::exit(ctjoint_cli::main_with_args(std::env::args_os()));
}
