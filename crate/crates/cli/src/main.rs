fn main() {
    std::process::exit(jbsv_cli::main_with_args(std::env::args_os()));
}
