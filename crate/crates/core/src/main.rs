fn main() {
    let status = shape2animal::cli::main_with_args(std::env::args_os());
    std::process::exit(status.code());
}
