fn main() {
    std::process::exit(kdcl_cli::cli_main(std::env::args_os()));
}
