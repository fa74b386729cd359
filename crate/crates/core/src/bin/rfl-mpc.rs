fn main() {
    std::process::exit(rfl_mpc::cli::cli_main(std::env::args_os()));
}
