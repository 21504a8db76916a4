fn main() -> std::process::ExitCode {
    ringsim_cli::run_cli()
}
