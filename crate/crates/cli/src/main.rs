fn main() -> std::process::ExitCode {
    eqps_cli::main()
}
