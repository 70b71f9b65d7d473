fn main() -> std::process::ExitCode {
    mmv::cli::main()
}
