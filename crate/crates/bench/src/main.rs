fn main() -> std::process::ExitCode {
    raqr_bench::cli::main()
}
