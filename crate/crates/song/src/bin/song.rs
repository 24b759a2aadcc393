fn main() -> std::process::ExitCode {
    song::cli::run()
}
