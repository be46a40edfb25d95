fn main() -> std::process::ExitCode {
    metasat::cli::main_entry()
}
