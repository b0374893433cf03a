fn main() {
    std::process::exit(pwshs::cli::main());
}
