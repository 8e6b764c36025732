fn main() {
    std::process::exit(fairsift::cli::main());
}
