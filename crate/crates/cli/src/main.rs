fn main() {
    // Replaced by the full command-line interface once the verification
    // registry lands in the core crate.
    eprintln!("swann: not yet wired");
    std::process::exit(2);
}
