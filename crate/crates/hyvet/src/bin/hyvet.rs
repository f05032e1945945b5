fn main() -> ! {
    hyvet::cli::main()
}
