fn main() {
    std::process::exit(pathhj::main_with(std::env::args_os()));
}
