fn main() {
    std::process::exit(dwi_denoise::io::run_command(std::env::args_os()));
}
