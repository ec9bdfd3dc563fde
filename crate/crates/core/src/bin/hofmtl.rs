use std::io::{stderr, stdout};

fn main() {
    let code = hofmtl_core::cli::dispatch(std::env::args_os(), &mut stdout().lock(), &mut stderr().lock());
    std::process::exit(code);
}
