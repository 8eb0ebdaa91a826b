use pggtrack::bench::CountingAlloc;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn main() {
    std::process::exit(pggtrack::cli::main_with_args(std::env::args_os()));
}
