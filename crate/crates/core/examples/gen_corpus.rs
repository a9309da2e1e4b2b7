//! Generate a synthetic topic corpus for the toy MLM tasks.
//!
//! Usage: cargo run --release -p titans-core --example gen_corpus -- \
//!     <docs> <words_per_doc> <seed> <out_path>

use titans_core::tasks::corpus::generate_topic_corpus;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 5 {
        eprintln!("usage: gen_corpus <docs> <words_per_doc> <seed> <out_path>");
        std::process::exit(2);
    }
    let docs: usize = args[1].parse().expect("docs must be a number");
    let words: usize = args[2].parse().expect("words_per_doc must be a number");
    let seed: u64 = args[3].parse().expect("seed must be a number");
    let text = generate_topic_corpus(docs, words, seed);
    std::fs::write(&args[4], text).expect("write corpus");
    eprintln!("wrote {docs} documents of {words} words to {}", args[4]);
}
