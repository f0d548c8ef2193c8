//! Write a held-out split to JSON lines and read it back.

use shrinkground::harness::dataset::{generate, read_jsonl, write_jsonl};
use shrinkground::harness::RunConfig;
use shrinkground::task::Split;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let task = cfg.task()?;
    let records = generate(&task, Split::Eval, 20)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    let back = read_jsonl(buf.as_slice(), &cfg.lexicon)?;
    assert_eq!(back, records);
    println!("{} records, {} bytes, round trip exact", back.len(), buf.len());
    println!("first line: {}", String::from_utf8_lossy(buf.split(|b| *b == b'\n').next().unwrap_or_default()));
    Ok(())
}
