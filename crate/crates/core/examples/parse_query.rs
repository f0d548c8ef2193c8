//! Parse referring expressions into (target, reference, discriminative) triads.
//!
//! `cargo run --example parse_query -- "the white lady left of a cat"`

use shrinkground::lexicon::Lexicon;
use shrinkground::query::{embed, parse_text, EmbeddingTable};

fn main() {
    let lex = Lexicon::default();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let queries = if args.is_empty() {
        vec![
            "cat above a shelf".to_string(),
            "the orange cat".to_string(),
            "left lady".to_string(),
            "lady in white".to_string(),
            "the cat left of the table and below a shelf".to_string(),
            "the purple cup".to_string(),
        ]
    } else {
        args
    };
    let table = EmbeddingTable::seeded(lex.all_tokens(), 32, 5);
    for q in &queries {
        match parse_text(q, &lex) {
            Ok(triads) => {
                let shown: Vec<String> = triads
                    .iter()
                    .map(|t| format!("({}, {}, {})", t.target, t.reference, t.discriminative))
                    .collect();
                let f = embed(&triads, &table, 2).expect("parsed tokens are in the table");
                println!("{q:<45} -> {}  [feature length {}]", shown.join(" "), f.len());
            }
            Err(e) => println!("{q:<45} -> error: {e}"),
        }
    }
}
