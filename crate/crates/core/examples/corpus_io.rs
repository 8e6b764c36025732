//! Writes a corpus to JSONL, reads it back, and validates it.

use std::io::{BufReader, Cursor};

use fairsift::analysis::{generate_synthetic_corpus, SyntheticSpec};
use fairsift::corpus::{
    parse_image_records, parse_query_records, validate_corpus, write_image_records, write_query_records, Corpus,
};

fn main() -> fairsift::Result<()> {
    let spec = SyntheticSpec { n_images: 200, d: 8, n_queries: 2, relevant_per_query: 10, ..Default::default() };
    let corpus = generate_synthetic_corpus(&spec)?;

    let mut images = Vec::new();
    write_image_records(&mut images, &corpus.images, &corpus.scheme)?;
    let mut queries = Vec::new();
    write_query_records(&mut queries, &corpus.queries)?;
    println!("first image record: {}", String::from_utf8_lossy(&images).lines().next().unwrap_or(""));

    let reread = Corpus {
        d: corpus.d,
        images: parse_image_records(BufReader::new(Cursor::new(images)), corpus.d, &corpus.scheme)?,
        queries: parse_query_records(BufReader::new(Cursor::new(queries)), corpus.d)?,
        scheme: corpus.scheme.clone(),
    };
    assert_eq!(reread, corpus);

    let report = validate_corpus(&reread, 100)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}
