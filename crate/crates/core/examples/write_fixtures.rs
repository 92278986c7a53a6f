//! Regenerates the planted-corpus fixtures under `tests/fixtures/`.

use std::path::Path;

use aspect_tagger::synthetic::{planted_corpus, trees_to_conllu, DEFAULT_SEED};

fn main() -> aspect_tagger::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let (corpus, trees) = planted_corpus(DEFAULT_SEED)?;
    std::fs::write(dir.join("planted.xml"), corpus.to_xml())?;
    std::fs::write(dir.join("planted.conllu"), trees_to_conllu(&trees))?;
    Ok(())
}
