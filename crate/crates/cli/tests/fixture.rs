use std::path::Path;

use offeval::corpus::{parse_olid, stats, validate_hierarchy};
use offeval::synthetic::{generate, to_olid_tsv, GeneratorOptions, PseudoLanguage};
use offeval::TaskId;

fn fixture() -> String {
    let lang = PseudoLanguage::new("xa", "", 60, 7);
    to_olid_tsv(&generate(&lang, 200, &GeneratorOptions::default(), 11, "s"))
}

#[test]
fn bundled_fixture_matches_generator() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic.tsv");
    let expected = fixture();
    let found = std::fs::read_to_string(&path).unwrap_or_default();
    if found != expected {
        let fresh = path.with_extension("tsv.new");
        std::fs::write(&fresh, &expected).unwrap();
        panic!("{} is stale; regenerated copy at {}", path.display(), fresh.display());
    }
}

#[test]
fn fixture_is_well_formed() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic.tsv");
    let data = parse_olid(&path, "xa").unwrap();
    assert_eq!(data.len(), 200);
    assert!(data.iter().all(|e| validate_hierarchy(e).is_empty()));
    let s = stats(&data, TaskId::A);
    assert!(s.count("xa", "OFF") > 40 && s.count("xa", "NOT") > 40);
}
