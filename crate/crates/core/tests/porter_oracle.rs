use essay_core::textproc::porter_stem;

const ORACLE: &str = include_str!("fixtures/porter_oracle.tsv");

#[test]
fn matches_reference_stemmer() {
    let mut checked = 0;
    let mut mismatches = Vec::new();
    for line in ORACLE.lines().filter(|l| !l.starts_with('#')) {
        let (word, stem) = line.split_once('\t').expect("word<TAB>stem");
        if porter_stem(word) != stem {
            mismatches.push(format!("{word}: got {} want {stem}", porter_stem(word)));
        }
        checked += 1;
    }
    assert!(checked > 2000);
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}
