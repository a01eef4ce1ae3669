use tnet::harness::{check_entry, corpus};
use tnet::network::Budget;

#[test]
fn every_corpus_expectation_holds() {
    let budget = Budget::default();
    let mut failures = Vec::new();
    for entry in corpus().unwrap() {
        for r in check_entry(&entry, &budget) {
            println!("{r}");
            if !r.pass {
                failures.push(r.to_string());
            }
        }
    }
    assert!(failures.is_empty(), "failing records:\n{}", failures.join("\n"));
}
