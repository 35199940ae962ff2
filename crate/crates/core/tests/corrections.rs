use regex::Regex;
use scribe_core::gateway::CorrectionSet;

// Straight sequential application of the shipped rule file, written without
// the library's rule types.
fn oracle(text: &str) -> String {
    let rules: Vec<serde_json::Value> = serde_json::from_str(include_str!("../data/corrections.json")).unwrap();
    let mut out = text.to_string();
    for r in rules {
        let re = Regex::new(r["pattern"].as_str().unwrap()).unwrap();
        out = re.replace_all(&out, r["replacement"].as_str().unwrap()).into_owned();
    }
    out
}

fn inputs() -> Vec<String> {
    let heads = [
        "The ytd dist amt",
        "Unique id of the acct",
        "Stored in the DB",
        "Customer E-mail , masked",
        "The the SSN of a an employee",
        "Plain sentence with nothing to fix",
        "amt ; acct : dist .",
        "the a the unique id",
        "DBMS and DB2 are not DB",
        "Total distance , e-mail and ytdx",
    ];
    let tails = ["", " for the account .", " in USD", " per the the period ;", " DB ."];
    heads
        .iter()
        .flat_map(|h| tails.iter().map(move |t| format!("{h}{t}")))
        .collect()
}

#[test]
fn fifty_strings_match_sequential_oracle() {
    let set = CorrectionSet::builtin();
    assert_eq!(set.rules().len(), 10);
    let inputs = inputs();
    assert_eq!(inputs.len(), 50);
    for s in &inputs {
        let (out, _) = set.apply(s);
        assert_eq!(out, oracle(s), "input {s:?}");
        assert_eq!(set.apply(&out).0, out, "second pass changed {out:?}");
    }
}

#[test]
fn hand_checked_outputs() {
    let set = CorrectionSet::builtin();
    let cases = [
        ("The ytd dist amt", "The year to date distribution amount"),
        ("Unique id of the acct in the DB .", "Unique id of the account in the database."),
        ("the unique id", "the unique identifier"),
        ("Customer E-mail , masked", "Customer email, masked"),
        ("The the SSN of a an employee", "The the social security number of a employee"),
        ("DBMS and DB2 are not DB", "DBMS and DB2 are not database"),
    ];
    for (input, want) in cases {
        assert_eq!(set.apply(input).0, want, "input {input:?}");
    }
}

#[test]
fn applied_ids_follow_file_order() {
    let set = CorrectionSet::builtin();
    let (_, ids) = set.apply("SSN amt , DB");
    assert_eq!(ids, ["amt-expand", "space-before-punct", "db-expand", "ssn-expand"]);
}
