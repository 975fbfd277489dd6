#![allow(dead_code)] // each test binary uses a different subset

use std::fs;
use std::path::Path;

/// Two-topic corpus: 12 abstracts built from four recurring phrases, with
/// citations staying inside the topic (same parity). Small enough for
/// pipeline round-trips in well under a second.
pub fn write_fixture_corpus(path: &Path) {
    let topics = [("solar panel", "charge controller"), ("laser diode", "optical fiber")];
    let mut lines = Vec::new();
    for i in 0..12usize {
        let (a, b) = topics[i % 2];
        let row = serde_json::json!({
            "id": format!("P{i:02}"),
            "abstract": format!("the {a} and the {b} for unit u{i:02}"),
            "citations": [format!("P{:02}", (i + 2) % 12), format!("P{:02}", (i + 4) % 12)],
        });
        lines.push(row.to_string());
    }
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Labeled pairs over the four fixture phrases: same-topic 1.0, cross 0.0.
pub fn write_fixture_pairs(path: &Path) {
    let rows = "phrase1,phrase2,score\n\
        solar panel,charge controller,1.0\n\
        laser diode,optical fiber,1.0\n\
        solar panel,optical fiber,0.0\n\
        charge controller,laser diode,0.0\n";
    fs::write(path, rows).unwrap();
}

/// Config text with every path relative to the config file's directory and
/// every swept hyperparameter on its grid.
pub fn fixture_config(out_dir: &str) -> String {
    format!(
        "# fixture run\n\
         corpus = corpus.jsonl\n\
         out_dir = {out_dir}\n\
         pairs_val = val.csv\n\
         pairs_test = test.csv\n\
         top_m = 3\n\
         min_freq = 2\n\
         dim = 8\n\
         bucket_count = 128\n\
         k = 3\n\
         layers = 1\n\
         iterations = 1\n\
         fanout_r = 1\n\
         fanout_c = 1\n\
         batch_size = 2\n\
         max_epochs = 1\n\
         eval_every = 1\n\
         seed = 7\n"
    )
}

/// Lay out corpus, pairs, and config in `dir`; returns the config path.
pub fn setup_fixture(dir: &Path, out_dir: &str) -> std::path::PathBuf {
    write_fixture_corpus(&dir.join("corpus.jsonl"));
    write_fixture_pairs(&dir.join("val.csv"));
    write_fixture_pairs(&dir.join("test.csv"));
    let config = dir.join("run.conf");
    fs::write(&config, fixture_config(out_dir)).unwrap();
    config
}
