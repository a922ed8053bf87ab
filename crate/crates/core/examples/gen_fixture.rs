//! Writes the hand-traceable demo corpus into a directory.
//!
//! Usage: `cargo run -p xrem-core --example gen_fixture -- DIR`

fn main() {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixture".to_string());
    let dir = std::path::PathBuf::from(dir);
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    let paths = xrem_core::fixtures::write_golden_inputs(&dir).expect("write fixture");
    println!("wrote demo corpus under {}", dir.display());
    println!("  reports:      {}", paths.reports.display());
    println!("  embeddings:   {}", paths.embeddings.display());
    println!("  queries:      {}", paths.queries.display());
    println!("  itm scores:   {}", paths.itm_scores.display());
    println!("  references:   {}", paths.references.display());
    println!("  annotations:  {}", paths.annotations.display());
}
