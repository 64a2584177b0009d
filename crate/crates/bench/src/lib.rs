//! Synthetic inputs shared by the benchmarks in `benches/`.

use gramprompt::corpus::{Dataset, MinimalPair};

/// `paradigms` × `per_paradigm` pairs spread over four categories.
pub fn synthetic_pairs(paradigms: usize, per_paradigm: usize) -> Vec<MinimalPair> {
    let mut out = Vec::with_capacity(paradigms * per_paradigm);
    for p in 0..paradigms {
        let paradigm = format!("paradigm_{p:02}");
        for i in 0..per_paradigm {
            out.push(MinimalPair {
                id: format!("{paradigm}:{i:05}"),
                dataset: Dataset::Blimp,
                language: "en".into(),
                paradigm: paradigm.clone(),
                category: format!("category {}", p % 4),
                good: format!("Only the {i} dogs that Mary saw have ever barked."),
                bad: format!("The {i} dogs that Mary saw have ever barked."),
            });
        }
    }
    out
}
