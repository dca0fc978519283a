//! Convergence-bound evaluators and numeric certification of the supporting
//! inequalities.

mod bounds;
mod empirical;
mod lemmas;

pub use bounds::{
    adam_bound, adam_rate_grid, muon_bound, muon_rate_grid, AdamBoundInput, AdamBoundReport,
    GridRow, MuonBoundInput, MuonBoundReport,
};
pub use empirical::{empirical_vs_bound, BoundComparison, BoundInput};
pub use lemmas::{check_lemma_suite, LemmaReport, LemmaSuiteReport};

/// Render a flat name -> number map as a single JSON object, keys in the
/// given order.
pub fn flat_json(pairs: &[(&str, f64)]) -> String {
    let mut out = String::from("{");
    for (i, (k, v)) in pairs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        if v.is_finite() {
            out.push_str(&format!("\"{k}\": {v}"));
        } else {
            out.push_str(&format!("\"{k}\": null"));
        }
    }
    out.push('}');
    out
}
