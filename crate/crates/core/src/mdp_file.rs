//! Sectioned text format for tabular ISA-MDPs.
//!
//! ```toml
//! [dimensions]
//! n_states = 2
//! n_actions = 2
//!
//! [reward]
//! rows = [[-0.45, -0.1], [0.5, 0.5]]
//!
//! [transition]
//! # slices[s][a] is the next-state distribution
//! slices = [[[0.7, 0.3], [0.99, 0.01]], [[0.2, 0.8], [0.99, 0.01]]]
//!
//! [discount]
//! gamma = 0.9
//!
//! [start]
//! mu0 = [0.5, 0.5]
//!
//! [perturbation]
//! sets = [[0, 1], [1, 0]]
//!
//! [embeddings]
//! vectors = [[1.0, 0.0], [0.0, 1.0]]
//! ```

use serde::Deserialize;
use toml::Spanned;

use crate::error::Result;
use crate::mdp::{MdpParts, TabularIsaMdp};
use crate::textio::{self, fmt_exact, fmt_exact_list, parse_error};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    dimensions: Spanned<Dimensions>,
    reward: Spanned<Reward>,
    transition: Spanned<Transition>,
    discount: Spanned<Discount>,
    start: Spanned<Start>,
    perturbation: Spanned<Perturbation>,
    embeddings: Option<Spanned<Embeddings>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Dimensions {
    n_states: usize,
    n_actions: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Reward {
    rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Transition {
    slices: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Discount {
    gamma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Start {
    mu0: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Perturbation {
    sets: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Embeddings {
    vectors: Vec<Vec<f64>>,
}

/// Parses and validates an MDP document; every error carries a line number.
pub fn parse_mdp(text: &str) -> Result<TabularIsaMdp> {
    let doc: Document = toml::from_str(text).map_err(|e| textio::toml_error(text, e))?;
    let dims = doc.dimensions.get_ref();
    if dims.n_states == 0 || dims.n_actions == 0 {
        return Err(parse_error(text, doc.dimensions.span(), "dimensions must be positive"));
    }
    let rows = &doc.reward.get_ref().rows;
    if rows.len() != dims.n_states || rows.iter().any(|r| r.len() != dims.n_actions) {
        return Err(parse_error(
            text,
            doc.reward.span(),
            format!("reward must be {} x {}", dims.n_states, dims.n_actions),
        ));
    }
    let slices = &doc.transition.get_ref().slices;
    let shape_ok = slices.len() == dims.n_states
        && slices
            .iter()
            .all(|s| s.len() == dims.n_actions && s.iter().all(|r| r.len() == dims.n_states));
    if !shape_ok {
        return Err(parse_error(
            text,
            doc.transition.span(),
            format!(
                "transition must be {} x {} x {}",
                dims.n_states, dims.n_actions, dims.n_states
            ),
        ));
    }
    let parts = MdpParts {
        reward: rows.clone(),
        transition: slices.clone(),
        gamma: doc.discount.get_ref().gamma,
        mu0: doc.start.get_ref().mu0.clone(),
        perturb_sets: doc.perturbation.get_ref().sets.clone(),
        embeddings: doc.embeddings.as_ref().map(|e| e.get_ref().vectors.clone()),
    };
    TabularIsaMdp::new(parts).map_err(|e| {
        let msg = e.to_string();
        let span = if msg.contains("P(") || msg.contains("transition") {
            doc.transition.span()
        } else if msg.contains("gamma") {
            doc.discount.span()
        } else if msg.contains("mu0") {
            doc.start.span()
        } else if msg.contains("embedding") {
            doc.embeddings.as_ref().map_or(0..0, |e| e.span())
        } else if msg.contains("reward") {
            doc.reward.span()
        } else {
            doc.perturbation.span()
        };
        parse_error(text, span, msg)
    })
}

pub fn load_mdp(path: &std::path::Path) -> Result<TabularIsaMdp> {
    parse_mdp(&std::fs::read_to_string(path)?)
}

/// Serialises `mdp` in the format read by [`parse_mdp`].
pub fn to_mdp_string(mdp: &TabularIsaMdp) -> String {
    let matrix = |rows: &[Vec<f64>]| {
        let inner: Vec<String> = rows.iter().map(|r| fmt_exact_list(r)).collect();
        format!("[{}]", inner.join(", "))
    };
    let slices: Vec<String> = mdp.transition_slices().iter().map(|s| matrix(s)).collect();
    let sets: Vec<String> = mdp
        .perturb_sets()
        .iter()
        .map(|s| format!("[{}]", s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")))
        .collect();
    let mut out = format!(
        "[dimensions]\nn_states = {}\nn_actions = {}\n\n[reward]\nrows = {}\n\n[transition]\nslices = [{}]\n\n[discount]\ngamma = {}\n\n[start]\nmu0 = {}\n\n[perturbation]\nsets = [{}]\n",
        mdp.n_states(),
        mdp.n_actions(),
        matrix(&mdp.reward_rows()),
        slices.join(", "),
        fmt_exact(mdp.gamma()),
        fmt_exact_list(mdp.mu0()),
        sets.join(", ")
    );
    if let Some(emb) = mdp.embeddings() {
        out.push_str(&format!("\n[embeddings]\nvectors = {}\n", matrix(emb)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    const TOY_FILE: &str = include_str!("../data/toy.toml");

    #[test]
    fn checked_in_toy_matches_builtin() {
        let parsed = parse_mdp(TOY_FILE).unwrap();
        assert_eq!(parsed, TabularIsaMdp::toy());
    }

    #[test]
    fn round_trip() {
        let mdp = TabularIsaMdp::toy();
        assert_eq!(parse_mdp(&to_mdp_string(&mdp)).unwrap(), mdp);
    }

    fn line_of_error(text: &str) -> usize {
        match parse_mdp(text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_lines() {
        let bad_row = TOY_FILE.replace("[0.7, 0.3]", "[0.7, 0.4]");
        let line = TOY_FILE.lines().position(|l| l.starts_with("[transition]")).unwrap() + 1;
        assert_eq!(line_of_error(&bad_row), line);

        let bad_gamma = TOY_FILE.replace("gamma = 0.9", "gamma = 1.0");
        let line = TOY_FILE.lines().position(|l| l.starts_with("[discount]")).unwrap() + 1;
        assert_eq!(line_of_error(&bad_gamma), line);

        let typo = TOY_FILE.replace("mu0 =", "muO =");
        let line = TOY_FILE.lines().position(|l| l.starts_with("mu0")).unwrap() + 1;
        assert_eq!(line_of_error(&typo), line);

        let missing_self = TOY_FILE.replace("sets = [[0, 1], [1, 0]]", "sets = [[1], [1, 0]]");
        let line = TOY_FILE.lines().position(|l| l.starts_with("[perturbation]")).unwrap() + 1;
        assert_eq!(line_of_error(&missing_self), line);
    }
}
