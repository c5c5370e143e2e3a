//! Answer scoring.

use crate::mechanisms::Token;

/// 1 when any gold sequence occurs contiguously inside `prediction`, else 0.
pub fn match_accuracy(prediction: &[Token], gold: &[Vec<Token>]) -> u8 {
    let hit = gold.iter().any(|g| {
        g.is_empty() || (g.len() <= prediction.len() && prediction.windows(g.len()).any(|w| w == g.as_slice()))
    });
    u8::from(hit)
}
