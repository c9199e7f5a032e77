use crate::spatial::{GridIndex, SpaceVocab, SpatialError};

/// Writes grid cells as space-token triples separated by spaces.
pub fn encode_cells(cells: &[GridIndex], vocab: &SpaceVocab) -> Result<String, SpatialError> {
    let parts = cells
        .iter()
        .map(|c| vocab.encode_text(*c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.join(" "))
}

/// A free-text answer split into its words and its space-token cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAnswer {
    /// Non-space words joined by single spaces.
    pub category: String,
    pub cells: Vec<GridIndex>,
}

/// Reads space tokens in x/y/z triples; every other word is part of the
/// category.
pub fn decode_answer(text: &str, vocab: &SpaceVocab) -> Result<DecodedAnswer, SpatialError> {
    let mut words = Vec::new();
    let mut tokens = Vec::new();
    for w in text.split_whitespace() {
        if vocab.is_space_token(w) {
            tokens.push(w);
        } else {
            words.push(w);
        }
    }
    if tokens.len() % 3 != 0 {
        return Err(SpatialError::WrongTokenCount(tokens.len()));
    }
    let cells = tokens
        .chunks(3)
        .map(|c| vocab.tokens_to_grid(c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DecodedAnswer {
        category: words.join(" "),
        cells,
    })
}
