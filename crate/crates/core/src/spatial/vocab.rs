use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{GridIndex, GridSpec, SpatialError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridAxis {
    X,
    Y,
    Z,
}

impl GridAxis {
    pub const ALL: [GridAxis; 3] = [GridAxis::X, GridAxis::Y, GridAxis::Z];

    fn slot(self) -> usize {
        match self {
            GridAxis::X => 0,
            GridAxis::Y => 1,
            GridAxis::Z => 2,
        }
    }
}

/// Per-axis mapping between cell indices and rarely used base-vocabulary
/// tokens. A position serializes as three tokens: x, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceVocab {
    cells: [i64; 3],
    axis_tokens: [Vec<String>; 3],
    reverse: HashMap<String, (GridAxis, i64)>,
}

/// Parses a frequency file with one `token<TAB>count` entry per line.
/// Blank lines are skipped.
pub fn parse_vocab_frequencies(text: &str) -> Result<Vec<(String, u64)>, SpatialError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| SpatialError::VocabFormat {
            line: lineno + 1,
            message: msg.to_string(),
        };
        let (token, count) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>count"))?;
        let count = count
            .trim()
            .parse::<u64>()
            .map_err(|e| bad(&format!("bad count: {e}")))?;
        out.push((token.to_string(), count));
    }
    Ok(out)
}

/// Deterministic stand-in vocabulary of `n` tokens `rare0000, rare0001, ...`
/// with strictly increasing frequencies.
pub fn synthetic_base_vocab(n: usize) -> Vec<(String, u64)> {
    (0..n)
        .map(|i| (format!("rare{i:04}"), i as u64 + 1))
        .collect()
}

impl SpaceVocab {
    /// Assigns the lowest-frequency tokens of `base` to grid cells.
    ///
    /// Tokens are sorted ascending by frequency, ties broken by lexicographic
    /// token order. The sorted tail is handed out to x cells first, then y,
    /// then z, each axis in ascending cell index.
    pub fn build(base: &[(String, u64)], spec: &GridSpec) -> Result<Self, SpatialError> {
        spec.validate()?;
        let cells = spec.cells();
        let needed = spec.total_axis_cells();
        if base.len() < needed {
            return Err(SpatialError::VocabTooSmall {
                needed,
                available: base.len(),
            });
        }
        let mut seen = HashSet::with_capacity(base.len());
        for (tok, _) in base {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(SpatialError::InvalidToken(tok.clone()));
            }
            if !seen.insert(tok.as_str()) {
                return Err(SpatialError::DuplicateToken(tok.clone()));
            }
        }

        let mut sorted: Vec<&(String, u64)> = base.iter().collect();
        sorted.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

        let mut tail = sorted.into_iter().map(|(t, _)| t.clone());
        let mut axis_tokens: [Vec<String>; 3] = Default::default();
        let mut reverse = HashMap::with_capacity(needed);
        for axis in GridAxis::ALL {
            let n = cells[axis.slot()];
            let table = &mut axis_tokens[axis.slot()];
            for idx in 0..n {
                let tok = tail.next().expect("vocabulary size checked above");
                reverse.insert(tok.clone(), (axis, idx));
                table.push(tok);
            }
        }
        Ok(Self {
            cells,
            axis_tokens,
            reverse,
        })
    }

    pub fn cells(&self) -> [i64; 3] {
        self.cells
    }

    pub fn axis_table(&self, axis: GridAxis) -> &[String] {
        &self.axis_tokens[axis.slot()]
    }

    pub fn token_for(&self, axis: GridAxis, index: i64) -> Option<&str> {
        usize::try_from(index)
            .ok()
            .and_then(|i| self.axis_tokens[axis.slot()].get(i))
            .map(String::as_str)
    }

    pub fn lookup(&self, token: &str) -> Option<(GridAxis, i64)> {
        self.reverse.get(token).copied()
    }

    pub fn is_space_token(&self, token: &str) -> bool {
        self.reverse.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    /// `[x-token, y-token, z-token]` for a cell.
    pub fn grid_to_tokens(&self, idx: GridIndex) -> Result<[String; 3], SpatialError> {
        let i = idx.as_array();
        let mut out: [String; 3] = Default::default();
        for axis in GridAxis::ALL {
            out[axis.slot()] = self
                .token_for(axis, i[axis.slot()])
                .ok_or(SpatialError::IndexOutOfRange(idx))?
                .to_string();
        }
        Ok(out)
    }

    /// Inverse of [`SpaceVocab::grid_to_tokens`].
    pub fn tokens_to_grid<S: AsRef<str>>(&self, tokens: &[S]) -> Result<GridIndex, SpatialError> {
        if tokens.len() != 3 {
            return Err(SpatialError::WrongTokenCount(tokens.len()));
        }
        let mut idx = [0i64; 3];
        for (slot, tok) in tokens.iter().enumerate() {
            let tok = tok.as_ref();
            let (axis, i) = self
                .lookup(tok)
                .ok_or_else(|| SpatialError::UnknownToken(tok.to_string()))?;
            if axis.slot() != slot {
                return Err(SpatialError::AxisOrder {
                    token: tok.to_string(),
                    position: slot,
                });
            }
            idx[slot] = i;
        }
        Ok(GridIndex::new(idx[0], idx[1], idx[2]))
    }

    /// Space-separated token triple for a cell.
    pub fn encode_text(&self, idx: GridIndex) -> Result<String, SpatialError> {
        Ok(self.grid_to_tokens(idx)?.join(" "))
    }
}
