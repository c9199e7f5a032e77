//! Timestamp encoders and the character-level text encoder stand-in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::BankError;
use crate::tensor::Matrix;

/// Turns text into embeddings in the same space as prompts.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// One embedding per whitespace-separated word, `L x dim`.
    fn encode_words(&self, text: &str) -> Result<Matrix, BankError>;

    /// Single pooled embedding for the whole string, `1 x dim`.
    fn embed(&self, text: &str) -> Result<Matrix, BankError>;
}

/// Maps a time offset (seconds relative to the current moment) to a `1 x dim`
/// embedding.
pub trait TimestampEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, offset_s: f64) -> Result<Matrix, BankError>;
}

const FIRST_PRINTABLE: u32 = 32;
const PRINTABLE_COUNT: usize = 95;

/// Mean-pooled character embeddings over printable ASCII; every other
/// character shares one out-of-vocabulary row.
#[derive(Debug, Clone, PartialEq)]
pub struct CharEmbedding {
    table: Matrix,
}

impl CharEmbedding {
    pub const ROWS: usize = PRINTABLE_COUNT + 1;

    /// Standard-normal table drawn from `seed`.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..Self::ROWS * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            table: Matrix::new(Self::ROWS, dim, data).expect("finite normal samples"),
        }
    }

    pub fn from_table(table: Matrix) -> Result<Self, BankError> {
        if table.rows() != Self::ROWS {
            return Err(BankError::Shape(format!(
                "character table needs {} rows, got {}",
                Self::ROWS,
                table.rows()
            )));
        }
        Ok(Self { table })
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut Matrix {
        &mut self.table
    }

    fn row_of(c: char) -> usize {
        let code = c as u32;
        if (FIRST_PRINTABLE..FIRST_PRINTABLE + PRINTABLE_COUNT as u32).contains(&code) {
            (code - FIRST_PRINTABLE) as usize
        } else {
            PRINTABLE_COUNT
        }
    }

    fn pool(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.table.cols()];
        let mut n = 0usize;
        for c in text.chars() {
            for (a, v) in acc.iter_mut().zip(self.table.row(Self::row_of(c))) {
                *a += v;
            }
            n += 1;
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        acc
    }
}

impl TextEncoder for CharEmbedding {
    fn dim(&self) -> usize {
        self.table.cols()
    }

    fn encode_words(&self, text: &str) -> Result<Matrix, BankError> {
        let rows: Vec<Vec<f64>> = text.split_whitespace().map(|w| self.pool(w)).collect();
        if rows.is_empty() {
            return Err(BankError::EmptyPrompt);
        }
        Ok(Matrix::from_rows(&rows)?)
    }

    fn embed(&self, text: &str) -> Result<Matrix, BankError> {
        if text.is_empty() {
            return Err(BankError::EmptyPrompt);
        }
        Ok(Matrix::row_vector(&self.pool(text))?)
    }
}

/// Canonical wording of a time offset: `"now"`, `"3.5 seconds ago"` for
/// negative offsets, `"in 2.0 seconds"` for positive ones. Offsets that round
/// to `0.0` read as `"now"`.
pub fn render_timestamp(offset_s: f64) -> Result<String, BankError> {
    if offset_s.is_nan() {
        return Err(BankError::NanTimestamp);
    }
    let magnitude = format!("{:.1}", offset_s.abs());
    Ok(if magnitude == "0.0" {
        "now".to_string()
    } else if offset_s < 0.0 {
        format!("{magnitude} seconds ago")
    } else {
        format!("in {magnitude} seconds")
    })
}

/// Embeds a time offset by rendering it as text and pooling the text encoder.
pub fn encode_timestamp_textual<E: TextEncoder + ?Sized>(
    offset_s: f64,
    encoder: &E,
) -> Result<Matrix, BankError> {
    encoder.embed(&render_timestamp(offset_s)?)
}

/// Alternating `sin`/`cos` over a geometric ladder of frequencies
/// `1 / 10000^(2i/dim)`.
pub fn encode_timestamp_sinusoidal(t: f64, dim: usize) -> Matrix {
    let mut out = Matrix::zeros(1, dim);
    for j in 0..dim {
        let pair = (j / 2) as f64;
        let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
        let angle = t * freq;
        out.set(0, j, if j % 2 == 0 { angle.sin() } else { angle.cos() });
    }
    out
}

/// [`TimestampEncoder`] that goes through text.
pub struct TextualTimestamps<'a, E: TextEncoder + ?Sized>(pub &'a E);

impl<E: TextEncoder + ?Sized> TimestampEncoder for TextualTimestamps<'_, E> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn encode(&self, offset_s: f64) -> Result<Matrix, BankError> {
        encode_timestamp_textual(offset_s, self.0)
    }
}

/// [`TimestampEncoder`] using the sinusoidal ladder.
pub struct SinusoidalTimestamps {
    pub dim: usize,
}

impl TimestampEncoder for SinusoidalTimestamps {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, offset_s: f64) -> Result<Matrix, BankError> {
        if !offset_s.is_finite() {
            return Err(BankError::NanTimestamp);
        }
        Ok(encode_timestamp_sinusoidal(offset_s, self.dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &Matrix, b: &Matrix) -> f64 {
        let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn rendering() {
        assert_eq!(render_timestamp(0.0).unwrap(), "now");
        assert_eq!(render_timestamp(-0.04).unwrap(), "now");
        assert_eq!(render_timestamp(-3.5).unwrap(), "3.5 seconds ago");
        assert_eq!(render_timestamp(2.0).unwrap(), "in 2.0 seconds");
        assert!(matches!(render_timestamp(f64::NAN), Err(BankError::NanTimestamp)));
    }

    #[test]
    fn textual_is_deterministic_and_injective() {
        let enc = CharEmbedding::seeded(32, 0);
        let now = encode_timestamp_textual(0.0, &enc).unwrap();
        assert_eq!(now, encode_timestamp_textual(0.0, &enc).unwrap());
        assert_eq!(now, enc.embed("now").unwrap());
        let a = encode_timestamp_textual(3.5, &enc).unwrap();
        let b = encode_timestamp_textual(3.5, &enc).unwrap();
        let c = encode_timestamp_textual(3.0, &enc).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn nearby_offsets_embed_closer_than_distant_ones() {
        let enc = CharEmbedding::seeded(32, 0);
        let e35 = encode_timestamp_textual(3.5, &enc).unwrap();
        let e30 = encode_timestamp_textual(3.0, &enc).unwrap();
        let e60 = encode_timestamp_textual(60.0, &enc).unwrap();
        assert!(cosine(&e35, &e30) > cosine(&e35, &e60));
    }

    #[test]
    fn sinusoidal_at_zero_alternates() {
        let e = encode_timestamp_sinusoidal(0.0, 6);
        assert_eq!(e.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn sinusoidal_range_and_distinctness() {
        let all: Vec<Matrix> = (0..=120)
            .map(|i| encode_timestamp_sinusoidal(i as f64 * 0.5, 32))
            .collect();
        for e in &all {
            assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert!(all[i].max_abs_diff(&all[j]) > 1e-6, "{i} vs {j}");
            }
        }
    }

    #[test]
    fn word_encoding_shape() {
        let enc = CharEmbedding::seeded(8, 1);
        let m = enc.encode_words("what happened  3.5 seconds ago").unwrap();
        assert_eq!(m.shape(), (5, 8));
        assert!(matches!(enc.encode_words("   "), Err(BankError::EmptyPrompt)));
        // non-ASCII characters share the fallback row
        assert_eq!(enc.embed("é").unwrap(), enc.embed("ß").unwrap());
    }
}
