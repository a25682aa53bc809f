use crate::error::{Error, Result};

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of every piece. Pieces that end up empty are dropped.
pub fn tokenize(query: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = query
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(Error::Data(format!("query {query:?} has no tokens")));
    }
    Ok(tokens)
}

/// Maps a time in seconds to a frame index with `floor(t / duration * T)`,
/// clamped to `[0, T-1]`. The flag reports whether `t` lay outside
/// `[0, duration]`.
pub fn time_to_index(t: f64, frames: usize, duration: f64) -> (usize, bool) {
    debug_assert!(frames >= 1 && duration > 0.0);
    let out_of_range = !(0.0..=duration).contains(&t);
    let raw = (t / duration * frames as f64).floor();
    let idx = if raw <= 0.0 { 0 } else { (raw as usize).min(frames - 1) };
    (idx, out_of_range)
}

/// Half-open span `[idx, idx+1)` of a frame, in seconds.
pub fn index_to_span(start_idx: usize, end_idx: usize, frames: usize, duration: f64) -> (f64, f64) {
    let step = duration / frames as f64;
    (start_idx as f64 * step, (end_idx + 1) as f64 * step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Person put a notebook in a bag.").unwrap(),
            ["person", "put", "a", "notebook", "in", "a", "bag"]
        );
        assert_eq!(tokenize("  HELLO,   world ").unwrap(), ["hello", "world"]);
        assert!(tokenize("...").is_err());
        assert_eq!(tokenize("don't stop").unwrap(), ["don't", "stop"]);
    }

    #[test]
    fn time_mapping() {
        assert_eq!(time_to_index(0.0, 30, 30.0), (0, false));
        assert_eq!(time_to_index(30.0, 30, 30.0), (29, false));
        assert_eq!(time_to_index(15.5, 30, 30.0), (15, false));
        assert_eq!(time_to_index(-1.0, 30, 30.0), (0, true));
        assert_eq!(time_to_index(31.0, 30, 30.0), (29, true));
    }

    #[test]
    fn span_inverts_mapping() {
        let (s, e) = index_to_span(0, 0, 1, 12.5);
        assert_eq!((s, e), (0.0, 12.5));
        let (s, e) = index_to_span(3, 5, 10, 20.0);
        assert_eq!((s, e), (6.0, 12.0));
    }

    mod props {
        use super::super::time_to_index;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mapping_is_monotone(a in -5.0f64..60.0, b in -5.0f64..60.0, frames in 1usize..200, dur in 0.5f64..50.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(time_to_index(lo, frames, dur).0 <= time_to_index(hi, frames, dur).0);
                prop_assert!(time_to_index(hi, frames, dur).0 < frames);
            }
        }
    }
}
