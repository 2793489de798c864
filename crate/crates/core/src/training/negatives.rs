use rand::Rng;

use crate::graph::{Direction, Triple, TrueIndex};

/// Draws `k` corrupted entities per positive on the `side` direction.
///
/// Without `filter`, draws are uniform and a draw equal to the gold entity is
/// redrawn once, then kept. With `filter`, draws are uniform over entities
/// that do not complete the positive into a triple of the filter index; if
/// no such entity exists the unfiltered rule applies.
pub fn sample_negatives<R: Rng>(
    num_entities: usize,
    batch: &[Triple],
    k: usize,
    side: Direction,
    filter: Option<&TrueIndex>,
    rng: &mut R,
) -> Vec<u32> {
    let n = num_entities as u32;
    let mut out = Vec::with_capacity(batch.len() * k);
    for t in batch {
        let gold = side.gold(t);
        let excluded = filter.map(|f| f.completions(t, side)).unwrap_or(&[]);
        if !excluded.is_empty() && (excluded.len() as u32) < n {
            let allowed = n - excluded.len() as u32;
            for _ in 0..k {
                out.push(nth_allowed(rng.gen_range(0..allowed), excluded));
            }
            continue;
        }
        for _ in 0..k {
            let mut e = rng.gen_range(0..n);
            if e == gold {
                e = rng.gen_range(0..n);
            }
            out.push(e);
        }
    }
    out
}

/// The `r`-th entity id (0-based) not in the ascending list `excluded`.
fn nth_allowed(r: u32, excluded: &[u32]) -> u32 {
    let mut e = r;
    for &c in excluded {
        if c <= e {
            e += 1;
        } else {
            break;
        }
    }
    e
}
