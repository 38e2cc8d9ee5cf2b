//! Masked-modeling selection shared by text and geographic inputs.

use alloc::vec::Vec;
use rand::Rng;

pub const DEFAULT_MASK_PROB: f64 = 0.15;

/// What happens to one selectable unit (a token, or a whole object).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    /// Not selected; no prediction target.
    Untouched,
    /// Selected, replaced by the MASK row.
    Mask,
    /// Selected, replaced by random valid codes.
    Random,
    /// Selected, left as is.
    Keep,
}

impl MaskAction {
    pub fn is_target(self) -> bool {
        self != MaskAction::Untouched
    }
}

/// Selects each of `count` units independently with probability `p`, then
/// splits the selected ones 80/10/10 into mask, random and keep.
pub fn plan_mask<R: Rng + ?Sized>(rng: &mut R, count: usize, p: f64) -> Vec<MaskAction> {
    (0..count)
        .map(|_| {
            let pick: f64 = rng.gen();
            if pick >= p {
                return MaskAction::Untouched;
            }
            let how: f64 = rng.gen();
            if how < 0.8 {
                MaskAction::Mask
            } else if how < 0.9 {
                MaskAction::Random
            } else {
                MaskAction::Keep
            }
        })
        .collect()
}
