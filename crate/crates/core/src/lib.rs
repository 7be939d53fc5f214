//! Dialog control with a recurrent policy over action templates.
//!
//! The network ([`nn`]) maps per-turn feature vectors to a distribution over
//! templates; developer code ([`dialog::DomainHooks`]) tracks entities, masks
//! unavailable actions and executes API calls. Policies are trained by
//! imitation of example dialogs ([`sl`]) and by policy gradient against a
//! simulated user ([`rl`], [`usersim`]). [`phone`] is the address-book
//! calling domain used throughout, and [`service`] hosts live sessions with
//! on-line correction.

pub mod dialog;
pub mod error;
pub mod nn;
pub mod phone;
pub mod rl;
pub mod service;
pub mod sl;
pub mod usersim;

pub use error::{Error, Result};

/// Derives an independent seed for sub-stream `stream` of `seed` (splitmix64).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
