//! Verbal multiword expression identification with a lateral inhibition
//! layer and language-adversarial training.
//!
//! * [`corpus`]: CUPT parsing, IOB2 tag encoding, merging, seen/unseen keys.
//! * [`autodiff`]: a small reverse-mode tape with a finite-difference checker.
//! * [`lateral_inhibition`]: the gating layer and its surrogate gradient.
//! * [`model`]: feature extractor, tag classifier and language discriminator.
//! * [`trainer`]: joint SGD with gradient reversal.
//! * [`evaluation`]: MWE-based global and unseen precision/recall/F1.
//! * [`gradcheck_suite`]: the finite-difference checks behind `mwe gradcheck`.

pub mod autodiff;
pub mod corpus;
pub mod evaluation;
pub mod gradcheck_suite;
pub mod lateral_inhibition;
pub mod model;
pub mod trainer;
