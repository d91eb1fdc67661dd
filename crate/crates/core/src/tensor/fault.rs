//! Deliberate fault injection for exercising the gradient verification
//! harness. Never enabled in normal operation.

use std::sync::atomic::{AtomicBool, Ordering};

static SOBEL_SIGN_FLIP: AtomicBool = AtomicBool::new(false);

/// Negate the Sobel backward rule process-wide.
#[doc(hidden)]
pub fn set_sobel_sign_flip(on: bool) {
    SOBEL_SIGN_FLIP.store(on, Ordering::SeqCst);
}

pub(crate) fn sobel_sign_flip() -> bool {
    SOBEL_SIGN_FLIP.load(Ordering::Relaxed)
}
