//! Scoped flush-to-zero for subnormal floats.
//!
//! Saturated tanh units produce subnormal gradients, and arithmetic on them
//! made whole training epochs about seven times slower on x86. Training and
//! decoding flush them to zero.

/// Sets FTZ and DAZ for the current thread until dropped.
pub struct FlushSubnormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

#[cfg(target_arch = "x86_64")]
const FTZ_DAZ: u32 = 0x8040;

impl FlushSubnormals {
    #[allow(deprecated)]
    pub fn new() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
            // SAFETY: only the FTZ and DAZ mode bits change.
            unsafe {
                let saved = _mm_getcsr();
                _mm_setcsr(saved | FTZ_DAZ);
                FlushSubnormals { saved }
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        FlushSubnormals {}
    }
}

impl Default for FlushSubnormals {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for FlushSubnormals {
    #[allow(deprecated)]
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the value read in `new`.
        unsafe {
            std::arch::x86_64::_mm_setcsr(self.saved);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subnormals_flush_only_inside_the_scope() {
        let tiny = std::hint::black_box(f32::MIN_POSITIVE);
        let half = std::hint::black_box(0.5f32);
        assert!((tiny * half).is_subnormal());
        {
            let _g = FlushSubnormals::new();
            #[cfg(target_arch = "x86_64")]
            assert_eq!(tiny * half, 0.0);
        }
        assert!((tiny * half).is_subnormal());
    }
}
