//! Unit conversion at the boundary of the equations of motion.

pub const TAU: f64 = core::f64::consts::TAU;

/// Cyclic frequency in MHz to angular frequency in rad/μs.
#[inline]
pub fn angular(mhz: f64) -> f64 {
    TAU * mhz
}

/// Angular frequency in rad/μs back to cyclic MHz.
#[inline]
pub fn cyclic(rad_per_us: f64) -> f64 {
    rad_per_us / TAU
}
