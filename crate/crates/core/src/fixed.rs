//! Fixed-point micro-token units.
//!
//! All monetary and real-valued quantities that feed digests are carried as
//! integer micro-units (10^6 per whole unit) so serialized artifacts are
//! bit-stable across platforms.

pub const MICROS_PER_TOKEN: i64 = 1_000_000;

/// Convert a real value to integer micro-units, rounding half to even.
pub fn to_micro(value: f64) -> i64 {
    round_half_even(value * MICROS_PER_TOKEN as f64)
}

/// Convert integer micro-units back to a real value.
pub fn from_micro(micros: i64) -> f64 {
    micros as f64 / MICROS_PER_TOKEN as f64
}

/// Round to the nearest integer, ties to even (banker's rounding).
pub fn round_half_even(x: f64) -> i64 {
    let floor = x.floor();
    let frac = x - floor;
    let f = floor as i64;
    if frac > 0.5 {
        f + 1
    } else if frac < 0.5 {
        f
    } else if f % 2 == 0 {
        f
    } else {
        f + 1
    }
}
