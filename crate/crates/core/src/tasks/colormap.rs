//! Fixed 256-entry diverging colormap: blue -> white -> red.

pub const COLORMAP: [[u8; 3]; 256] = build();

const fn build() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        table[i] = if i < 128 {
            let s = (i * 2) as u8;
            [s, s, 255]
        } else {
            let s = ((255 - i) * 2) as u8;
            [255, s, s]
        };
        i += 1;
    }
    table
}

/// Interpolation round-off must not flip a value sitting on a bin edge.
const EDGE_SLACK: f64 = 1e-9;

/// Table index for `value` in `[lo, hi]`; values outside are clamped and a
/// degenerate range maps to the midpoint.
pub fn index(value: f64, lo: f64, hi: f64) -> usize {
    let t = if hi > lo {
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    };
    (t * 255.0 + EDGE_SLACK).round().min(255.0) as usize
}

pub fn color(value: f64, lo: f64, hi: f64) -> [u8; 3] {
    COLORMAP[index(value, lo, hi)]
}
