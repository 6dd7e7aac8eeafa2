//! Procedural labelled image processes.
//!
//! Sources are discrete, uniform, and collectively independent; a pure
//! renderer maps each source configuration to a small grayscale image
//! with pixels in `[0,1]`. The default renderers are injective, so the
//! full configuration table doubles as an exact evaluation set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const IMAGE_SIDE: usize = 16;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RendererId {
    /// One axis-aligned square: x(8), y(8), size(4), intensity(4).
    Blob,
    /// Two squares in disjoint halves: xA(6), yA(6), iA(3), xB(6), yB(6), iB(3).
    TwoBlob,
}

/// A source specification plus its renderer.
#[derive(Debug, Clone)]
pub struct SyntheticProcess {
    pub sources: Vec<(String, usize)>,
    pub renderer: RendererId,
}

impl SyntheticProcess {
    pub fn blob() -> Self {
        Self {
            sources: vec![
                ("x".into(), 8),
                ("y".into(), 8),
                ("size".into(), 4),
                ("intensity".into(), 4),
            ],
            renderer: RendererId::Blob,
        }
    }

    pub fn two_blob() -> Self {
        Self {
            sources: vec![
                ("x_a".into(), 6),
                ("y_a".into(), 6),
                ("intensity_a".into(), 3),
                ("x_b".into(), 6),
                ("y_b".into(), 6),
                ("intensity_b".into(), 3),
            ],
            renderer: RendererId::TwoBlob,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "blob" => Some(Self::blob()),
            "two-blob" | "two_blob" => Some(Self::two_blob()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.renderer {
            RendererId::Blob => "blob",
            RendererId::TwoBlob => "two-blob",
        }
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.sources.iter().map(|(_, c)| *c).collect()
    }

    pub fn total_configurations(&self) -> usize {
        self.sources.iter().map(|(_, c)| c).product()
    }

    pub fn render(&self, s: &[usize]) -> Vec<f64> {
        match self.renderer {
            RendererId::Blob => render_blob(s),
            RendererId::TwoBlob => render_two_blob(s),
        }
    }

    /// Draws each source independently and uniformly, then renders.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
        let s: Vec<usize> = self
            .sources
            .iter()
            .map(|(_, card)| rng.gen_range(0..*card))
            .collect();
        let x = self.render(&s);
        (s, x)
    }

    /// Full configuration table in mixed-radix order.
    pub fn enumerate_all(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        let cards = self.cardinalities();
        let total = self.total_configurations();
        let mut out = Vec::with_capacity(total);
        let mut s = vec![0usize; cards.len()];
        for _ in 0..total {
            out.push((s.clone(), self.render(&s)));
            for i in (0..cards.len()).rev() {
                s[i] += 1;
                if s[i] < cards[i] {
                    break;
                }
                s[i] = 0;
            }
        }
        out
    }
}

fn paint_square(img: &mut [f64], left: usize, top: usize, side: usize, value: f64) {
    debug_assert!(left + side <= IMAGE_SIDE && top + side <= IMAGE_SIDE);
    for r in top..top + side {
        for c in left..left + side {
            img[r * IMAGE_SIDE + c] = value;
        }
    }
}

/// One square: position on a 8x8 grid offset by one pixel, side
/// `3 + size`, intensity `0.4 + 0.2 * level`. The largest square at
/// the largest offset ends at pixel 14, inside the 16-pixel frame.
pub fn render_blob(s: &[usize]) -> Vec<f64> {
    let (x, y, size, intensity) = (s[0], s[1], s[2], s[3]);
    let mut img = vec![0.0; IMAGE_PIXELS];
    let side = 3 + size;
    let value = 0.4 + 0.2 * intensity as f64;
    paint_square(&mut img, 1 + x, 1 + y, side, value);
    img
}

/// Two side-3 squares confined to the left and right image halves, so
/// they can never occlude each other.
pub fn render_two_blob(s: &[usize]) -> Vec<f64> {
    let (xa, ya, ia, xb, yb, ib) = (s[0], s[1], s[2], s[3], s[4], s[5]);
    let mut img = vec![0.0; IMAGE_PIXELS];
    let value_a = 0.5 + 0.25 * ia as f64;
    let value_b = 0.5 + 0.25 * ib as f64;
    paint_square(&mut img, xa, 1 + 2 * ya, 3, value_a);
    paint_square(&mut img, 8 + xb, 1 + 2 * yb, 3, value_b);
    img
}
