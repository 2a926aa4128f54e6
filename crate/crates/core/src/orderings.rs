//! The eight cyclic pivot orderings that form the option space of the sweep game.
//!
//! Frozen definitions (pivots are `(p, q)` with `p < q`):
//!
//! * `Horizontal`: row-major, `(0,1), (0,2), …, (0,n-1), (1,2), …`
//! * `Vertical`: column-major, for each column `q` ascending the rows `0..q`
//! * `TopLeftBottomRight`: bands parallel to the main diagonal, nearest first
//!   (sorted by `q - p`, ties by `p`)
//! * `TopRightBottomLeft`: bands parallel to the anti-diagonal, starting at the
//!   corner `(0, n-1)` (sorted by `p + (n-1-q)`, ties by `p`)
//!
//! Each `*Back` variant is the exact reverse of its base sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{pivots, PivotAction};

pub const NUM_OPTIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SweepOption {
    Horizontal = 0,
    HorizontalBack = 1,
    Vertical = 2,
    VerticalBack = 3,
    TopLeftBottomRight = 4,
    TopLeftBottomRightBack = 5,
    TopRightBottomLeft = 6,
    TopRightBottomLeftBack = 7,
}

const ALL: [SweepOption; NUM_OPTIONS] = [
    SweepOption::Horizontal,
    SweepOption::HorizontalBack,
    SweepOption::Vertical,
    SweepOption::VerticalBack,
    SweepOption::TopLeftBottomRight,
    SweepOption::TopLeftBottomRightBack,
    SweepOption::TopRightBottomLeft,
    SweepOption::TopRightBottomLeftBack,
];

/// All options, ids `0..8` in order.
pub fn all_options() -> [SweepOption; NUM_OPTIONS] {
    ALL
}

impl SweepOption {
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        ALL.get(id)
            .copied()
            .ok_or_else(|| Error::Config(format!("option id {id} not in 0..{NUM_OPTIONS}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepOption::Horizontal => "Horizontal",
            SweepOption::HorizontalBack => "HorizontalBack",
            SweepOption::Vertical => "Vertical",
            SweepOption::VerticalBack => "VerticalBack",
            SweepOption::TopLeftBottomRight => "TopLeftBottomRight",
            SweepOption::TopLeftBottomRightBack => "TopLeftBottomRightBack",
            SweepOption::TopRightBottomLeft => "TopRightBottomLeft",
            SweepOption::TopRightBottomLeftBack => "TopRightBottomLeftBack",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL.iter()
            .copied()
            .find(|o| o.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown sweep option {name:?}")))
    }

    pub fn is_back(self) -> bool {
        self.id() % 2 == 1
    }

    /// The forward variant this option is derived from.
    pub fn base(self) -> Self {
        ALL[self.id() & !1]
    }

    /// Full pivot sequence of one sweep over an `n × n` matrix.
    pub fn pivot_sequence(self, n: usize) -> Vec<PivotAction> {
        let mut seq: Vec<PivotAction> = match self.base() {
            SweepOption::Horizontal => pivots(n).collect(),
            SweepOption::Vertical => (1..n)
                .flat_map(|q| (0..q).map(move |p| PivotAction { p, q }))
                .collect(),
            SweepOption::TopLeftBottomRight => {
                let mut v: Vec<_> = pivots(n).collect();
                v.sort_by_key(|a| (a.q - a.p, a.p));
                v
            }
            SweepOption::TopRightBottomLeft => {
                let mut v: Vec<_> = pivots(n).collect();
                v.sort_by_key(|a| (a.p + (n - 1 - a.q), a.p));
                v
            }
            _ => unreachable!("base() returns a forward variant"),
        };
        if self.is_back() {
            seq.reverse();
        }
        seq
    }
}

impl std::fmt::Display for SweepOption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.id(), self.name())
    }
}

/// Text rendering used by the golden files: one `p q` pair per line.
pub fn render_sequence(seq: &[PivotAction]) -> String {
    seq.iter().map(|a| format!("{} {}\n", a.p, a.q)).collect()
}
