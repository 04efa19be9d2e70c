//! Torus geometry and droplet analysis for spin configurations.
//!
//! Sites of an `L x L` torus are indexed row-major (`site = y * L + x`) with
//! row 0 even. A configuration is identified with its set of up-spins and
//! represented geometrically as a union of unit squares, so perimeter,
//! corners and envelopes are properties of that polyomino on the torus.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("torus side must be at least 2, got {0}")]
    SideTooSmall(usize),
    #[error("site index {site} out of range for side {side}")]
    SiteOutOfRange { site: usize, side: usize },
    #[error("invalid configuration encoding: {0}")]
    BadEncoding(String),
}

/// Row parity of a site; the alternating-field model keys its field off this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowParity {
    Even,
    Odd,
}

/// Finite square torus with periodic wrap.
///
/// Nearest neighbors are the 4 axis steps, next-nearest the 4 diagonal steps
/// (Euclidean distance sqrt(2)). On `L = 2` the neighbor lists contain
/// repeats; bonds are then counted with multiplicity, which keeps every
/// bond-sum identity exact.
#[derive(Debug)]
pub struct Torus {
    side: usize,
    nn: Vec<[u32; 4]>,
    nnn: Vec<[u32; 4]>,
}

impl Torus {
    pub fn new(side: usize) -> Result<Arc<Torus>, LatticeError> {
        if side < 2 {
            return Err(LatticeError::SideTooSmall(side));
        }
        let n = side * side;
        let mut nn = Vec::with_capacity(n);
        let mut nnn = Vec::with_capacity(n);
        for site in 0..n {
            let (x, y) = (site % side, site / side);
            let xe = (x + 1) % side;
            let xw = (x + side - 1) % side;
            let yn = (y + 1) % side;
            let ys = (y + side - 1) % side;
            // order: E, W, N, S
            nn.push([
                (y * side + xe) as u32,
                (y * side + xw) as u32,
                (yn * side + x) as u32,
                (ys * side + x) as u32,
            ]);
            // order: NE, NW, SE, SW
            nnn.push([
                (yn * side + xe) as u32,
                (yn * side + xw) as u32,
                (ys * side + xe) as u32,
                (ys * side + xw) as u32,
            ]);
        }
        Ok(Arc::new(Torus { side, nn, nnn }))
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn site(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.side && y < self.side);
        y * self.side + x
    }

    /// Site for possibly out-of-range coordinates, wrapped onto the torus.
    #[inline]
    pub fn site_wrapped(&self, x: i64, y: i64) -> usize {
        let l = self.side as i64;
        let x = x.rem_euclid(l) as usize;
        let y = y.rem_euclid(l) as usize;
        y * self.side + x
    }

    #[inline]
    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site % self.side, site / self.side)
    }

    #[inline]
    pub fn row_parity(&self, site: usize) -> RowParity {
        if (site / self.side) % 2 == 0 {
            RowParity::Even
        } else {
            RowParity::Odd
        }
    }

    /// The 4 nearest neighbors of `site`, order E, W, N, S.
    #[inline]
    pub fn nn(&self, site: usize) -> &[u32; 4] {
        &self.nn[site]
    }

    /// The 4 next-nearest neighbors of `site`, order NE, NW, SE, SW.
    #[inline]
    pub fn nnn(&self, site: usize) -> &[u32; 4] {
        &self.nnn[site]
    }
}

/// Configuration identified with its set of (+1)-sites, as a bitset.
#[derive(Clone)]
pub struct SpinConfiguration {
    torus: Arc<Torus>,
    bits: Vec<u64>,
    plus_count: usize,
}

/// Hashable identity of a configuration (side + raw bitset words).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigKey {
    pub side: u32,
    pub words: Box<[u64]>,
}

impl fmt::Debug for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfiguration(L={}, {})", self.torus.side, self.to_hex())
    }
}

impl PartialEq for SpinConfiguration {
    fn eq(&self, other: &Self) -> bool {
        self.torus.side == other.torus.side && self.bits == other.bits
    }
}
impl Eq for SpinConfiguration {}

impl SpinConfiguration {
    pub fn empty(torus: Arc<Torus>) -> Self {
        let words = torus.len().div_ceil(64);
        SpinConfiguration {
            torus,
            bits: vec![0; words],
            plus_count: 0,
        }
    }

    pub fn full(torus: Arc<Torus>) -> Self {
        let mut c = Self::empty(torus);
        for s in 0..c.torus.len() {
            c.set(s, true);
        }
        c
    }

    pub fn from_sites<I: IntoIterator<Item = usize>>(torus: Arc<Torus>, sites: I) -> Self {
        let mut c = Self::empty(torus);
        for s in sites {
            c.set(s, true);
        }
        c
    }

    #[inline]
    pub fn torus(&self) -> &Arc<Torus> {
        &self.torus
    }

    #[inline]
    pub fn get(&self, site: usize) -> bool {
        self.bits[site / 64] & (1u64 << (site % 64)) != 0
    }

    /// Spin value at `site` as +-1.
    #[inline]
    pub fn spin(&self, site: usize) -> i32 {
        if self.get(site) {
            1
        } else {
            -1
        }
    }

    pub fn set(&mut self, site: usize, up: bool) {
        let (w, b) = (site / 64, 1u64 << (site % 64));
        let was = self.bits[w] & b != 0;
        if up && !was {
            self.bits[w] |= b;
            self.plus_count += 1;
        } else if !up && was {
            self.bits[w] &= !b;
            self.plus_count -= 1;
        }
    }

    /// Single spin flip; an involution.
    pub fn flip(&mut self, site: usize) {
        let (w, b) = (site / 64, 1u64 << (site % 64));
        self.bits[w] ^= b;
        if self.bits[w] & b != 0 {
            self.plus_count += 1;
        } else {
            self.plus_count -= 1;
        }
    }

    pub fn flipped(&self, site: usize) -> Self {
        let mut c = self.clone();
        c.flip(site);
        c
    }

    #[inline]
    pub fn plus_count(&self) -> usize {
        self.plus_count
    }

    pub fn is_all_minus(&self) -> bool {
        self.plus_count == 0
    }

    pub fn is_all_plus(&self) -> bool {
        self.plus_count == self.torus.len()
    }

    pub fn plus_sites(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.torus.len();
        self.bits.iter().enumerate().flat_map(move |(w, &word)| {
            let mut word = word;
            let mut out = Vec::new();
            while word != 0 {
                let b = word.trailing_zeros() as usize;
                let site = w * 64 + b;
                if site < n {
                    out.push(site);
                }
                word &= word - 1;
            }
            out
        })
    }

    pub fn key(&self) -> ConfigKey {
        ConfigKey {
            side: self.torus.side as u32,
            words: self.bits.clone().into_boxed_slice(),
        }
    }

    /// Compact hex encoding of the bitset, used in reports and golden tests.
    /// Low nibble first, so site 0 is the least significant bit of digit 0.
    pub fn to_hex(&self) -> String {
        let nibbles = self.torus.len().div_ceil(4);
        let mut s = String::with_capacity(nibbles);
        for i in 0..nibbles {
            let w = (i * 4) / 64;
            let shift = (i * 4) % 64;
            let nib = ((self.bits[w] >> shift) & 0xf) as u32;
            s.push(char::from_digit(nib, 16).unwrap());
        }
        s
    }

    pub fn from_hex(torus: Arc<Torus>, hex: &str) -> Result<Self, LatticeError> {
        let nibbles = torus.len().div_ceil(4);
        if hex.len() != nibbles {
            return Err(LatticeError::BadEncoding(format!(
                "expected {} hex digits for L={}, got {}",
                nibbles,
                torus.side(),
                hex.len()
            )));
        }
        let mut c = Self::empty(torus);
        for (i, ch) in hex.chars().enumerate() {
            let nib = ch
                .to_digit(16)
                .ok_or_else(|| LatticeError::BadEncoding(format!("bad hex digit '{ch}'")))?;
            for b in 0..4 {
                let site = i * 4 + b;
                if site < c.torus.len() && nib & (1 << b) != 0 {
                    // reject set bits beyond the lattice
                    c.set(site, true);
                }
                if site >= c.torus.len() && nib & (1 << b) != 0 {
                    return Err(LatticeError::BadEncoding(
                        "set bit beyond lattice size".into(),
                    ));
                }
            }
        }
        Ok(c)
    }

    /// Translate every plus-site by `(dx, dy)` on the torus.
    pub fn translated(&self, dx: i64, dy: i64) -> Self {
        let t = &self.torus;
        let mut c = Self::empty(self.torus.clone());
        for s in self.plus_sites() {
            let (x, y) = t.coords(s);
            c.set(t.site_wrapped(x as i64 + dx, y as i64 + dy), true);
        }
        c
    }

    /// Lexicographically smallest key over all torus translations.
    /// Configurations in the same translation orbit share this value.
    pub fn translation_orbit_key(&self) -> ConfigKey {
        let l = self.torus.side as i64;
        let mut best: Option<ConfigKey> = None;
        for dy in 0..l {
            for dx in 0..l {
                let k = self.translated(dx, dy).key();
                if best.as_ref().is_none_or(|b| k < *b) {
                    best = Some(k);
                }
            }
        }
        best.unwrap()
    }
}

/// Integer geometry counts that determine every model energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GeomCounts {
    /// Number of (+1)-sites.
    pub area: usize,
    /// (+1)-sites on odd rows.
    pub odd_area: usize,
    /// Length of the vertical part of the boundary (= discordant horizontal bonds).
    pub vertical_boundary: usize,
    /// Length of the horizontal part of the boundary (= discordant vertical bonds).
    pub horizontal_boundary: usize,
    /// Number of right angles of the boundary; a checkerboard vertex counts 4.
    pub corners: usize,
    /// Discordant next-nearest-neighbor bonds (with multiplicity on L=2).
    pub discordant_nnn: usize,
}

impl GeomCounts {
    pub fn perimeter(&self) -> usize {
        self.vertical_boundary + self.horizontal_boundary
    }

    pub fn even_area(&self) -> usize {
        self.area - self.odd_area
    }
}

/// Window of occupied coordinates along one torus axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisWindow {
    /// Minimal covering window `[start, start + len)`; ties broken by the
    /// smallest start.
    Window { start: usize, len: usize },
    /// Every coordinate along the axis is occupied.
    Wraps,
}

impl AxisWindow {
    pub fn len_or_side(&self, side: usize) -> usize {
        match self {
            AxisWindow::Window { len, .. } => *len,
            AxisWindow::Wraps => side,
        }
    }
}

/// Smallest torus rectangle containing a droplet: `(P_H, P_V)` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub horizontal: AxisWindow,
    pub vertical: AxisWindow,
}

/// Shape taxonomy of a single 4-connected droplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShapeTag {
    /// `width x height` rectangle (horizontal length first).
    Rectangle { width: usize, height: usize },
    /// Rectangle with staircase-cut corners.
    Octagon(OctagonSpec),
    /// Rectangle whose envelope wraps at least one axis.
    WrappingRectangle,
    Other,
}

/// Octagon parameters: bounding box `d_n x d_w` (horizontal x vertical) and
/// the four oblique edge lengths. A rectangle is the degenerate case with all
/// oblique lengths 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OctagonSpec {
    pub d_n: usize,
    pub d_w: usize,
    pub l_ne: usize,
    pub l_nw: usize,
    pub l_sw: usize,
    pub l_se: usize,
}

impl OctagonSpec {
    /// Lengths of the N, W, S, E coordinate edges.
    pub fn coordinate_edges(&self) -> [usize; 4] {
        [
            self.d_n - (self.l_ne - 1) - (self.l_nw - 1),
            self.d_w - (self.l_nw - 1) - (self.l_sw - 1),
            self.d_n - (self.l_sw - 1) - (self.l_se - 1),
            self.d_w - (self.l_se - 1) - (self.l_ne - 1),
        ]
    }

    /// All eight edges at least 2.
    pub fn is_stable(&self) -> bool {
        let ce = self.coordinate_edges();
        ce.iter().all(|&e| e >= 2)
            && [self.l_ne, self.l_nw, self.l_sw, self.l_se]
                .iter()
                .all(|&l| l >= 2)
    }

    pub fn area(&self) -> usize {
        let cut: usize = [self.l_ne, self.l_nw, self.l_sw, self.l_se]
            .iter()
            .map(|&l| l * (l - 1) / 2)
            .sum();
        self.d_n * self.d_w - cut
    }
}

/// Full per-component classification.
#[derive(Debug, Clone)]
pub struct ComponentShape {
    pub tag: ShapeTag,
    pub envelope: Envelope,
    /// Plus-sites with exactly one plus nearest neighbor, within this component.
    pub protuberances: Vec<usize>,
    /// Torus row indices where the component has exactly one site.
    pub singleton_rows: Vec<usize>,
    /// Torus column indices where the component has exactly one site.
    pub singleton_cols: Vec<usize>,
    /// Rectangle starting and ending on even rows with width >= 2 and odd
    /// height >= 3 (the alternating model's barrier-stable droplets).
    pub stable_rectangle_pm: bool,
}

impl SpinConfiguration {
    /// All geometry counts in one sweep over sites and vertices.
    pub fn geometry(&self) -> GeomCounts {
        let t = &self.torus;
        let l = t.side();
        let mut g = GeomCounts::default();
        for s in self.plus_sites() {
            g.area += 1;
            if t.row_parity(s) == RowParity::Odd {
                g.odd_area += 1;
            }
            let nbr = t.nn(s);
            // E, W faces are vertical boundary; N, S horizontal
            g.vertical_boundary += usize::from(!self.get(nbr[0] as usize));
            g.vertical_boundary += usize::from(!self.get(nbr[1] as usize));
            g.horizontal_boundary += usize::from(!self.get(nbr[2] as usize));
            g.horizontal_boundary += usize::from(!self.get(nbr[3] as usize));
            for &d in t.nnn(s) {
                g.discordant_nnn += usize::from(!self.get(d as usize));
            }
        }
        // Corners live on lattice vertices; vertex (i, j) touches cells
        // (i-1, j-1), (i, j-1), (i-1, j), (i, j).
        for j in 0..l as i64 {
            for i in 0..l as i64 {
                let a = self.get(t.site_wrapped(i - 1, j - 1));
                let b = self.get(t.site_wrapped(i, j - 1));
                let c = self.get(t.site_wrapped(i - 1, j));
                let d = self.get(t.site_wrapped(i, j));
                let n = usize::from(a) + usize::from(b) + usize::from(c) + usize::from(d);
                g.corners += match n {
                    1 | 3 => 1,
                    // diagonal pair: the kissing case counts 4
                    2 if a == d => 4,
                    _ => 0,
                };
            }
        }
        g
    }

    /// `(|bd_V|, |bd_H|)`.
    pub fn boundary_lengths(&self) -> (usize, usize) {
        let g = self.geometry();
        (g.vertical_boundary, g.horizontal_boundary)
    }

    pub fn corner_count(&self) -> usize {
        self.geometry().corners
    }

    /// Maximal 4-connected droplets. Diagonal contact does not connect.
    pub fn connected_components(&self) -> Vec<SpinConfiguration> {
        let t = &self.torus;
        let mut seen = vec![false; t.len()];
        let mut out = Vec::new();
        for start in self.plus_sites() {
            if seen[start] {
                continue;
            }
            let mut comp = SpinConfiguration::empty(self.torus.clone());
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(s) = stack.pop() {
                comp.set(s, true);
                for &n in t.nn(s) {
                    let n = n as usize;
                    if self.get(n) && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Minimal bounding windows per axis; `Wraps` when an axis is saturated.
    pub fn rectangular_envelope(&self) -> Envelope {
        Envelope {
            horizontal: minimal_window(self, true),
            vertical: minimal_window(self, false),
        }
    }

    /// Classify a single 4-connected droplet. The caller is expected to pass
    /// one component of `connected_components`.
    pub fn classify_component(&self) -> ComponentShape {
        let t = self.torus.clone();
        let envelope = self.rectangular_envelope();
        let protuberances = self
            .plus_sites()
            .filter(|&s| {
                t.nn(s)
                    .iter()
                    .filter(|&&n| self.get(n as usize))
                    .count()
                    == 1
            })
            .collect();

        let mut row_counts = vec![0usize; t.side()];
        let mut col_counts = vec![0usize; t.side()];
        for s in self.plus_sites() {
            let (x, y) = t.coords(s);
            col_counts[x] += 1;
            row_counts[y] += 1;
        }
        let singleton_rows = (0..t.side()).filter(|&y| row_counts[y] == 1).collect();
        let singleton_cols = (0..t.side()).filter(|&x| col_counts[x] == 1).collect();

        let tag = self.shape_tag(&envelope);
        let stable_rectangle_pm = match (&tag, envelope.vertical) {
            (ShapeTag::Rectangle { width, height }, AxisWindow::Window { start, .. }) => {
                *width >= 2 && *height >= 3 && height % 2 == 1 && start % 2 == 0
            }
            _ => false,
        };

        ComponentShape {
            tag,
            envelope,
            protuberances,
            singleton_rows,
            singleton_cols,
            stable_rectangle_pm,
        }
    }

    fn shape_tag(&self, envelope: &Envelope) -> ShapeTag {
        let t = &self.torus;
        let (x0, w) = match envelope.horizontal {
            AxisWindow::Window { start, len } => (start, len),
            AxisWindow::Wraps => {
                return if self.is_full_rectangle_wrapping(envelope) {
                    ShapeTag::WrappingRectangle
                } else {
                    ShapeTag::Other
                }
            }
        };
        let (y0, h) = match envelope.vertical {
            AxisWindow::Window { start, len } => (start, len),
            AxisWindow::Wraps => {
                return if self.is_full_rectangle_wrapping(envelope) {
                    ShapeTag::WrappingRectangle
                } else {
                    ShapeTag::Other
                }
            }
        };

        // Occupancy grid in window coordinates, row 0 = bottom of the window.
        let mut grid = vec![false; w * h];
        let mut count = 0usize;
        for s in self.plus_sites() {
            let (x, y) = t.coords(s);
            let dx = (x + t.side() - x0) % t.side();
            let dy = (y + t.side() - y0) % t.side();
            if dx >= w || dy >= h {
                return ShapeTag::Other;
            }
            grid[dy * w + dx] = true;
            count += 1;
        }

        // Every row must be a contiguous interval.
        let mut left = vec![0usize; h];
        let mut right = vec![0usize; h];
        for r in 0..h {
            let row = &grid[r * w..(r + 1) * w];
            let lo = match row.iter().position(|&b| b) {
                Some(p) => p,
                None => return ShapeTag::Other,
            };
            let hi = row.iter().rposition(|&b| b).unwrap();
            if row[lo..=hi].iter().any(|&b| !b) {
                return ShapeTag::Other;
            }
            left[r] = lo;
            right[r] = hi;
        }

        if count == w * h {
            return ShapeTag::Rectangle { width: w, height: h };
        }

        // Staircase profile: l_a - 1 oblique bars cut at each corner.
        let spec = OctagonSpec {
            d_n: w,
            d_w: h,
            l_ne: 1 + (w - 1 - right[h - 1]),
            l_nw: 1 + left[h - 1],
            l_sw: 1 + left[0],
            l_se: 1 + (w - 1 - right[0]),
        };
        // Inferred cuts must leave every coordinate edge nonempty.
        if spec.l_ne + spec.l_nw > w + 1
            || spec.l_sw + spec.l_se > w + 1
            || spec.l_ne + spec.l_se > h + 1
            || spec.l_nw + spec.l_sw > h + 1
        {
            return ShapeTag::Other;
        }
        for r in 0..h {
            let cut_l = (spec.l_sw - 1).saturating_sub(r).max((spec.l_nw - 1).saturating_sub(h - 1 - r));
            let cut_r = (spec.l_se - 1).saturating_sub(r).max((spec.l_ne - 1).saturating_sub(h - 1 - r));
            if left[r] != cut_l || right[r] != w - 1 - cut_r {
                return ShapeTag::Other;
            }
        }
        ShapeTag::Octagon(spec)
    }

    fn is_full_rectangle_wrapping(&self, envelope: &Envelope) -> bool {
        let t = &self.torus;
        let w = envelope.horizontal.len_or_side(t.side());
        let h = envelope.vertical.len_or_side(t.side());
        if self.plus_count() != w * h {
            return false;
        }
        // Occupied rows and columns must each be contiguous intervals (or the
        // whole axis) and every (row, col) cell in the product occupied.
        let mut cols = vec![false; t.side()];
        let mut rows = vec![false; t.side()];
        for s in self.plus_sites() {
            let (x, y) = t.coords(s);
            cols[x] = true;
            rows[y] = true;
        }
        cols.iter().filter(|&&b| b).count() == w && rows.iter().filter(|&&b| b).count() == h
    }
}

fn minimal_window(config: &SpinConfiguration, horizontal: bool) -> AxisWindow {
    let t = config.torus();
    let side = t.side();
    let mut occupied = vec![false; side];
    for s in config.plus_sites() {
        let (x, y) = t.coords(s);
        occupied[if horizontal { x } else { y }] = true;
    }
    let occ_count = occupied.iter().filter(|&&b| b).count();
    if occ_count == 0 {
        return AxisWindow::Window { start: 0, len: 0 };
    }
    if occ_count == side {
        return AxisWindow::Wraps;
    }
    // Longest run of unoccupied coordinates (cyclically); the window is its
    // complement. Ties broken by the smallest window start.
    let mut best_gap = 0usize;
    let mut best_start = usize::MAX;
    for g0 in 0..side {
        let prev = (g0 + side - 1) % side;
        if occupied[g0] || !occupied[prev] {
            continue; // not the beginning of a gap
        }
        let mut len = 0;
        while !occupied[(g0 + len) % side] {
            len += 1;
        }
        let start = (g0 + len) % side;
        if len > best_gap || (len == best_gap && start < best_start) {
            best_gap = len;
            best_start = start;
        }
    }
    AxisWindow::Window {
        start: best_start,
        len: side - best_gap,
    }
}

/// Cells of an octagon `Q(d_n, d_w; l_ne, l_nw, l_sw, l_se)` anchored with its
/// bounding-box bottom-left corner at `(x0, y0)` (pre-wrap coordinates).
pub fn octagon_cells(
    x0: i64,
    y0: i64,
    spec: &OctagonSpec,
) -> Vec<(i64, i64)> {
    let (w, h) = (spec.d_n as i64, spec.d_w as i64);
    let mut cells = Vec::new();
    for r in 0..h {
        let from_top = h - 1 - r;
        let cut_l = ((spec.l_sw as i64 - 1) - r)
            .max((spec.l_nw as i64 - 1) - from_top)
            .max(0);
        let cut_r = ((spec.l_se as i64 - 1) - r)
            .max((spec.l_ne as i64 - 1) - from_top)
            .max(0);
        for c in cut_l..(w - cut_r) {
            cells.push((x0 + c, y0 + r));
        }
    }
    cells
}

/// Build a configuration from pre-wrap cells.
pub fn config_from_cells(torus: &Arc<Torus>, cells: &[(i64, i64)]) -> SpinConfiguration {
    SpinConfiguration::from_sites(
        torus.clone(),
        cells.iter().map(|&(x, y)| torus.site_wrapped(x, y)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn torus(l: usize) -> Arc<Torus> {
        Torus::new(l).unwrap()
    }

    fn rect(t: &Arc<Torus>, x0: usize, y0: usize, w: usize, h: usize) -> SpinConfiguration {
        let mut c = SpinConfiguration::empty(t.clone());
        for dy in 0..h {
            for dx in 0..w {
                c.set(t.site_wrapped((x0 + dx) as i64, (y0 + dy) as i64), true);
            }
        }
        c
    }

    #[test]
    fn neighbor_tables_are_involutive_and_regular() {
        for l in [2usize, 3, 5, 8] {
            let t = torus(l);
            for s in 0..t.len() {
                assert_eq!(t.nn(s).len(), 4);
                for &n in t.nn(s) {
                    assert!(t.nn(n as usize).contains(&(s as u32)));
                }
                for &n in t.nnn(s) {
                    assert!(t.nnn(n as usize).contains(&(s as u32)));
                }
            }
        }
    }

    #[test]
    fn side_below_two_rejected() {
        assert!(matches!(Torus::new(1), Err(LatticeError::SideTooSmall(1))));
        assert!(matches!(Torus::new(0), Err(LatticeError::SideTooSmall(0))));
    }

    #[test]
    fn single_site_geometry() {
        let t = torus(6);
        let c = SpinConfiguration::from_sites(t.clone(), [t.site(0, 0)]);
        let g = c.geometry();
        assert_eq!(g.area, 1);
        assert_eq!(g.vertical_boundary, 2);
        assert_eq!(g.horizontal_boundary, 2);
        assert_eq!(g.corners, 4);
    }

    #[test]
    fn rectangle_boundary_split() {
        let t = torus(8);
        // l1 x l2 rectangle: |bd_V| = 2*l2, |bd_H| = 2*l1
        for (l1, l2) in [(1, 1), (3, 2), (2, 5), (4, 4)] {
            let c = rect(&t, 1, 1, l1, l2);
            let (v, h) = c.boundary_lengths();
            assert_eq!(v, 2 * l2);
            assert_eq!(h, 2 * l1);
            assert_eq!(c.corner_count(), 4);
        }
    }

    #[test]
    fn kissing_squares_count_four_corners_at_the_vertex() {
        let t = torus(6);
        let c = SpinConfiguration::from_sites(t.clone(), [t.site(1, 1), t.site(2, 2)]);
        // 3 ordinary corners per square plus 4 at the kissing vertex
        assert_eq!(c.corner_count(), 10);
        // and the two squares are distinct components
        assert_eq!(c.connected_components().len(), 2);
    }

    #[test]
    fn empty_and_full_geometry() {
        let t = torus(4);
        let e = SpinConfiguration::empty(t.clone());
        let g = e.geometry();
        assert_eq!((g.area, g.perimeter(), g.corners), (0, 0, 0));
        assert!(e.connected_components().is_empty());

        let f = SpinConfiguration::full(t.clone());
        let g = f.geometry();
        assert_eq!(g.area, t.len());
        assert_eq!(g.perimeter(), 0);
        assert_eq!(g.corners, 0);
        assert_eq!(g.discordant_nnn, 0);
    }

    #[test]
    fn components_partition_plus_sites() {
        let t = torus(6);
        let mut c = rect(&t, 0, 0, 2, 2);
        for s in rect(&t, 4, 4, 1, 2).plus_sites() {
            c.set(s, true);
        }
        let comps = c.connected_components();
        assert_eq!(comps.len(), 2);
        let union: HashSet<usize> = comps.iter().flat_map(|k| k.plus_sites()).collect();
        assert_eq!(union, c.plus_sites().collect::<HashSet<_>>());
        let total: usize = comps.iter().map(|k| k.plus_count()).sum();
        assert_eq!(total, c.plus_count());
    }

    #[test]
    fn envelope_windows() {
        let t = torus(6);
        let c = rect(&t, 2, 3, 3, 2);
        let e = c.rectangular_envelope();
        assert_eq!(e.horizontal, AxisWindow::Window { start: 2, len: 3 });
        assert_eq!(e.vertical, AxisWindow::Window { start: 3, len: 2 });

        // wrapping across the seam
        let c = rect(&t, 5, 0, 2, 1);
        let e = c.rectangular_envelope();
        assert_eq!(e.horizontal, AxisWindow::Window { start: 5, len: 2 });

        // full row wraps horizontally
        let c = rect(&t, 0, 2, 6, 1);
        let e = c.rectangular_envelope();
        assert_eq!(e.horizontal, AxisWindow::Wraps);
        assert_eq!(e.vertical, AxisWindow::Window { start: 2, len: 1 });
        assert_eq!(c.classify_component().tag, ShapeTag::WrappingRectangle);
    }

    #[test]
    fn l_tromino_envelope_and_tag() {
        let t = torus(6);
        let c = SpinConfiguration::from_sites(
            t.clone(),
            [t.site(1, 1), t.site(2, 1), t.site(1, 2)],
        );
        let shape = c.classify_component();
        assert_eq!(
            shape.envelope.horizontal,
            AxisWindow::Window { start: 1, len: 2 }
        );
        assert_eq!(
            shape.envelope.vertical,
            AxisWindow::Window { start: 1, len: 2 }
        );
        // 2x2 box minus one corner is the degenerate octagon with one cut
        assert_eq!(
            shape.tag,
            ShapeTag::Octagon(OctagonSpec {
                d_n: 2,
                d_w: 2,
                l_ne: 2,
                l_nw: 1,
                l_sw: 1,
                l_se: 1
            })
        );
    }

    #[test]
    fn octagon_classifier_roundtrip_example() {
        // D_n = 15, D_w = 12, l_ne = 5, l_nw = 6, l_sw = 4, l_se = 3; N-edge 6
        let spec = OctagonSpec {
            d_n: 15,
            d_w: 12,
            l_ne: 5,
            l_nw: 6,
            l_sw: 4,
            l_se: 3,
        };
        assert_eq!(spec.coordinate_edges()[0], 15 - 4 - 5);
        let t = torus(20);
        let c = config_from_cells(&t, &octagon_cells(2, 2, &spec));
        match c.classify_component().tag {
            ShapeTag::Octagon(got) => assert_eq!(got, spec),
            other => panic!("expected octagon, got {other:?}"),
        }
    }

    #[test]
    fn rectangle_and_protuberance_classification() {
        let t = torus(8);
        let mut c = rect(&t, 1, 1, 2, 3);
        let shape = c.classify_component();
        assert_eq!(shape.tag, ShapeTag::Rectangle { width: 2, height: 3 });
        assert!(shape.protuberances.is_empty());
        // A protuberance in the middle of the east side makes the shape a
        // legal octagon: a 3x3 box with one bar cut at NE and one at SE.
        c.set(t.site(3, 2), true);
        let shape = c.classify_component();
        assert_eq!(shape.protuberances, vec![t.site(3, 2)]);
        assert_eq!(
            shape.tag,
            ShapeTag::Octagon(OctagonSpec {
                d_n: 3,
                d_w: 3,
                l_ne: 2,
                l_nw: 1,
                l_sw: 1,
                l_se: 2
            })
        );
    }

    #[test]
    fn stable_rectangle_pm_requires_even_start_odd_height() {
        let t = torus(8);
        assert!(rect(&t, 1, 2, 2, 3).classify_component().stable_rectangle_pm);
        assert!(!rect(&t, 1, 1, 2, 3).classify_component().stable_rectangle_pm); // odd start
        assert!(!rect(&t, 1, 2, 1, 3).classify_component().stable_rectangle_pm); // width 1
        assert!(!rect(&t, 1, 2, 2, 4).classify_component().stable_rectangle_pm); // even height
    }

    #[test]
    fn singleton_rows_and_columns_reported() {
        let t = torus(8);
        // 2x2 square plus a single site on the row above
        let mut c = rect(&t, 2, 2, 2, 2);
        c.set(t.site(2, 4), true);
        let shape = c.classify_component();
        assert_eq!(shape.singleton_rows, vec![4]);
        assert!(shape.singleton_cols.is_empty());
    }

    #[test]
    fn hex_roundtrip_and_bad_input() {
        let t = torus(5);
        let c = SpinConfiguration::from_sites(t.clone(), [0, 3, 17, 24]);
        let hex = c.to_hex();
        let back = SpinConfiguration::from_hex(t.clone(), &hex).unwrap();
        assert_eq!(back, c);
        assert!(SpinConfiguration::from_hex(t.clone(), "zz").is_err());
        assert!(SpinConfiguration::from_hex(t, "ffffffff").is_err());
    }

    #[test]
    fn translation_orbit_key_is_translation_invariant() {
        let t = torus(6);
        let c = SpinConfiguration::from_sites(t.clone(), [t.site(1, 1), t.site(2, 1), t.site(1, 2)]);
        let k0 = c.translation_orbit_key();
        assert_eq!(c.translated(3, 4).translation_orbit_key(), k0);
        assert_eq!(c.translated(5, 5).translation_orbit_key(), k0);
        let other = SpinConfiguration::from_sites(t.clone(), [t.site(1, 1), t.site(2, 1), t.site(2, 2)]);
        assert_ne!(other.translation_orbit_key(), k0);
    }
}
