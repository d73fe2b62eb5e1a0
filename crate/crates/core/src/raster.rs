//! Offline images: rasterization of stroke samples, Zhang-Suen thinning,
//! height and stroke-width normalization, raw-pixel column sequences and
//! binary PGM (P5) I/O.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::seq::{FeatureSeq, Point2, StrokeSample};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

/// 8-neighborhood offsets in Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW.
pub const RING: [(i64, i64); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidCanvas { width, height });
        }
        Ok(Self {
            width,
            height,
            pixels: vec![false; width * height],
        })
    }

    /// Build from rows of `'#'` (ink) and any other char (background).
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut img = Self::new(width, height)?;
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::ShapeError("ragged ascii rows".into()));
            }
            for (x, c) in row.chars().enumerate() {
                img.set(x, y, c == '#');
            }
        }
        Ok(img)
    }

    pub fn to_ascii(&self) -> Vec<String> {
        (0..self.height)
            .map(|y| (0..self.width).map(|x| if self.get(x, y) { '#' } else { '.' }).collect())
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    /// Out-of-bounds reads are background.
    pub fn at(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, ink: bool) {
        self.pixels[y * self.width + x] = ink;
    }

    fn set_clipped(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.set(x as usize, y as usize, true);
        }
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    /// Ink pixels in row-major order.
    pub fn ink_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).filter(move |&x| self.get(x, y)).map(move |x| (x, y)))
    }

    fn ring(&self, x: usize, y: usize) -> [bool; 8] {
        let (x, y) = (x as i64, y as i64);
        RING.map(|(dx, dy)| self.at(x + dx, y + dy))
    }

    /// Number of 8-connected ink components.
    pub fn component_count(&self) -> usize {
        self.component_labels().1
    }

    /// Component index of every pixel (row-major, `usize::MAX` off ink) and
    /// the number of 8-connected components.
    fn component_labels(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.pixels.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for (x, y) in self.ink_pixels() {
            if label[y * self.width + x] != usize::MAX {
                continue;
            }
            label[y * self.width + x] = count;
            stack.push((x as i64, y as i64));
            while let Some((cx, cy)) = stack.pop() {
                for (dx, dy) in RING {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if self.at(nx, ny) {
                        let i = ny as usize * self.width + nx as usize;
                        if label[i] == usize::MAX {
                            label[i] = count;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// True when no 2x2 window is entirely ink.
    pub fn is_unit_width(&self) -> bool {
        (0..self.height.saturating_sub(1)).all(|y| {
            (0..self.width.saturating_sub(1))
                .all(|x| !(self.get(x, y) && self.get(x + 1, y) && self.get(x, y + 1) && self.get(x + 1, y + 1)))
        })
    }
}

/// A unit-width thinned image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    pub image: BinaryImage,
}

impl Skeleton {
    /// Wrap an image that is already thin, without thinning it.
    pub fn from_thin(image: BinaryImage) -> Self {
        Self { image }
    }
}

/// Maps sample coordinates onto the canvas by a uniform scale and a
/// centering offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub scale: f64,
    pub offset: Point2,
    pub origin: Point2,
}

impl Placement {
    pub fn apply(&self, p: &Point2) -> Point2 {
        Point2::new(
            (p.x - self.origin.x) * self.scale + self.offset.x,
            (p.y - self.origin.y) * self.scale + self.offset.y,
        )
    }

    pub fn pixel(&self, p: &Point2) -> (i64, i64) {
        let q = self.apply(p);
        (q.x.round() as i64, q.y.round() as i64)
    }
}

#[derive(Debug, Clone)]
pub struct Rasterized {
    pub image: BinaryImage,
    pub placement: Placement,
}

/// Pixels of an 8-connected Bresenham line, both ends included.
pub fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Round brush offsets for a pen `width` pixels wide.
pub fn brush(width: usize) -> Vec<(i64, i64)> {
    let w = width.max(1) as i64;
    let lo = -((w - 1) / 2);
    let hi = w / 2;
    let c = (lo + hi) as f64 / 2.0;
    let r2 = (w as f64 / 2.0).powi(2) + 1e-9;
    let mut out = Vec::new();
    for dy in lo..=hi {
        for dx in lo..=hi {
            if (dx as f64 - c).powi(2) + (dy as f64 - c).powi(2) <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn stamp(img: &mut BinaryImage, brush: &[(i64, i64)], x: i64, y: i64) {
    for &(dx, dy) in brush {
        img.set_clipped(x + dx, y + dy);
    }
}

/// Uniform scale-and-center placement of `sample` inside `canvas`, with a
/// margin that keeps the pen off the border.
pub fn placement_for(sample: &StrokeSample, canvas: (usize, usize), pen_width: usize) -> Result<Placement> {
    let (w, h) = canvas;
    let margin = pen_width as f64 / 2.0 + 1.0;
    let avail_w = w as f64 - 1.0 - 2.0 * margin;
    let avail_h = h as f64 - 1.0 - 2.0 * margin;
    if w == 0 || h == 0 || avail_w <= 0.0 || avail_h <= 0.0 {
        return Err(Error::InvalidCanvas { width: w, height: h });
    }
    let (lo, hi) = sample.bounds();
    let (bw, bh) = (hi.x - lo.x, hi.y - lo.y);
    let sx = if bw > 0.0 { avail_w / bw } else { f64::INFINITY };
    let sy = if bh > 0.0 { avail_h / bh } else { f64::INFINITY };
    let scale = match sx.min(sy) {
        s if s.is_finite() => s,
        _ => 1.0,
    };
    let offset = Point2::new(
        (w as f64 - 1.0 - bw * scale) / 2.0,
        (h as f64 - 1.0 - bh * scale) / 2.0,
    );
    Ok(Placement {
        scale,
        offset,
        origin: lo,
    })
}

/// Canvas of fixed `height` whose width follows the sample's aspect ratio.
pub fn canvas_for_height(sample: &StrokeSample, height: usize, pen_width: usize) -> (usize, usize) {
    let (lo, hi) = sample.bounds();
    let margin = pen_width as f64 + 2.0;
    let inner_h = (height as f64 - 1.0 - margin).max(1.0);
    let bh = (hi.y - lo.y).max(1e-9);
    let inner_w = (hi.x - lo.x) * inner_h / bh;
    let width = (inner_w + 1.0 + margin).ceil() as usize;
    (width.max(pen_width + 4), height)
}

/// Render every stroke as 8-connected line segments stamped with a round pen.
pub fn rasterize(sample: &StrokeSample, canvas: (usize, usize), pen_width: usize) -> Result<Rasterized> {
    let placement = placement_for(sample, canvas, pen_width)?;
    let mut image = BinaryImage::new(canvas.0, canvas.1)?;
    let pen = brush(pen_width);
    for stroke in &sample.strokes {
        let px: Vec<(i64, i64)> = stroke.points.iter().map(|p| placement.pixel(p)).collect();
        if let [only] = px.as_slice() {
            stamp(&mut image, &pen, only.0, only.1);
        }
        for w in px.windows(2) {
            for (x, y) in line_pixels(w[0], w[1]) {
                stamp(&mut image, &pen, x, y);
            }
        }
    }
    Ok(Rasterized { image, placement })
}

fn transitions(ring: &[bool; 8]) -> usize {
    (0..8).filter(|&i| !ring[i] && ring[(i + 1) % 8]).count()
}

fn zs_candidate(ring: &[bool; 8], first: bool) -> bool {
    let b = ring.iter().filter(|&&p| p).count();
    if !(2..=6).contains(&b) || transitions(ring) != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *ring;
    if first {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

fn deletable(ring: &[bool; 8]) -> bool {
    let b = ring.iter().filter(|&&p| p).count();
    (2..=6).contains(&b) && transitions(ring) == 1
}

/// One Zhang-Suen subiteration: candidates are flagged on a snapshot and
/// cleared together. Two-pixel-thick runs can vanish or split under
/// simultaneous removal; when that happens the subiteration is redone
/// removing candidates one at a time, each only while still deletable.
fn zs_pass(img: &mut BinaryImage, first: bool) -> bool {
    let candidates: Vec<(usize, usize)> = img
        .ink_pixels()
        .filter(|&(x, y)| zs_candidate(&img.ring(x, y), first))
        .collect();
    if candidates.is_empty() {
        return false;
    }
    let (before, count) = img.component_labels();
    let mut parallel = img.clone();
    for &(x, y) in &candidates {
        parallel.set(x, y, false);
    }
    let mut alive = vec![false; count];
    for (x, y) in parallel.ink_pixels() {
        alive[before[y * img.width + x]] = true;
    }
    if parallel.component_count() == count && alive.iter().all(|&a| a) {
        *img = parallel;
        return true;
    }
    let mut changed = false;
    for (x, y) in candidates {
        if deletable(&img.ring(x, y)) {
            img.set(x, y, false);
            changed = true;
        }
    }
    changed
}

/// Remove deletable pixels of remaining 2x2 ink blocks.
fn break_blocks(img: &mut BinaryImage) -> bool {
    let mut changed = false;
    for y in 0..img.height().saturating_sub(1) {
        for x in 0..img.width().saturating_sub(1) {
            let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
            if !block.iter().all(|&(bx, by)| img.get(bx, by)) {
                continue;
            }
            if let Some(&(bx, by)) = block.iter().find(|&&(bx, by)| deletable(&img.ring(bx, by))) {
                img.set(bx, by, false);
                changed = true;
            }
        }
    }
    changed
}

/// Zhang-Suen thinning iterated to a fixed point.
pub fn skeletonize(img: &BinaryImage) -> Result<Skeleton> {
    if img.is_blank() {
        return Err(Error::BlankImage);
    }
    let mut out = img.clone();
    loop {
        loop {
            let a = zs_pass(&mut out, true);
            let b = zs_pass(&mut out, false);
            if !(a || b) {
                break;
            }
        }
        if !break_blocks(&mut out) {
            break;
        }
    }
    Ok(Skeleton { image: out })
}

/// Nearest-neighbor resize to `target_height`, width scaled to keep the
/// aspect ratio: `round(width * target_height / height)`.
pub fn normalize_size(img: &BinaryImage, target_height: usize) -> Result<BinaryImage> {
    if target_height < 8 {
        return Err(Error::Config(format!("target height {target_height} is below 8")));
    }
    let new_w = ((img.width() as f64 * target_height as f64 / img.height() as f64).round() as usize).max(1);
    let mut out = BinaryImage::new(new_w, target_height)?;
    for y in 0..target_height {
        let sy = (((y as f64 + 0.5) * img.height() as f64 / target_height as f64) as usize).min(img.height() - 1);
        for x in 0..new_w {
            let sx = (((x as f64 + 0.5) * img.width() as f64 / new_w as f64) as usize).min(img.width() - 1);
            out.set(x, y, img.get(sx, sy));
        }
    }
    Ok(out)
}

pub fn dilate(img: &BinaryImage, pen_width: usize) -> BinaryImage {
    let pen = brush(pen_width);
    let mut out = img.clone();
    for (x, y) in img.ink_pixels() {
        stamp(&mut out, &pen, x as i64, y as i64);
    }
    out
}

/// Thin to unit width, then thicken uniformly with a round pen.
pub fn normalize_stroke_width(img: &BinaryImage, target_width: usize) -> Result<BinaryImage> {
    let skel = skeletonize(img)?;
    Ok(dilate(&skel.image, target_width))
}

/// One timestep per column: the column's ink occupancy in `bin_height`
/// equal row bins, each a fraction in `[0, 1]`.
pub fn raw_pixel_sequence(img: &BinaryImage, bin_height: usize) -> Result<FeatureSeq> {
    if bin_height == 0 || img.height() < bin_height {
        return Err(Error::ShapeError(format!(
            "image height {} cannot be binned into {bin_height} rows",
            img.height()
        )));
    }
    let h = img.height();
    let bounds: Vec<usize> = (0..=bin_height).map(|b| b * h / bin_height).collect();
    let mut data = Vec::with_capacity(img.width() * bin_height);
    for x in 0..img.width() {
        for b in 0..bin_height {
            let (r0, r1) = (bounds[b], bounds[b + 1]);
            let ink = (r0..r1).filter(|&y| img.get(x, y)).count();
            data.push(ink as f64 / (r1 - r0) as f64);
        }
    }
    FeatureSeq::new(bin_height, data)
}

pub fn write_pgm<W: Write>(mut w: W, img: &BinaryImage) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut r: R) -> Result<BinaryImage> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("expected P5 magic, found {:?}", tokens[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let data = buf
        .get(pos..pos + w * h)
        .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    let mut img = BinaryImage::new(w, h)?;
    for (i, &v) in data.iter().enumerate() {
        img.pixels[i] = v >= 128;
    }
    Ok(img)
}

pub fn save_pgm(path: &Path, img: &BinaryImage) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(&mut f, img)?;
    f.flush()?;
    Ok(())
}

pub fn load_pgm(path: &Path) -> Result<BinaryImage> {
    read_pgm(crate::io::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{Granularity, Stroke};

    fn sample(strokes: Vec<Vec<(f64, f64)>>) -> StrokeSample {
        StrokeSample {
            id: "t".into(),
            label: "A".into(),
            granularity: Granularity::Character,
            strokes: strokes
                .into_iter()
                .map(|s| Stroke::new(s.into_iter().map(|(x, y)| Point2::new(x, y)).collect()))
                .collect(),
        }
    }

    #[test]
    fn horizontal_stroke_is_one_row() {
        let r = rasterize(&sample(vec![vec![(0.0, 0.0), (10.0, 0.0)]]), (20, 9), 1).unwrap();
        let rows: Vec<usize> = (0..9).filter(|&y| (0..20).any(|x| r.image.get(x, y))).collect();
        assert_eq!(rows.len(), 1);
        let y = rows[0];
        let run: Vec<usize> = (0..20).filter(|&x| r.image.get(x, y)).collect();
        assert_eq!(run.len(), run.last().unwrap() - run[0] + 1, "contiguous run");
    }

    #[test]
    fn rasterize_rejects_tiny_canvas() {
        let s = sample(vec![vec![(0.0, 0.0), (1.0, 1.0)]]);
        assert!(matches!(rasterize(&s, (0, 10), 1), Err(Error::InvalidCanvas { .. })));
        assert!(matches!(rasterize(&s, (3, 3), 3), Err(Error::InvalidCanvas { .. })));
    }

    #[test]
    fn bresenham_is_8_connected() {
        let px = line_pixels((0, 0), (7, 3));
        assert_eq!(px.len(), 8);
        for w in px.windows(2) {
            assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
        }
    }

    #[test]
    fn brush_sizes() {
        assert_eq!(brush(1), vec![(0, 0)]);
        assert_eq!(brush(2).len(), 4);
        assert_eq!(brush(3).len(), 9);
        assert_eq!(brush(5).len(), 21);
    }

    #[test]
    fn thin_line_unchanged() {
        let img = BinaryImage::from_ascii(&[".......", ".#####.", "......."]).unwrap();
        assert_eq!(skeletonize(&img).unwrap().image, img);
    }

    #[test]
    fn blank_rejected() {
        let img = BinaryImage::new(4, 4).unwrap();
        assert!(matches!(skeletonize(&img), Err(Error::BlankImage)));
        assert!(matches!(normalize_stroke_width(&img, 2), Err(Error::BlankImage)));
    }

    #[test]
    fn two_by_two_block_survives_as_a_segment() {
        let img = BinaryImage::from_ascii(&["....", ".##.", ".##.", "...."]).unwrap();
        let s = skeletonize(&img).unwrap().image;
        assert_eq!(s.component_count(), 1);
        assert!(s.is_unit_width());
        assert_eq!(s.ink_count(), 2);
    }

    #[test]
    fn size_normalization_widths() {
        let img = BinaryImage::new(800, 200).unwrap();
        let out = normalize_size(&img, 400).unwrap();
        assert_eq!((out.width(), out.height()), (1600, 400));
        let img = BinaryImage::new(100, 50).unwrap();
        let out = normalize_size(&img, 400).unwrap();
        assert_eq!((out.width(), out.height()), (800, 400));
        assert!(normalize_size(&img, 7).is_err());
    }

    #[test]
    fn size_normalization_identity() {
        let mut img = BinaryImage::new(37, 400).unwrap();
        for y in (0..400).step_by(3) {
            img.set(y % 37, y, true);
        }
        assert_eq!(normalize_size(&img, 400).unwrap(), img);
    }

    #[test]
    fn raw_pixels() {
        let blank = BinaryImage::new(5, 8).unwrap();
        let seq = raw_pixel_sequence(&blank, 4).unwrap();
        assert_eq!(seq.len(), 5);
        assert!(seq.data.iter().all(|&v| v == 0.0));

        let mut full = BinaryImage::new(5, 8).unwrap();
        for y in 0..8 {
            for x in 0..5 {
                full.set(x, y, true);
            }
        }
        assert!(raw_pixel_sequence(&full, 4).unwrap().data.iter().all(|&v| v == 1.0));

        let mut bar = BinaryImage::new(6, 8).unwrap();
        for y in 0..8 {
            bar.set(3, y, true);
        }
        let seq = raw_pixel_sequence(&bar, 4).unwrap();
        for t in 0..6 {
            let expect = if t == 3 { 1.0 } else { 0.0 };
            assert!(seq.row(t).iter().all(|&v| v == expect));
        }
        assert!(raw_pixel_sequence(&bar, 9).is_err());
    }

    #[test]
    fn partial_bins_are_fractions() {
        let mut img = BinaryImage::new(1, 4).unwrap();
        img.set(0, 0, true);
        let seq = raw_pixel_sequence(&img, 2).unwrap();
        assert_eq!(seq.data, vec![0.5, 0.0]);
    }

    #[test]
    fn pgm_round_trip_bit_exact() {
        let img = BinaryImage::from_ascii(&["#..#", ".##.", "...."]).unwrap();
        let mut bytes = Vec::new();
        write_pgm(&mut bytes, &img).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        let back = read_pgm(bytes.as_slice()).unwrap();
        assert_eq!(back, img);
        let mut again = Vec::new();
        write_pgm(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn pgm_threshold_and_comments() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[127, 128, 200]);
        let img = read_pgm(bytes.as_slice()).unwrap();
        assert_eq!(img.to_ascii(), vec![".##".to_string()]);
        assert!(read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(read_pgm(&b"P5\n4 4\n255\n\0"[..]).is_err());
    }
}
