// Reference thinning and the small-grid fixtures it is checked on. Shared by
// the core thinning tests and the acceptance suite.

/// Textbook Zhang-Suen on a boolean grid: in each subiteration every pixel
/// meeting the conditions is flagged against the unmodified image, then all
/// flagged pixels are cleared at once. Repeats until neither subiteration
/// changes anything.
pub fn zhang_suen(grid: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let h = grid.len();
    let w = grid.first().map_or(0, Vec::len);
    let mut img = grid.to_vec();
    let at = |img: &Vec<Vec<bool>>, x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && img[y as usize][x as usize]
    };
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut flagged = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !img[y][x] {
                        continue;
                    }
                    let (xi, yi) = (x as i64, y as i64);
                    // P2..P9 clockwise from north
                    let p = [
                        at(&img, xi, yi - 1),
                        at(&img, xi + 1, yi - 1),
                        at(&img, xi + 1, yi),
                        at(&img, xi + 1, yi + 1),
                        at(&img, xi, yi + 1),
                        at(&img, xi - 1, yi + 1),
                        at(&img, xi - 1, yi),
                        at(&img, xi - 1, yi - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let side = if step == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if (2..=6).contains(&b) && a == 1 && side {
                        flagged.push((x, y));
                    }
                }
            }
            for &(x, y) in &flagged {
                img[y][x] = false;
            }
            changed |= !flagged.is_empty();
        }
        if !changed {
            return img;
        }
    }
}

fn blank(w: usize, h: usize) -> Vec<Vec<bool>> {
    vec![vec![false; w]; h]
}

fn fill(g: &mut [Vec<bool>], x0: usize, y0: usize, x1: usize, y1: usize) {
    for row in &mut g[y0..y1] {
        for v in &mut row[x0..x1] {
            *v = true;
        }
    }
}

/// Named fixtures: line, rectangle, ring, plus, T and X.
pub fn fixtures() -> Vec<(&'static str, Vec<Vec<bool>>)> {
    let mut line = blank(9, 3);
    fill(&mut line, 2, 1, 7, 2);

    let mut rect = blank(9, 5);
    fill(&mut rect, 1, 1, 8, 4);

    let mut ring = blank(15, 15);
    for (y, row) in ring.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let d2 = (x as f64 - 7.0).powi(2) + (y as f64 - 7.0).powi(2);
            *v = (9.0..=36.0).contains(&d2);
        }
    }

    let mut plus = blank(13, 13);
    fill(&mut plus, 5, 1, 8, 12);
    fill(&mut plus, 1, 5, 12, 8);

    let mut tee = blank(13, 12);
    fill(&mut tee, 1, 1, 12, 4);
    fill(&mut tee, 5, 4, 8, 11);

    let mut x = blank(13, 13);
    for i in 1..12 {
        for d in 0..2 {
            x[i][(i + d).min(11)] = true;
            x[i][(12 - i - d).max(1)] = true;
        }
    }

    vec![("line", line), ("rectangle", rect), ("ring", ring), ("plus", plus), ("tee", tee), ("x", x)]
}
