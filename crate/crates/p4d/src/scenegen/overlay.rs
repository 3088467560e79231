//! Set-of-mark overlays: per-region colored box outlines plus a small digit
//! glyph identifying the region.

use std::collections::BTreeMap;

use ndarray::Array3;

use super::vqa::RegionRef;

/// 5x3 digit bitmaps, rows top to bottom.
const GLYPHS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111], // 0
    [0b010, 0b110, 0b010, 0b010, 0b111], // 1
    [0b111, 0b001, 0b111, 0b100, 0b111], // 2
    [0b111, 0b001, 0b111, 0b001, 0b111], // 3
    [0b101, 0b101, 0b111, 0b001, 0b001], // 4
    [0b111, 0b100, 0b111, 0b001, 0b111], // 5
    [0b111, 0b100, 0b111, 0b101, 0b111], // 6
    [0b111, 0b001, 0b010, 0b010, 0b010], // 7
    [0b111, 0b101, 0b111, 0b101, 0b111], // 8
    [0b111, 0b101, 0b111, 0b001, 0b111], // 9
];

const GLYPH_H: usize = 5;
const GLYPH_W: usize = 3;

/// Distinct saturated colors per region id (1-based, wraps past 6).
fn region_color(id: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 6] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.3, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
    ];
    PALETTE[(id - 1) % PALETTE.len()]
}

fn parse_region_id(token: &str) -> usize {
    token
        .trim_start_matches("<R")
        .trim_end_matches('>')
        .parse()
        .unwrap_or(1)
}

/// Draw box outlines and region-id glyphs onto a copy of `frame`
/// (`(H, W, 3)`). Pixels outside the overlays are unchanged. Glyph anchors
/// that collide with an earlier region's glyph shift down one glyph height.
pub fn overlay_regions(frame: &Array3<f64>, regions: &BTreeMap<String, RegionRef>) -> Array3<f64> {
    let mut out = frame.clone();
    let (h, w, _) = out.dim();
    let mut used_anchors: Vec<(usize, usize)> = Vec::new();

    for (token, region) in regions {
        let id = parse_region_id(token);
        let color = region_color(id);
        let [x0, y0, x1, y1] = region.bbox;
        let put = |out: &mut Array3<f64>, y: usize, x: usize| {
            if y < h && x < w {
                for k in 0..3 {
                    out[[y, x, k]] = color[k];
                }
            }
        };
        for x in x0..=x1 {
            put(&mut out, y0, x);
            put(&mut out, y1, x);
        }
        for y in y0..=y1 {
            put(&mut out, y, x0);
            put(&mut out, y, x1);
        }

        let mut anchor = (y0 + 1, x0 + 1);
        while used_anchors.contains(&anchor) {
            anchor = (anchor.0 + GLYPH_H, anchor.1);
        }
        used_anchors.push(anchor);
        let glyph = GLYPHS[id % 10];
        for (dy, row) in glyph.iter().enumerate() {
            for dx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - dx)) != 0 {
                    put(&mut out, anchor.0 + dy, anchor.1 + dx);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank() -> Array3<f64> {
        Array3::zeros((32, 32, 3))
    }

    fn region(bbox: [usize; 4]) -> RegionRef {
        RegionRef { rle: vec![32 * 32], bbox }
    }

    #[test]
    fn empty_region_map_is_identity() {
        let frame = blank();
        let out = overlay_regions(&frame, &BTreeMap::new());
        assert_eq!(frame, out);
    }

    #[test]
    fn single_region_changes_only_outline_and_glyph() {
        let frame = blank();
        let mut regions = BTreeMap::new();
        regions.insert("<R1>".to_string(), region([4, 4, 12, 12]));
        let out = overlay_regions(&frame, &regions);
        let mut changed = 0;
        for y in 0..32 {
            for x in 0..32 {
                if (0..3).any(|k| out[[y, x, k]] != frame[[y, x, k]]) {
                    changed += 1;
                    let on_outline = (y == 4 || y == 12) && (4..=12).contains(&x)
                        || (x == 4 || x == 12) && (4..=12).contains(&y);
                    let in_glyph = (5..5 + GLYPH_H).contains(&y) && (5..5 + GLYPH_W).contains(&x);
                    assert!(on_outline || in_glyph, "unexpected pixel ({y},{x}) changed");
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn identical_boxes_shift_second_glyph_down() {
        let frame = blank();
        let mut regions = BTreeMap::new();
        regions.insert("<R1>".to_string(), region([4, 4, 20, 20]));
        regions.insert("<R2>".to_string(), region([4, 4, 20, 20]));
        let out = overlay_regions(&frame, &regions);
        // glyph "2" top row spans the shifted anchor row 5 + GLYPH_H
        let shifted_row = 5 + GLYPH_H;
        let two = region_color(2);
        let found = (5..5 + GLYPH_W).any(|x| (0..3).all(|k| out[[shifted_row, x, k]] == two[k]));
        assert!(found, "second region glyph should be one glyph height lower");
    }
}
