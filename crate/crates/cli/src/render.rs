use oocchol::tile::TileIndex;
use oocchol::{Precision, PrecisionMap};

pub fn glyph(p: Precision) -> char {
    match p {
        Precision::Fp64 => '#',
        Precision::Fp32 => '+',
        Precision::Fp16 => '-',
        Precision::Fp8E4M3 => '.',
    }
}

fn color(p: Precision) -> [u8; 3] {
    match p {
        Precision::Fp64 => [0x1f, 0x3a, 0x93],
        Precision::Fp32 => [0x3d, 0x9a, 0x4a],
        Precision::Fp16 => [0xf2, 0xa9, 0x00],
        Precision::Fp8E4M3 => [0xd6, 0x28, 0x28],
    }
}

/// Lower-triangular glyph grid, one line per tile row.
pub fn ascii_map(map: &PrecisionMap) -> String {
    let mut out = String::new();
    for m in 0..map.nt() {
        out.extend((0..=m).map(|k| glyph(map.get(TileIndex::new(m, k)))));
        out.push('\n');
    }
    out
}

pub fn legend(map: &PrecisionMap) -> String {
    map.counts().into_iter().map(|(p, c)| format!("{} {p}: {c}", glyph(p))).collect::<Vec<_>>().join("  ")
}

/// Binary PPM with `cell x cell` pixels per tile; the upper triangle is white.
pub fn ppm_map(map: &PrecisionMap, cell: usize) -> Vec<u8> {
    let side = map.nt() * cell;
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            let (m, k) = (y / cell, x / cell);
            let rgb = if k <= m { color(map.get(TileIndex::new(m, k))) } else { [0xff; 3] };
            out.extend_from_slice(&rgb);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_map_is_a_triangle_of_one_glyph() {
        let s = ascii_map(&PrecisionMap::uniform(4, Precision::Fp64));
        assert_eq!(s, "#\n##\n###\n####\n");
        assert_eq!(s.chars().filter(|&c| c == '#').count(), 10);
    }

    #[test]
    fn single_fp8_tile_shows_one_distinct_glyph() {
        let mut m = PrecisionMap::uniform(4, Precision::Fp64);
        m.set(TileIndex::new(3, 0), Precision::Fp8E4M3);
        let s = ascii_map(&m);
        assert_eq!(s.chars().filter(|&c| c == '.').count(), 1);
        assert_eq!(s.lines().nth(3), Some(".###"));
    }

    #[test]
    fn ppm_layout() {
        let mut m = PrecisionMap::uniform(2, Precision::Fp64);
        m.set(TileIndex::new(1, 0), Precision::Fp16);
        let img = ppm_map(&m, 3);
        let header = b"P6\n6 6\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px = &img[header.len()..];
        assert_eq!(px.len(), 6 * 6 * 3);
        let at = |x: usize, y: usize| &px[(y * 6 + x) * 3..(y * 6 + x) * 3 + 3];
        assert_eq!(at(0, 0), color(Precision::Fp64));
        assert_eq!(at(5, 0), [0xff; 3]);
        assert_eq!(at(1, 4), color(Precision::Fp16));
    }
}
