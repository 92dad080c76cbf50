//! Built-in 5×7 bitmap font for `[a-z0-9]`.

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

pub const CHARSET: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

#[rustfmt::skip]
const GLYPHS: [[&str; GLYPH_H]; 36] = [
    // a
    [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
    // b
    ["#....", "#....", "####.", "#...#", "#...#", "#...#", "####."],
    // c
    [".....", ".....", ".####", "#....", "#....", "#....", ".####"],
    // d
    ["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####"],
    // e
    [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."],
    // f
    ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."],
    // g
    [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."],
    // h
    ["#....", "#....", "#....", "#.##.", "##..#", "#...#", "#...#"],
    // i
    ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."],
    // j
    ["...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."],
    // k
    ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."],
    // l
    ["##...", ".#...", ".#...", ".#...", ".#...", ".#...", "..###"],
    // m
    [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"],
    // n
    [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    // o
    [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."],
    // p
    [".....", "####.", "#...#", "#...#", "####.", "#....", "#...."],
    // q
    [".....", ".####", "#...#", "#...#", ".####", "....#", "....#"],
    // r
    [".....", ".....", "#.###", "##...", "#....", "#....", "#...."],
    // s
    [".....", ".....", ".####", "#....", ".###.", "....#", "####."],
    // t
    [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."],
    // u
    [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"],
    // v
    [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    // w
    [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."],
    // x
    [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
    // y
    [".....", "#...#", "#...#", "#...#", ".####", "....#", ".###."],
    // z
    [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"],
    // 0
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    // 1
    ["..#..", ".##..", "#.#..", "..#..", "..#..", "..#..", "#####"],
    // 2
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    // 3
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    // 4
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    // 5
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    // 6
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    // 7
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    // 8
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    // 9
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

/// Index of `c` in [`CHARSET`].
pub fn char_index(c: char) -> Option<usize> {
    CHARSET.find(c)
}

/// Whether the font pixel at (row, col) of `c`'s glyph is set.
pub fn glyph_pixel(c: char, row: usize, col: usize) -> bool {
    let g = &GLYPHS[char_index(c).expect("character in charset")];
    g[row].as_bytes()[col] == b'#'
}
