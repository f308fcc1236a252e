use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Shape::Square => "squares",
            Shape::Circle => "circles",
            Shape::Triangle => "triangles",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.word() == w)
    }

    pub fn from_plural(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.plural() == w)
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Blue, Color::Green, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.word() == w)
    }
}

/// Content of one image patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Symbol {
    #[default]
    Empty,
    Object(Shape, Color),
}

impl Symbol {
    /// Number of distinct symbols: empty plus every (shape, color) pair.
    pub const COUNT: usize = 1 + 3 * 4;

    /// Serialized code: 0 for empty, `1 + 4·shape + color` otherwise.
    pub fn code(self) -> u8 {
        match self {
            Symbol::Empty => 0,
            Symbol::Object(s, c) => 1 + 4 * s as u8 + c as u8,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, CorpusError> {
        match code {
            0 => Ok(Symbol::Empty),
            1..=12 => {
                let k = code - 1;
                Ok(Symbol::Object(Shape::ALL[(k / 4) as usize], Color::ALL[(k % 4) as usize]))
            }
            _ => Err(CorpusError::UnknownSymbol(code)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub patch: usize,
}

/// Symbolic scene: objects placed on distinct patches of a `P×P` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    pub fn new(mut objects: Vec<SceneObject>, grid: usize) -> Result<Self, CorpusError> {
        let cells = grid * grid;
        objects.sort_by_key(|o| o.patch);
        for w in objects.windows(2) {
            if w[0].patch == w[1].patch {
                return Err(CorpusError::PlacementCollision(w[0].patch));
            }
        }
        if let Some(o) = objects.iter().find(|o| o.patch >= cells) {
            return Err(CorpusError::PlacementOutOfGrid { patch: o.patch, cells });
        }
        Ok(Self { objects })
    }

    /// Recovers the scene encoded by an image.
    pub fn from_image(img: &ToyImage) -> Self {
        let objects = img
            .cells()
            .iter()
            .enumerate()
            .filter_map(|(patch, s)| match *s {
                Symbol::Object(shape, color) => Some(SceneObject { shape, color, patch }),
                Symbol::Empty => None,
            })
            .collect();
        Self { objects }
    }

    /// FNV-1a over the canonical object list. Stable across platforms.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for o in &self.objects {
            for b in [o.patch as u8, o.shape as u8, o.color as u8] {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn count_color(&self, c: Color) -> usize {
        self.objects.iter().filter(|o| o.color == c).count()
    }

    pub fn count_shape(&self, s: Shape) -> usize {
        self.objects.iter().filter(|o| o.shape == s).count()
    }
}

/// Rendered `P×P` patch grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<u8>", try_from = "Vec<u8>")]
pub struct ToyImage {
    grid: usize,
    cells: Vec<Symbol>,
}

impl ToyImage {
    pub fn empty(grid: usize) -> Self {
        Self { grid, cells: vec![Symbol::Empty; grid * grid] }
    }

    pub fn from_cells(cells: Vec<Symbol>) -> Result<Self, CorpusError> {
        let grid = (cells.len() as f64).sqrt().round() as usize;
        if grid == 0 || grid * grid != cells.len() {
            return Err(CorpusError::BadGrid(cells.len()));
        }
        Ok(Self { grid, cells })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn cells(&self) -> &[Symbol] {
        &self.cells
    }

    pub fn set(&mut self, patch: usize, s: Symbol) {
        self.cells[patch] = s;
    }

    pub fn codes(&self) -> Vec<u8> {
        self.cells.iter().map(|s| s.code()).collect()
    }
}

impl From<ToyImage> for Vec<u8> {
    fn from(img: ToyImage) -> Self {
        img.codes()
    }
}

impl TryFrom<Vec<u8>> for ToyImage {
    type Error = CorpusError;

    fn try_from(codes: Vec<u8>) -> Result<Self, Self::Error> {
        let cells = codes.into_iter().map(Symbol::from_code).collect::<Result<Vec<_>, _>>()?;
        ToyImage::from_cells(cells)
    }
}

impl fmt::Display for ToyImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.grid {
            let row: Vec<String> =
                self.cells[r * self.grid..(r + 1) * self.grid].iter().map(|s| format!("{:2}", s.code())).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

pub fn render_scene(spec: &SceneSpec, grid: usize) -> Result<ToyImage, CorpusError> {
    let mut img = ToyImage::empty(grid);
    for o in &spec.objects {
        if o.patch >= grid * grid {
            return Err(CorpusError::PlacementOutOfGrid { patch: o.patch, cells: grid * grid });
        }
        if img.cells[o.patch] != Symbol::Empty {
            return Err(CorpusError::PlacementCollision(o.patch));
        }
        img.cells[o.patch] = Symbol::Object(o.shape, o.color);
    }
    Ok(img)
}

/// Canonical caption, objects in patch order: `"a red square , a blue circle ."`.
pub fn caption_of(spec: &SceneSpec) -> String {
    if spec.objects.is_empty() {
        return "an empty scene .".to_string();
    }
    let mut objs = spec.objects.clone();
    objs.sort_by_key(|o| o.patch);
    let parts: Vec<String> = objs.iter().map(|o| format!("a {} {}", o.color.word(), o.shape.word())).collect();
    format!("{} .", parts.join(" , "))
}

/// Parses a canonical caption back to its objects (without placements).
pub fn parse_caption(text: &str) -> Result<Vec<(Shape, Color)>, CorpusError> {
    let text = text.trim();
    if text == "an empty scene ." {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix(" .").ok_or_else(|| CorpusError::BadCaption(text.to_string()))?;
    body.split(" , ")
        .map(|part| {
            let w: Vec<&str> = part.split_whitespace().collect();
            match w.as_slice() {
                ["a", c, s] => Color::from_word(c)
                    .zip(Shape::from_word(s))
                    .map(|(c, s)| (s, c))
                    .ok_or_else(|| CorpusError::BadCaption(text.to_string())),
                _ => Err(CorpusError::BadCaption(text.to_string())),
            }
        })
        .collect()
}
