//! Costmap snapshot images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::costmap::Costmap;
use crate::error::{Error, Result};
use crate::geom::Configuration;
use crate::heightmap::CellClass;

pub type Rgba = [u8; 4];

pub const REAL: Rgba = [40, 170, 60, 255];
pub const FATAL: Rgba = [230, 30, 200, 255];
pub const VIRTUAL: Rgba = [250, 150, 30, 255];
pub const UNKNOWN: Rgba = [0, 0, 0, 0];
pub const PATH: Rgba = [255, 235, 0, 255];
pub const FOOTPRINT: Rgba = [30, 60, 230, 255];
pub const GOAL: Rgba = [140, 140, 140, 255];

/// Row-major RGBA raster, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgba>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgba) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgba {
        self.pixels[y * self.width + x]
    }

    fn put(&mut self, x: i64, y: i64, c: Rgba) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgba) {
        let n = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let x = a.0 + (b.0 - a.0) * t;
            let y = a.1 + (b.1 - a.1) * t;
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    pub fn count(&self, c: Rgba) -> usize {
        self.pixels.iter().filter(|&&p| p == c).count()
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(self.pixels.as_flattened())?;
        w.finish()?;
        Ok(())
    }
}

/// What to draw over the costmap.
#[derive(Debug, Clone, Default)]
pub struct Overlay<'a> {
    pub path: &'a [Configuration],
    pub robot: Option<Configuration>,
    /// Vehicle length and width.
    pub footprint: [f64; 2],
    pub goal: Option<([f64; 2], f64)>,
}

pub fn cell_color(cm: &Costmap, col: usize, row: usize) -> Rgba {
    let c = cm.get(col, row);
    match c.class {
        CellClass::Unknown => UNKNOWN,
        CellClass::Virtual => VIRTUAL,
        CellClass::Real if c.is_fatal() => FATAL,
        CellClass::Real => REAL,
    }
}

/// Renders the costmap at `scale` pixels per cell with +y pointing up.
pub fn render(cm: &Costmap, overlay: &Overlay<'_>, scale: usize) -> Image {
    let g = cm.geometry;
    let scale = scale.max(1);
    let mut img = Image::new(g.cols * scale, g.rows * scale, UNKNOWN);
    for row in 0..g.rows {
        let color_row: Vec<Rgba> = (0..g.cols).map(|col| cell_color(cm, col, row)).collect();
        for dy in 0..scale {
            let y = (g.rows - 1 - row) * scale + dy;
            for (col, &c) in color_row.iter().enumerate() {
                for dx in 0..scale {
                    img.pixels[y * img.width + col * scale + dx] = c;
                }
            }
        }
    }
    let height = img.height as f64;
    let px = |x: f64, y: f64| {
        (
            (x - g.origin[0]) / g.resolution * scale as f64,
            height - (y - g.origin[1]) / g.resolution * scale as f64,
        )
    };
    if let Some((centre, radius)) = overlay.goal {
        let (cx, cy) = px(centre[0], centre[1]);
        let r = radius / g.resolution * scale as f64;
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    img.put(cx.round() as i64 + dx, cy.round() as i64 + dy, GOAL);
                }
            }
        }
    }
    for w in overlay.path.windows(2) {
        img.line(px(w[0].x, w[0].y), px(w[1].x, w[1].y), PATH);
    }
    if let Some(r) = overlay.robot {
        let [l, wd] = overlay.footprint;
        let corners = [(0.5 * l, 0.5 * wd), (-0.5 * l, 0.5 * wd), (-0.5 * l, -0.5 * wd), (0.5 * l, -0.5 * wd)];
        let pts: Vec<(f64, f64)> = corners
            .iter()
            .map(|&(u, v)| {
                let (x, y) = r.to_world(u, v);
                px(x, y)
            })
            .collect();
        for i in 0..4 {
            img.line(pts[i], pts[(i + 1) % 4], FOOTPRINT);
        }
        // Heading tick from the centre to the front edge.
        let (fx, fy) = r.to_world(0.5 * l, 0.0);
        img.line(px(r.x, r.y), px(fx, fy), FOOTPRINT);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::{CostmapCell, Traversability};
    use crate::heightmap::GridGeometry;

    fn flat(cols: usize, rows: usize) -> Costmap {
        let geometry = GridGeometry {
            resolution: 0.1,
            origin: [0.0, 0.0],
            cols,
            rows,
        };
        Costmap {
            geometry,
            cells: vec![
                CostmapCell {
                    height: 0.0,
                    class: CellClass::Real,
                    traversability: Traversability::NonFatal,
                };
                geometry.len()
            ],
            reference_height: 0.0,
        }
    }

    #[test]
    fn palette_and_orientation() {
        let mut cm = flat(4, 3);
        let i = cm.geometry.index(0, 0);
        cm.cells[i].traversability = Traversability::Fatal;
        let j = cm.geometry.index(3, 2);
        cm.cells[j].class = CellClass::Virtual;
        let img = render(&cm, &Overlay::default(), 2);
        assert_eq!((img.width, img.height), (8, 6));
        // Row 0 is drawn at the bottom.
        assert_eq!(img.get(0, 5), FATAL);
        assert_eq!(img.get(7, 0), VIRTUAL);
        assert_eq!(img.get(3, 3), REAL);
    }

    #[test]
    fn overlays_are_drawn() {
        let cm = flat(40, 40);
        let path = [Configuration::new(0.5, 0.5, 0.0), Configuration::new(3.5, 3.5, 0.0)];
        let overlay = Overlay {
            path: &path,
            robot: Some(Configuration::new(2.0, 2.0, 0.3)),
            footprint: [1.0, 0.7],
            goal: Some(([3.5, 0.5], 0.3)),
        };
        let img = render(&cm, &overlay, 3);
        assert!(img.count(PATH) > 50);
        assert!(img.count(FOOTPRINT) > 50);
        assert!(img.count(GOAL) > 100);
    }

    #[test]
    fn png_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        render(&flat(5, 5), &Overlay::default(), 1).write_png(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
