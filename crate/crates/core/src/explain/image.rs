use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::nn::Shape;
use crate::{Error, Result};

const GAP: usize = 2;

/// 8-bit image assembled from equally sized `[0, 1]` tiles placed left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl GridImage {
    pub fn from_tiles(tiles: &[&[f32]], shape: Shape) -> Result<Self> {
        if shape.channels != 1 && shape.channels != 3 {
            return Err(Error::Unsupported(format!(
                "image grids need 1 or 3 channels, got {}",
                shape.channels
            )));
        }
        for t in tiles {
            if t.len() != shape.len() {
                return Err(Error::shape("grid tile", shape, t.len()));
            }
        }
        let (h, w, c) = (shape.height, shape.width, shape.channels);
        let width = tiles.len() * w + tiles.len().saturating_sub(1) * GAP;
        let mut data = vec![255u8; width * h * c];
        for (t, tile) in tiles.iter().enumerate() {
            let x0 = t * (w + GAP);
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let v = tile[(ch * h + y) * w + x].clamp(0.0, 1.0);
                        data[(y * width + x0 + x) * c + ch] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
        Ok(Self {
            width,
            height: h,
            channels: c,
            data,
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let mut file = BufWriter::new(File::create(path)?);
        file.write_all(&self.encode_png()?)?;
        file.flush()?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        let mut encoder = png::Encoder::new(&mut bytes, self.width as u32, self.height as u32);
        encoder.set_color(if self.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(std::io::Error::other)?;
        writer
            .write_image_data(&self.data)
            .map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)?;
        Ok(bytes)
    }
}

pub fn write_grid_png(path: &Path, tiles: &[&[f32]], shape: Shape) -> Result<()> {
    GridImage::from_tiles(tiles, shape)?.write_png(path)
}
