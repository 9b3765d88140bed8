//! File formats: 8-bit grayscale PNG grids and float grids with a 16-byte header.
//!
//! Float grid layout (little endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic (b"TOA1" for ToA maps, b"PLD1" for pathloss maps)
//! 4       4     N as u32
//! 8       8     cell_m as f64
//! 16      4*N*N f32 values, row-major (y outer, x inner)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const TOA_MAGIC: [u8; 4] = *b"TOA1";
pub const PATHLOSS_MAGIC: [u8; 4] = *b"PLD1";
pub const FLOAT_GRID_HEADER_LEN: usize = 16;

pub fn write_gray_png(path: &Path, grid: &Grid<u8>) -> Result<()> {
    let n = grid.size() as u32;
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, n, n);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(grid.as_slice())?;
    writer.finish()?;
    Ok(())
}

pub fn read_gray_png(path: &Path) -> Result<Grid<u8>> {
    let file = File::open(path).map_err(|e| missing_or_io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info()?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!(
                "expected 8-bit grayscale, got {:?}/{:?}",
                info.color_type, info.bit_depth
            ),
        });
    }
    if info.width != info.height {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("grid must be square, got {}x{}", info.width, info.height),
        });
    }
    let n = info.width as usize;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(n * n)];
    let frame = reader.next_frame(&mut buf)?;
    buf.truncate(frame.buffer_size());
    Grid::from_vec(n, buf)
}

pub fn encode_float_grid(magic: [u8; 4], grid: &Grid<f64>, cell_m: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(FLOAT_GRID_HEADER_LEN + 4 * grid.as_slice().len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(grid.size() as u32).to_le_bytes());
    out.extend_from_slice(&cell_m.to_le_bytes());
    for &v in grid.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_float_grid(magic: [u8; 4], bytes: &[u8], path: &Path) -> Result<(Grid<f64>, f64)> {
    let bad = |reason: String| Error::Format {
        path: path.to_owned(),
        reason,
    };
    if bytes.len() < FLOAT_GRID_HEADER_LEN {
        return Err(bad(format!("file is only {} bytes", bytes.len())));
    }
    if bytes[..4] != magic {
        return Err(bad(format!(
            "magic {:?}, expected {:?}",
            &bytes[..4],
            std::str::from_utf8(&magic).unwrap_or("?")
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cell_m = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[FLOAT_GRID_HEADER_LEN..];
    if body.len() != 4 * n * n {
        return Err(bad(format!(
            "expected {} payload bytes for N={n}, found {}",
            4 * n * n,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((Grid::from_vec(n, values)?, cell_m))
}

pub fn write_float_grid(path: &Path, magic: [u8; 4], grid: &Grid<f64>, cell_m: f64) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_float_grid(magic, grid, cell_m))?;
    f.flush()?;
    Ok(())
}

pub fn read_float_grid(path: &Path, magic: [u8; 4]) -> Result<(Grid<f64>, f64)> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| missing_or_io(path, e))?
        .read_to_end(&mut bytes)?;
    decode_float_grid(magic, &bytes, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| missing_or_io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub(crate) fn missing_or_io(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingFile(path.to_owned())
    } else {
        Error::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let g = Grid::from_fn(5, |p| if (p.x + p.y) % 2 == 0 { 255 } else { 0 });
        write_gray_png(&path, &g).unwrap();
        assert_eq!(read_gray_png(&path).unwrap(), g);
    }

    #[test]
    fn float_grid_header_layout() {
        let g = Grid::from_fn(3, |p| (p.x * 10 + p.y) as f64);
        let bytes = encode_float_grid(TOA_MAGIC, &g, 2.5);
        assert_eq!(bytes.len(), 16 + 36);
        assert_eq!(&bytes[..4], b"TOA1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2.5);
        // second value in row-major order is (x=2, y=1)
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 21.0);
        let (back, cell) = decode_float_grid(TOA_MAGIC, &bytes, Path::new("mem")).unwrap();
        assert_eq!(back, g);
        assert_eq!(cell, 2.5);
    }

    #[test]
    fn float_grid_rejects_wrong_magic_and_length() {
        let g = Grid::filled(2, 1.0);
        let bytes = encode_float_grid(PATHLOSS_MAGIC, &g, 1.0);
        assert!(decode_float_grid(TOA_MAGIC, &bytes, Path::new("x")).is_err());
        assert!(
            decode_float_grid(PATHLOSS_MAGIC, &bytes[..bytes.len() - 1], Path::new("x")).is_err()
        );
    }

    #[test]
    fn missing_file_is_reported_by_path() {
        let err = read_gray_png(Path::new("/nonexistent/map.png")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
