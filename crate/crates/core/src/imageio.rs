//! Reading and writing single-channel TIFF (8/16-bit, multi-page) and plain
//! PGM (`P2`) images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::ColorType;

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap, RawImage};

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// True for file names this module can decode.
pub fn is_image_file(path: &Path) -> bool {
    matches!(extension(path).as_str(), "tif" | "tiff" | "pgm")
}

/// Reads every plane of an image file as 32-bit unsigned values.
///
/// TIFF pages become planes (a multi-page file is a 3D stack); a PGM file is
/// always a single plane.
fn read_planes_u32(path: &Path) -> Result<(Vec<Grid<u32>>, u8)> {
    match extension(path).as_str() {
        "pgm" => {
            let (grid, maxval) = read_pgm(path)?;
            let bits = if maxval <= 255 { 8 } else { 16 };
            Ok((vec![grid], bits))
        }
        "tif" | "tiff" => read_tiff_planes(path),
        other => Err(Error::decode(path, format!("unsupported image extension '{other}'"))),
    }
}

fn read_tiff_planes(path: &Path) -> Result<(Vec<Grid<u32>>, u8)> {
    let file = File::open(path).map_err(|e| Error::decode(path, e))?;
    let mut decoder = Decoder::new(BufReader::new(file))
        .map_err(|e| Error::decode(path, e))?
        .with_limits(Limits::unlimited());
    let mut planes = Vec::new();
    let mut max_bits = 0u8;
    loop {
        let (w, h) = decoder.dimensions().map_err(|e| Error::decode(path, e))?;
        let bits = match decoder.colortype().map_err(|e| Error::decode(path, e))? {
            ColorType::Gray(b) => b,
            other => {
                return Err(Error::decode(path, format!("expected single-channel image, got {other:?}")))
            }
        };
        max_bits = max_bits.max(bits);
        let values: Vec<u32> = match decoder.read_image().map_err(|e| Error::decode(path, e))? {
            DecodingResult::U8(v) => v.into_iter().map(u32::from).collect(),
            DecodingResult::U16(v) => v.into_iter().map(u32::from).collect(),
            DecodingResult::U32(v) => v,
            _ => return Err(Error::decode(path, "unsupported sample format")),
        };
        planes.push(Grid::from_vec(h as usize, w as usize, values).map_err(|e| Error::decode(path, e))?);
        if !decoder.more_images() {
            break;
        }
        decoder.next_image().map_err(|e| Error::decode(path, e))?;
    }
    Ok((planes, max_bits))
}

/// Reads all planes of a raw intensity image (8 or 16 bits).
pub fn read_raw_stack(path: &Path) -> Result<Vec<RawImage>> {
    let (planes, bits) = read_planes_u32(path)?;
    if bits > 16 {
        return Err(Error::decode(path, format!("{bits}-bit intensities are not supported")));
    }
    Ok(planes.into_iter().map(|p| p.map(|&v| v as u16)).collect())
}

/// Reads the first plane of a raw intensity image.
pub fn read_raw(path: &Path) -> Result<RawImage> {
    read_raw_stack(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::decode(path, "no image planes"))
}

/// Reads a 2D instance label mask (first plane).
pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    let (planes, _) = read_planes_u32(path)?;
    planes.into_iter().next().ok_or_else(|| Error::decode(path, "no image planes"))
}

/// Reads all planes of a label mask.
pub fn read_label_stack(path: &Path) -> Result<Vec<LabelMap>> {
    Ok(read_planes_u32(path)?.0)
}

/// Writes 16-bit planes as a (possibly multi-page) uncompressed TIFF.
pub fn write_tiff16(path: &Path, planes: &[Grid<u16>]) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::decode(path, e))?;
    for plane in planes {
        encoder
            .write_image::<colortype::Gray16>(plane.width() as u32, plane.height() as u32, plane.as_slice())
            .map_err(|e| Error::decode(path, e))?;
    }
    Ok(())
}

/// Writes 8-bit planes as a (possibly multi-page) uncompressed TIFF.
pub fn write_tiff8(path: &Path, planes: &[Grid<u8>]) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| Error::decode(path, e))?;
    for plane in planes {
        encoder
            .write_image::<colortype::Gray8>(plane.width() as u32, plane.height() as u32, plane.as_slice())
            .map_err(|e| Error::decode(path, e))?;
    }
    Ok(())
}

/// Reads a plain-text PGM (`P2`). Returns the grid and the declared maxval.
pub fn read_pgm(path: &Path) -> Result<(Grid<u32>, u32)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::decode(path, e))?;
    parse_pgm(&text).map_err(|reason| Error::decode(path, reason))
}

fn parse_pgm(text: &str) -> std::result::Result<(Grid<u32>, u32), String> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err("missing P2 magic".into());
    }
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        *slot = tokens
            .next()
            .ok_or_else(|| format!("missing {name}"))?
            .parse()
            .map_err(|e| format!("bad {name}: {e}"))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    let mut data = Vec::with_capacity(width * height);
    for tok in tokens.by_ref().take(width * height) {
        let v: u32 = tok.parse().map_err(|e| format!("bad sample '{tok}': {e}"))?;
        if v as usize > maxval {
            return Err(format!("sample {v} exceeds maxval {maxval}"));
        }
        data.push(v);
    }
    if data.len() != width * height {
        return Err(format!("expected {} samples, found {}", width * height, data.len()));
    }
    let grid = Grid::from_vec(height, width, data).map_err(|e| e.to_string())?;
    Ok((grid, maxval as u32))
}

/// Writes a plain-text PGM (`P2`).
pub fn write_pgm(path: &Path, grid: &Grid<u16>, maxval: u16) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "P2\n{} {}\n{}", grid.width(), grid.height(), maxval)?;
    for r in 0..grid.height() {
        let row: Vec<String> = (0..grid.width()).map(|c| grid.get(r, c).to_string()).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiff16_multi_page_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.tif");
        let planes: Vec<Grid<u16>> =
            (0..3).map(|z| Grid::from_fn(4, 5, |r, c| (z * 1000 + r * 10 + c) as u16)).collect();
        write_tiff16(&path, &planes).unwrap();
        assert_eq!(read_raw_stack(&path).unwrap(), planes);
    }

    #[test]
    fn tiff8_reads_as_raw() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tif");
        let plane = Grid::from_fn(3, 3, |r, c| (r * 3 + c) as u8 * 20);
        write_tiff8(&path, std::slice::from_ref(&plane)).unwrap();
        let raw = read_raw(&path).unwrap();
        assert_eq!(raw, plane.map(|&v| v as u16));
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let g = Grid::from_fn(2, 3, |r, c| (r * 300 + c) as u16);
        write_pgm(&path, &g, 1000).unwrap();
        assert_eq!(read_raw(&path).unwrap(), g);

        let (g2, maxval) = parse_pgm("P2 # comment\n2 1\n# another\n9\n3 9\n").unwrap();
        assert_eq!(maxval, 9);
        assert_eq!(g2.as_slice(), &[3, 9]);
    }

    #[test]
    fn pgm_rejects_short_data() {
        assert!(parse_pgm("P2 2 2 255 1 2 3").is_err());
        assert!(parse_pgm("P5 1 1 255 0").is_err());
    }

    #[test]
    fn undecodable_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.tif");
        std::fs::write(&path, b"not a tiff").unwrap();
        let err = read_raw(&path).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
        assert!(err.to_string().contains("broken.tif"));
    }
}
