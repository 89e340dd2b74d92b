//! Dataset files and image-folder import.
//!
//! Binary layout (little-endian): magic `OWRD`, `u16` version, `u32` sample
//! count, `u16` height, width, channels; then per sample `u16` class,
//! `u16` domain, `u32` instance, and `height * width * channels` `f32`
//! pixels.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::{Path, PathBuf};

use super::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OWRD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 2 * 3;

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let shape = ds.shape();
    let dims = [shape.height, shape.width, shape.channels];
    if dims.iter().any(|&d| d > u16::MAX as usize) || ds.len() > u32::MAX as usize {
        return Err(Error::Config(format!("dataset extents exceed the file format: {shape:?}")));
    }
    let record = 8 + 4 * shape.len();
    let mut out = Vec::with_capacity(HEADER_LEN + record * ds.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for s in ds.samples() {
        if s.class_id > u16::MAX as u32 || s.domain_id > u16::MAX as u32 {
            return Err(Error::Config(format!(
                "class {} / domain {} exceed u16 range",
                s.class_id, s.domain_id
            )));
        }
        out.extend_from_slice(&(s.class_id as u16).to_le_bytes());
        out.extend_from_slice(&(s.domain_id as u16).to_le_bytes());
        out.extend_from_slice(&s.instance_id.to_le_bytes());
        for p in &s.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], name: &str) -> Result<Dataset> {
    let err = |offset: usize, message: String| Error::Parse {
        source_name: name.to_string(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "bad magic, expected OWRD".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let shape = ImageShape::new(u16_at(10) as usize, u16_at(12) as usize, u16_at(14) as usize);
    if shape.is_empty() && count > 0 {
        return Err(err(10, format!("zero image extent {shape:?}")));
    }
    let record = 8 + 4 * shape.len();
    let expected = count
        .checked_mul(record)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| err(6, "extent overflow".into()))?;
    if bytes.len() < expected {
        let complete = (bytes.len() - HEADER_LEN) / record;
        return Err(err(
            HEADER_LEN + complete * record,
            format!("truncated: header promises {count} samples, file holds {complete}"),
        ));
    }
    if bytes.len() > expected {
        return Err(err(expected, "trailing bytes after last sample".into()));
    }

    let mut ds = Dataset::new(shape);
    for i in 0..count {
        let o = HEADER_LEN + i * record;
        let pixels = bytes[o + 8..o + record]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let sample = Sample {
            pixels,
            class_id: u16_at(o) as u32,
            domain_id: u16_at(o + 2) as u32,
            instance_id: u32::from_le_bytes(bytes[o + 4..o + 8].try_into().unwrap()),
        };
        ds.push(sample).map_err(|e| err(o, e.to_string()))?;
    }
    Ok(ds)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

fn decode_png(path: &Path) -> Result<(ImageShape, Vec<f32>)> {
    let perr = |message: String| Error::Parse {
        source_name: path.display().to_string(),
        offset: 0,
        message,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| perr(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| perr("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| perr(e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let src_ch = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(perr("unexpanded palette image".into())),
    };
    let mut px = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        let p = &buf[i * src_ch..(i + 1) * src_ch];
        let rgb = if src_ch < 3 { [p[0]; 3] } else { [p[0], p[1], p[2]] };
        px.extend(rgb.iter().map(|&v| v as f32 / 255.0));
    }
    Ok((ImageShape::new(h, w, 3), px))
}

/// Imports `<root>/<class_name>/*.png`. Class ids follow the sorted class
/// directory names; instance ids follow the sorted file names within a
/// class. Images are converted to RGB and must share one size.
pub fn import_image_folder(root: &Path) -> Result<(Dataset, Vec<String>)> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Config(format!("{}: no class directories found", root.display())));
    }
    let mut names = Vec::new();
    let mut ds: Option<Dataset> = None;
    for (class, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for (instance, file) in files.iter().enumerate() {
            let (shape, pixels) = decode_png(file)?;
            let target = ds.get_or_insert_with(|| Dataset::new(shape));
            if target.shape() != shape {
                return Err(Error::Parse {
                    source_name: file.display().to_string(),
                    offset: 0,
                    message: format!("image is {shape:?}, expected {:?}", target.shape()),
                });
            }
            target.push(Sample {
                pixels,
                class_id: class as u32,
                domain_id: 0,
                instance_id: instance as u32,
            })?;
        }
    }
    let ds = ds.ok_or_else(|| Error::Config(format!("{}: no PNG files found", root.display())))?;
    Ok((ds, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let shape = ImageShape::new(2, 3, 1);
        let samples = (0..3)
            .map(|i| Sample {
                pixels: (0..6).map(|j| ((i * 6 + j) as f32 / 17.0).min(1.0)).collect(),
                class_id: i,
                domain_id: 2,
                instance_id: 100 + i,
            })
            .collect();
        Dataset::from_samples(shape, samples).unwrap()
    }

    #[test]
    fn round_trip_and_empty() {
        let ds = tiny();
        assert_eq!(decode(&encode(&ds).unwrap(), "m").unwrap(), ds);
        let empty = Dataset::new(ImageShape::default());
        let bytes = encode(&empty).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(decode(&bytes, "m").unwrap(), empty);
    }

    #[test]
    fn truncation_is_a_parse_error_with_offset() {
        let bytes = encode(&tiny()).unwrap();
        for cut in [0, 5, HEADER_LEN, HEADER_LEN + 9, bytes.len() - 1] {
            match decode(&bytes[..cut], "m") {
                Err(Error::Parse { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn oversized_count_is_rejected_without_allocation() {
        let mut bytes = encode(&tiny()).unwrap();
        bytes[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bytes, "m"), Err(Error::Parse { .. })));
    }

    #[test]
    fn out_of_range_pixel_is_rejected() {
        let mut bytes = encode(&tiny()).unwrap();
        let o = HEADER_LEN + 8;
        bytes[o..o + 4].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode(&bytes, "m"), Err(Error::Parse { .. })));
    }

    fn write_png(path: &Path, w: u32, h: u32, rgb: &[u8]) {
        let file = fs::File::create(path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(rgb).unwrap();
    }

    #[test]
    fn imports_class_folders() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("mug", 255u8), ("apple", 0u8)] {
            let d = dir.path().join(name);
            fs::create_dir(&d).unwrap();
            write_png(&d.join("a.png"), 2, 2, &[v; 12]);
            write_png(&d.join("b.png"), 2, 2, &[v / 2; 12]);
        }
        fs::write(dir.path().join("mug").join("notes.txt"), "x").unwrap();
        let (ds, names) = import_image_folder(dir.path()).unwrap();
        assert_eq!(names, vec!["apple", "mug"]);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.shape(), ImageShape::new(2, 2, 3));
        let mug: Vec<&Sample> = ds.samples().iter().filter(|s| s.class_id == 1).collect();
        assert_eq!(mug[0].pixels[0], 1.0);
        assert_eq!(mug[1].instance_id, 1);
    }

    #[test]
    fn unreadable_png_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("cls");
        fs::create_dir(&d).unwrap();
        fs::write(d.join("broken.png"), b"not a png").unwrap();
        let msg = import_image_folder(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("broken.png"), "{msg}");
    }
}
