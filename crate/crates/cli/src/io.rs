//! Image decoding/encoding and the CSV formats for vector fields, truth
//! files and correlation planes.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::Array2;
use sbcc_core::correlators::CorrelationPlane;
use sbcc_core::pivgrid::{PivVector, VectorField, VectorFlag};

use crate::error::{CliError, CliResult};

pub const FIELD_HEADER: [&str; 8] = ["x", "y", "u", "v", "flag", "peak", "secondary_ratio", "sigma_fit"];
pub const TRUTH_HEADER: [&str; 4] = ["x", "y", "u", "v"];

/// Decodes a grayscale PNG or TIFF into intensities in `[0, 1]`.
///
/// 8-bit data is divided by 255 and 16-bit data by 65535. Color images are
/// converted to 16-bit luma first.
pub fn read_image(path: &Path) -> CliResult<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| CliError::Input(format!("cannot read image {}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect::<Vec<f64>>(),
    };
    Array2::from_shape_vec((h, w), data).map_err(|e| CliError::Input(e.to_string()))
}

/// Writes intensities in `[0, 1]` as a 16-bit grayscale PNG.
pub fn write_png16(path: &Path, img: &Array2<f64>) -> CliResult<()> {
    let (h, w) = img.dim();
    let raw: Vec<u16> = img
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| CliError::Input("image buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_field<W: Write>(field: &VectorField, w: W) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FIELD_HEADER)?;
    for v in &field.vectors {
        out.write_record([
            num(v.x),
            num(v.y),
            num(v.u),
            num(v.v),
            v.flag.as_str().to_string(),
            num(v.peak_value),
            num(v.secondary_ratio),
            v.fitted_sigma.map(num).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

pub fn save_field(path: &Path, field: &VectorField) -> CliResult<()> {
    write_field(field, create(path)?)
}

pub fn write_truth<W: Write>(field: &VectorField, w: W) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRUTH_HEADER)?;
    for v in &field.vectors {
        out.write_record([num(v.x), num(v.y), num(v.u), num(v.v)])?;
    }
    out.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

pub fn save_truth(path: &Path, field: &VectorField) -> CliResult<()> {
    write_truth(field, create(path)?)
}

/// Plane values as `dx,dy,value` rows in row-major order.
pub fn save_plane(path: &Path, plane: &CorrelationPlane) -> CliResult<()> {
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(["dx", "dy", "value"])?;
    for ((iy, ix), v) in plane.data.indexed_iter() {
        let (dx, dy) = plane.displacement_of(ix, iy);
        out.write_record([dx.to_string(), dy.to_string(), num(*v)])?;
    }
    out.flush().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(())
}

fn parse_f64(s: &str, col: &str, row: usize) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Input(format!("row {row}: bad {col} value '{s}'")))
}

/// Reads a field CSV. Only `x,y,u,v` are required, so truth files load too.
///
/// Rows must be in row-major grid order; the row length is the number of
/// leading rows sharing the first `y`.
pub fn read_field<R: Read>(r: R) -> CliResult<VectorField> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (cx, cy, cu, cv) = match (col("x"), col("y"), col("u"), col("v")) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => return Err(CliError::Input("field CSV needs x,y,u,v columns".into())),
    };
    let (cflag, cpeak, cratio, csigma) = (col("flag"), col("peak"), col("secondary_ratio"), col("sigma_fit"));
    let mut vectors = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let mut v = PivVector::new(
            parse_f64(get(cx), "x", row)?,
            parse_f64(get(cy), "y", row)?,
            parse_f64(get(cu), "u", row)?,
            parse_f64(get(cv), "v", row)?,
        );
        if let Some(c) = cflag {
            v.flag = VectorFlag::parse(get(c)).map_err(|e| CliError::Input(format!("row {row}: {e}")))?;
        }
        if let Some(c) = cpeak {
            v.peak_value = parse_f64(get(c), "peak", row)?;
        }
        if let Some(c) = cratio {
            v.secondary_ratio = parse_f64(get(c), "secondary_ratio", row)?;
        }
        if let Some(c) = csigma {
            let s = get(c).trim();
            if !s.is_empty() {
                v.fitted_sigma = Some(parse_f64(s, "sigma_fit", row)?);
            }
        }
        vectors.push(v);
    }
    if vectors.is_empty() {
        return Err(CliError::Input("field CSV has no rows".into()));
    }
    let y0 = vectors[0].y;
    let nx = vectors.iter().take_while(|v| v.y == y0).count();
    if vectors.len() % nx != 0 {
        return Err(CliError::Input(format!(
            "{} rows do not form a grid with {nx} columns",
            vectors.len()
        )));
    }
    let ny = vectors.len() / nx;
    for (k, v) in vectors.iter().enumerate() {
        if v.y != vectors[(k / nx) * nx].y || v.x != vectors[k % nx].x {
            return Err(CliError::Input(format!("row {k} breaks the row-major grid layout")));
        }
    }
    Ok(VectorField::new(nx, ny, vectors)?)
}

pub fn load_field(path: &Path) -> CliResult<VectorField> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_field(f)
}
