//! Readers and writers for label masks (PGM), quad annotations and line
//! results (JSON).
//!
//! PGM output is byte-deterministic: `P5\n<w> <h>\n255\n` followed by the raw
//! row-major bytes, or the same header with `P2` and one text row per raster
//! row. JSON readers validate every field and report failures with a
//! JSON-pointer path such as `/facades/0/quad/2`.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geometry::{GeometryError, LabelMask, Line5Tuple, Orientation, Point2, Quad, MAX_FLOOR_ORDER};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} values, found {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("PGM maxval {0} exceeds 255")]
    MaxvalTooLarge(u64),
    #[error("malformed PGM payload: {0}")]
    MalformedPayload(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    fn schema(path: &str, message: impl Into<String>) -> Self {
        FormatError::SchemaViolation { path: if path.is_empty() { "/".into() } else { path.into() }, message: message.into() }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::IoFailure { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PgmFormat {
    /// Binary raster.
    #[default]
    P5,
    /// ASCII raster.
    P2,
}

pub fn encode_pgm(mask: &LabelMask, format: PgmFormat) -> Vec<u8> {
    let (w, h) = (mask.width(), mask.height());
    match format {
        PgmFormat::P5 => {
            let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(mask.labels());
            out
        }
        PgmFormat::P2 => {
            let mut out = format!("P2\n{w} {h}\n255\n");
            for row in mask.labels().chunks(w) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            out.into_bytes()
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u64, FormatError> {
        let tok = self.token().ok_or_else(|| FormatError::MalformedHeader(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| FormatError::MalformedHeader(format!("{what} is not a non-negative integer")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMask, FormatError> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let binary = match cur.token() {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(FormatError::MalformedHeader("magic must be P5 or P2".into())),
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(FormatError::MalformedHeader("dimensions must be positive".into()));
    }
    if maxval == 0 {
        return Err(FormatError::MalformedHeader("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(FormatError::MaxvalTooLarge(maxval));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| FormatError::MalformedHeader("dimensions overflow".into()))?;

    let labels = if binary {
        // exactly one whitespace byte separates maxval from the raster
        match bytes.get(cur.pos) {
            Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(FormatError::TruncatedPayload { expected, got: 0 }),
        }
        let payload = &bytes[cur.pos..];
        if payload.len() < expected {
            return Err(FormatError::TruncatedPayload { expected, got: payload.len() });
        }
        payload[..expected].to_vec()
    } else {
        let mut labels = Vec::with_capacity(expected);
        while labels.len() < expected {
            let Some(tok) = cur.token() else {
                return Err(FormatError::TruncatedPayload { expected, got: labels.len() });
            };
            let v = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| FormatError::MalformedPayload(format!("bad sample at index {}", labels.len())))?;
            if v > maxval {
                return Err(FormatError::MalformedPayload(format!("sample {v} exceeds maxval {maxval}")));
            }
            labels.push(v as u8);
        }
        labels
    };
    if let Some(v) = labels.iter().find(|&&v| u64::from(v) > maxval) {
        return Err(FormatError::MalformedPayload(format!("sample {v} exceeds maxval {maxval}")));
    }
    LabelMask::new(width as usize, height as usize, labels).map_err(|e| FormatError::MalformedHeader(e.to_string()))
}

pub fn read_label_mask(path: impl AsRef<Path>) -> Result<LabelMask, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_label_mask(mask: &LabelMask, path: impl AsRef<Path>, format: PgmFormat) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(mask, format)).map_err(|e| FormatError::io(path, e))
}

/// Quad annotations of one street-view image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub facades: Vec<Quad>,
}

impl AnnotationRecord {
    pub fn to_json(&self) -> Value {
        let facades: Vec<Value> = self
            .facades
            .iter()
            .map(|q| {
                let quad: Vec<Value> = q.corners().iter().map(|c| serde_json::json!([c.x, c.y])).collect();
                serde_json::json!({ "quad": quad, "orientation": q.orientation().as_str() })
            })
            .collect();
        serde_json::json!({
            "image": self.image_id,
            "width": self.width,
            "height": self.height,
            "facades": facades,
        })
    }
}

/// Lines recovered for one facade.
#[derive(Debug, Clone, PartialEq)]
pub struct FacadeLines {
    pub id: u32,
    pub orientation: Orientation,
    pub vp: Option<Point2>,
    pub lines: Vec<Line5Tuple>,
}

/// Contents of a lines JSON file.
#[derive(Debug, Clone, PartialEq)]
pub struct LinesDocument {
    pub image: String,
    pub facades: Vec<FacadeLines>,
}

#[derive(Serialize)]
struct LineOut {
    xs: f64,
    ys: f64,
    xe: f64,
    ye: f64,
    order: u8,
}

#[derive(Serialize)]
struct FacadeOut {
    id: u32,
    orientation: Orientation,
    vp: Option<[f64; 2]>,
    lines: Vec<LineOut>,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    image: &'a str,
    facades: Vec<FacadeOut>,
}

impl LinesDocument {
    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json_string(&self) -> String {
        let doc = DocumentOut {
            image: &self.image,
            facades: self
                .facades
                .iter()
                .map(|f| FacadeOut {
                    id: f.id,
                    orientation: f.orientation,
                    vp: f.vp.map(|p| [p.x, p.y]),
                    lines: f
                        .lines
                        .iter()
                        .map(|l| LineOut { xs: l.xs(), ys: l.ys(), xe: l.xe(), ye: l.ye(), order: l.order() })
                        .collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("lines document serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, FormatError> {
        let v: Value = serde_json::from_str(text).map_err(|e| FormatError::schema("", format!("invalid JSON: {e}")))?;
        parse_lines_document(&v)
    }
}

pub fn write_lines(doc: &LinesDocument, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, doc.to_json_string()).map_err(|e| FormatError::io(path, e))
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<LinesDocument, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    LinesDocument::from_json_str(&text)
}

/// Accepts either a single annotation object or an array of them.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, FormatError> {
    let v: Value = serde_json::from_str(text).map_err(|e| FormatError::schema("", format!("invalid JSON: {e}")))?;
    match &v {
        Value::Array(items) => items.iter().enumerate().map(|(i, item)| parse_annotation(item, &format!("/{i}"))).collect(),
        _ => Ok(vec![parse_annotation(&v, "")?]),
    }
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_annotations(&text)
}

pub fn write_annotations(records: &[AnnotationRecord], path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let v = Value::Array(records.iter().map(AnnotationRecord::to_json).collect());
    let mut s = serde_json::to_string_pretty(&v).expect("annotations serialize");
    s.push('\n');
    fs::write(path, s).map_err(|e| FormatError::io(path, e))
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, FormatError> {
    v.as_object().ok_or_else(|| FormatError::schema(path, "expected an object"))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, FormatError> {
    obj.get(key).ok_or_else(|| FormatError::schema(&format!("{path}/{key}"), "missing field"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, FormatError> {
    v.as_array().ok_or_else(|| FormatError::schema(path, "expected an array"))
}

fn real(v: &Value, path: &str) -> Result<f64, FormatError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| FormatError::schema(path, "expected a finite number"))
}

fn integer(v: &Value, path: &str) -> Result<u64, FormatError> {
    v.as_u64().ok_or_else(|| FormatError::schema(path, "expected a non-negative integer"))
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str, FormatError> {
    v.as_str().ok_or_else(|| FormatError::schema(path, "expected a string"))
}

fn point(v: &Value, path: &str) -> Result<Point2, FormatError> {
    let xy = array(v, path)?;
    if xy.len() != 2 {
        return Err(FormatError::schema(path, "expected [x, y]"));
    }
    Ok(Point2::new(real(&xy[0], &format!("{path}/0"))?, real(&xy[1], &format!("{path}/1"))?))
}

fn orientation(v: &Value, path: &str) -> Result<Orientation, FormatError> {
    let s = string(v, path)?;
    Orientation::parse(s).ok_or_else(|| FormatError::schema(path, format!("unknown orientation {s:?}")))
}

fn parse_annotation(v: &Value, path: &str) -> Result<AnnotationRecord, FormatError> {
    let obj = object(v, path)?;
    let image_id = string(field(obj, "image", path)?, &format!("{path}/image"))?.to_string();
    let width = integer(field(obj, "width", path)?, &format!("{path}/width"))? as usize;
    let height = integer(field(obj, "height", path)?, &format!("{path}/height"))? as usize;
    if width == 0 {
        return Err(FormatError::schema(&format!("{path}/width"), "must be positive"));
    }
    if height == 0 {
        return Err(FormatError::schema(&format!("{path}/height"), "must be positive"));
    }
    let facades_path = format!("{path}/facades");
    let mut facades = Vec::new();
    for (i, f) in array(field(obj, "facades", path)?, &facades_path)?.iter().enumerate() {
        let fpath = format!("{facades_path}/{i}");
        let fobj = object(f, &fpath)?;
        let quad_path = format!("{fpath}/quad");
        let raw = array(field(fobj, "quad", &fpath)?, &quad_path)?;
        if raw.len() != 4 {
            return Err(FormatError::schema(&quad_path, "expected exactly 4 corners"));
        }
        let mut corners = [Point2::default(); 4];
        for (k, c) in raw.iter().enumerate() {
            let cpath = format!("{quad_path}/{k}");
            let p = point(c, &cpath)?;
            if p.x < 0.0 || p.y < 0.0 || p.x > width as f64 || p.y > height as f64 {
                return Err(FormatError::schema(&cpath, format!("corner ({}, {}) outside {width}x{height}", p.x, p.y)));
            }
            corners[k] = p;
        }
        let o = orientation(field(fobj, "orientation", &fpath)?, &format!("{fpath}/orientation"))?;
        let quad = Quad::new(corners, o).map_err(|e| FormatError::schema(&quad_path, e.to_string()))?;
        facades.push(quad);
    }
    Ok(AnnotationRecord { image_id, width, height, facades })
}

fn parse_line(v: &Value, path: &str) -> Result<Line5Tuple, FormatError> {
    let obj = object(v, path)?;
    let get = |k: &str| -> Result<f64, FormatError> { real(field(obj, k, path)?, &format!("{path}/{k}")) };
    let (xs, ys, xe, ye) = (get("xs")?, get("ys")?, get("xe")?, get("ye")?);
    let order_path = format!("{path}/order");
    let order = integer(field(obj, "order", path)?, &order_path)?;
    if !(1..=u64::from(MAX_FLOOR_ORDER)).contains(&order) {
        return Err(FormatError::schema(&order_path, format!("order {order} outside 1..={MAX_FLOOR_ORDER}")));
    }
    if xs > xe {
        return Err(FormatError::schema(&format!("{path}/xs"), "xs must not exceed xe"));
    }
    Line5Tuple::new(xs, ys, xe, ye, order as u8).map_err(|e: GeometryError| FormatError::schema(path, e.to_string()))
}

fn parse_lines_document(v: &Value) -> Result<LinesDocument, FormatError> {
    let obj = object(v, "")?;
    let image = string(field(obj, "image", "")?, "/image")?.to_string();
    let mut facades = Vec::new();
    for (i, f) in array(field(obj, "facades", "")?, "/facades")?.iter().enumerate() {
        let fpath = format!("/facades/{i}");
        let fobj = object(f, &fpath)?;
        let id_path = format!("{fpath}/id");
        let id = integer(field(fobj, "id", &fpath)?, &id_path)?;
        let id = u32::try_from(id).map_err(|_| FormatError::schema(&id_path, "id too large"))?;
        let orientation = orientation(field(fobj, "orientation", &fpath)?, &format!("{fpath}/orientation"))?;
        let vp_value = field(fobj, "vp", &fpath)?;
        let vp = if vp_value.is_null() { None } else { Some(point(vp_value, &format!("{fpath}/vp"))?) };
        let lines_path = format!("{fpath}/lines");
        let lines = array(field(fobj, "lines", &fpath)?, &lines_path)?
            .iter()
            .enumerate()
            .map(|(k, l)| parse_line(l, &format!("{lines_path}/{k}")))
            .collect::<Result<Vec<_>, _>>()?;
        facades.push(FacadeLines { id, orientation, vp, lines });
    }
    Ok(LinesDocument { image, facades })
}
