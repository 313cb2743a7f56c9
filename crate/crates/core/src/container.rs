//! The scene container: a text-framed checkpoint file with binary blocks.
//!
//! Layout:
//! ```text
//! HOIGS v1
//! SECTIONS <n>
//! SECTION GAUSSIANS_HAND count=<N> bytes=<B>
//! <N x 17 little-endian f32: pos3 quat4 scale3 opacity_logit rgb3 w_raw o_raw pad>
//! SECTION GAUSSIANS_OBJECT ...
//! SECTION GAUSSIANS_BG ...
//! SECTION FIELD_H widths=<w0,w1,...> bytes=<B>
//! <flat f32 parameters, per layer weights row-major then biases>
//! SECTION FIELD_O ... / SECTION FIELD_BG ...
//! SECTION META bytes=<B>
//! <key = value lines, sorted>
//! CHECKSUM <crc32 of all section payloads, hex>
//! ```
//!
//! Loading a saved container and saving it again is byte-identical; a wrong
//! version or a corrupted payload is a hard error.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::Mlp;
use crate::gaussmodel::{Gaussian, GaussianSet, SetTag};
use crate::geom::Vec3;

pub const MAGIC: &str = "HOIGS";
pub const VERSION: &str = "v1";
const GAUSSIAN_FIELDS: usize = 17;

/// In-memory form of a checkpoint: the three Gaussian sets (KNN not stored,
/// rebuilt by consumers), the three field MLPs, and free-form metadata.
#[derive(Debug, Clone)]
pub struct SceneContainer {
    pub hand: GaussianSet,
    pub object: GaussianSet,
    pub background: GaussianSet,
    pub field_h: Mlp,
    pub field_o: Mlp,
    pub field_bg: Mlp,
    pub meta: BTreeMap<String, String>,
}

fn crc32(data: &[u8], seed: u32) -> u32 {
    // standard reflected CRC-32 (IEEE), bitwise
    let mut crc = !seed;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB88320 & mask);
        }
    }
    !crc
}

fn gaussians_to_bytes(set: &GaussianSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(set.len() * GAUSSIAN_FIELDS * 4);
    for g in &set.gaussians {
        let vals: [f64; GAUSSIAN_FIELDS] = [
            g.pos.x,
            g.pos.y,
            g.pos.z,
            g.rot[0],
            g.rot[1],
            g.rot[2],
            g.rot[3],
            g.scale.x,
            g.scale.y,
            g.scale.z,
            g.opacity_logit,
            g.color[0],
            g.color[1],
            g.color[2],
            g.weight_raw,
            g.radius_raw,
            0.0, // reserved
        ];
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn gaussians_from_bytes(tag: SetTag, count: usize, bytes: &[u8]) -> Result<GaussianSet> {
    if bytes.len() != count * GAUSSIAN_FIELDS * 4 {
        return Err(Error::MalformedContainer(format!(
            "gaussian section for {} has {} bytes, expected {}",
            tag.name(),
            bytes.len(),
            count * GAUSSIAN_FIELDS * 4
        )));
    }
    let mut gaussians = Vec::with_capacity(count);
    let mut vals = [0.0f64; GAUSSIAN_FIELDS];
    for chunk in bytes.chunks_exact(GAUSSIAN_FIELDS * 4) {
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            vals[i] = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
        gaussians.push(Gaussian {
            pos: Vec3::new(vals[0], vals[1], vals[2]),
            rot: [vals[3], vals[4], vals[5], vals[6]],
            scale: Vec3::new(vals[7], vals[8], vals[9]),
            opacity_logit: vals[10],
            color: [vals[11], vals[12], vals[13]],
            weight_raw: vals[14],
            radius_raw: vals[15],
        });
    }
    Ok(GaussianSet::new(tag, gaussians))
}

fn mlp_to_bytes(mlp: &Mlp) -> Vec<u8> {
    let params = mlp.params_flat();
    let mut out = Vec::with_capacity(params.len() * 4);
    for v in params {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn mlp_from_bytes(widths: &[usize], bytes: &[u8]) -> Result<Mlp> {
    let mut mlp = Mlp::new(widths, 0);
    if bytes.len() != mlp.param_count() * 4 {
        return Err(Error::MalformedContainer(format!(
            "field section has {} bytes, expected {}",
            bytes.len(),
            mlp.param_count() * 4
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    mlp.set_params_flat(&params)?;
    Ok(mlp)
}

impl SceneContainer {
    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::MalformedContainer(format!("missing or bad meta key {key}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::MalformedContainer(format!("missing or bad meta key {key}")))
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(String, Vec<u8>)> = Vec::new();
        for (name, set) in [
            ("GAUSSIANS_HAND", &self.hand),
            ("GAUSSIANS_OBJECT", &self.object),
            ("GAUSSIANS_BG", &self.background),
        ] {
            sections.push((
                format!("SECTION {name} count={}", set.len()),
                gaussians_to_bytes(set),
            ));
        }
        for (name, mlp) in [
            ("FIELD_H", &self.field_h),
            ("FIELD_O", &self.field_o),
            ("FIELD_BG", &self.field_bg),
        ] {
            let widths = mlp
                .widths
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",");
            sections.push((format!("SECTION {name} widths={widths}"), mlp_to_bytes(mlp)));
        }
        let mut meta_text = String::new();
        for (k, v) in &self.meta {
            meta_text.push_str(k);
            meta_text.push_str(" = ");
            meta_text.push_str(v);
            meta_text.push('\n');
        }
        sections.push(("SECTION META".to_string(), meta_text.into_bytes()));

        let mut crc = 0u32;
        let mut out = Vec::new();
        out.extend_from_slice(format!("{MAGIC} {VERSION}\n").as_bytes());
        out.extend_from_slice(format!("SECTIONS {}\n", sections.len()).as_bytes());
        for (header, payload) in &sections {
            out.extend_from_slice(format!("{header} bytes={}\n", payload.len()).as_bytes());
            out.extend_from_slice(payload);
            out.push(b'\n');
            crc = crc32(payload, crc);
        }
        out.extend_from_slice(format!("CHECKSUM {crc:08x}\n").as_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<SceneContainer> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }

    fn from_bytes(bytes: &[u8]) -> Result<SceneContainer> {
        let mut cursor = 0usize;
        let mut read_line = |cursor: &mut usize| -> Result<String> {
            let start = *cursor;
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            if *cursor >= bytes.len() {
                return Err(Error::MalformedContainer("unexpected end of file".into()));
            }
            let line = std::str::from_utf8(&bytes[start..*cursor])
                .map_err(|_| Error::MalformedContainer("non-utf8 header line".into()))?
                .to_string();
            *cursor += 1;
            Ok(line)
        };

        let magic = read_line(&mut cursor)?;
        let mut parts = magic.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::MalformedContainer(format!("bad magic: {magic}")));
        }
        let version = parts.next().unwrap_or("");
        if version != VERSION {
            return Err(Error::VersionMismatch(version.to_string()));
        }
        let sections_line = read_line(&mut cursor)?;
        let n_sections: usize = sections_line
            .strip_prefix("SECTIONS ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::MalformedContainer(format!("bad sections line: {sections_line}"))
            })?;

        let mut crc = 0u32;
        let mut raw_sections: Vec<(String, BTreeMap<String, String>, Vec<u8>)> = Vec::new();
        for _ in 0..n_sections {
            let header = read_line(&mut cursor)?;
            let mut it = header.split_whitespace();
            if it.next() != Some("SECTION") {
                return Err(Error::MalformedContainer(format!(
                    "bad section header: {header}"
                )));
            }
            let name = it
                .next()
                .ok_or_else(|| Error::MalformedContainer("section without name".into()))?
                .to_string();
            let mut attrs = BTreeMap::new();
            for kv in it {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::MalformedContainer(format!("bad attribute {kv}")))?;
                attrs.insert(k.to_string(), v.to_string());
            }
            let nbytes: usize = attrs
                .get("bytes")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::MalformedContainer("section without bytes".into()))?;
            if cursor + nbytes + 1 > bytes.len() {
                return Err(Error::MalformedContainer("truncated section".into()));
            }
            let payload = bytes[cursor..cursor + nbytes].to_vec();
            cursor += nbytes;
            if bytes[cursor] != b'\n' {
                return Err(Error::MalformedContainer(
                    "missing section terminator".into(),
                ));
            }
            cursor += 1;
            crc = crc32(&payload, crc);
            raw_sections.push((name, attrs, payload));
        }
        let checksum_line = read_line(&mut cursor)?;
        let stored: u32 = checksum_line
            .strip_prefix("CHECKSUM ")
            .and_then(|s| u32::from_str_radix(s.trim(), 16).ok())
            .ok_or_else(|| {
                Error::MalformedContainer(format!("bad checksum line: {checksum_line}"))
            })?;
        if stored != crc {
            return Err(Error::ChecksumMismatch {
                stored,
                computed: crc,
            });
        }

        let mut hand = None;
        let mut object = None;
        let mut background = None;
        let mut field_h = None;
        let mut field_o = None;
        let mut field_bg = None;
        let mut meta = BTreeMap::new();
        for (name, attrs, payload) in raw_sections {
            match name.as_str() {
                "GAUSSIANS_HAND" | "GAUSSIANS_OBJECT" | "GAUSSIANS_BG" => {
                    let count: usize = attrs
                        .get("count")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| {
                            Error::MalformedContainer("gaussian section without count".into())
                        })?;
                    let tag = match name.as_str() {
                        "GAUSSIANS_HAND" => SetTag::Hand,
                        "GAUSSIANS_OBJECT" => SetTag::Object,
                        _ => SetTag::Background,
                    };
                    let set = gaussians_from_bytes(tag, count, &payload)?;
                    match tag {
                        SetTag::Hand => hand = Some(set),
                        SetTag::Object => object = Some(set),
                        SetTag::Background => background = Some(set),
                    }
                }
                "FIELD_H" | "FIELD_O" | "FIELD_BG" => {
                    let widths: Vec<usize> = attrs
                        .get("widths")
                        .ok_or_else(|| {
                            Error::MalformedContainer("field section without widths".into())
                        })?
                        .split(',')
                        .map(|s| {
                            s.parse()
                                .map_err(|_| Error::MalformedContainer("bad width".into()))
                        })
                        .collect::<Result<_>>()?;
                    let mlp = mlp_from_bytes(&widths, &payload)?;
                    match name.as_str() {
                        "FIELD_H" => field_h = Some(mlp),
                        "FIELD_O" => field_o = Some(mlp),
                        _ => field_bg = Some(mlp),
                    }
                }
                "META" => {
                    let text = String::from_utf8(payload)
                        .map_err(|_| Error::MalformedContainer("non-utf8 meta".into()))?;
                    for line in text.lines() {
                        if line.trim().is_empty() {
                            continue;
                        }
                        let (k, v) = line.split_once(" = ").ok_or_else(|| {
                            Error::MalformedContainer(format!("bad meta line: {line}"))
                        })?;
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
                other => {
                    return Err(Error::MalformedContainer(format!("unknown section {other}")))
                }
            }
        }
        let missing = |what: &str| Error::MalformedContainer(format!("missing section {what}"));
        Ok(SceneContainer {
            hand: hand.ok_or_else(|| missing("GAUSSIANS_HAND"))?,
            object: object.ok_or_else(|| missing("GAUSSIANS_OBJECT"))?,
            background: background.ok_or_else(|| missing("GAUSSIANS_BG"))?,
            field_h: field_h.ok_or_else(|| missing("FIELD_H"))?,
            field_o: field_o.ok_or_else(|| missing("FIELD_O"))?,
            field_bg: field_bg.ok_or_else(|| missing("FIELD_BG"))?,
            meta,
        })
    }
}
