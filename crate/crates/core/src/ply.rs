//! Binary little-endian PLY in the layout written by the reference 3DGS
//! trainer: `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`.
//!
//! Preprocessing results (recentering offset, sampling distances) are stored
//! as `comment splatcull ...` header lines so prepared assets round-trip.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use glam::{Quat, Vec3};

use crate::asset::{Asset, SamplingDistances};
use crate::gaussian::{sh_coeff_count, Gaussian};
use crate::{Error, Result};

const META_TAG: &str = "splatcull";

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f32 {
        match self {
            Self::I8 => b[0] as i8 as f32,
            Self::U8 => b[0] as f32,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f32,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f32,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()),
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()) as f32,
        }
    }
}

struct Property {
    name: String,
    ty: ScalarType,
    offset: usize,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
    stride: usize,
}

#[derive(Default)]
struct Meta {
    center_offset: Option<Vec3>,
    distances: Option<SamplingDistances>,
}

fn parse_floats<const N: usize>(toks: &[&str]) -> Option<[f32; N]> {
    if toks.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(toks) {
        *o = t.parse().ok()?;
    }
    Some(out)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<Asset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_ply(BufReader::new(file)).map_err(|e| match e {
        Error::Format { msg, .. } => Error::Ply {
            path: path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<Asset> {
    let err = |msg: String| Error::format("ply", msg);
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(err("unexpected end of header".into()));
        }
        Ok(())
    };

    next_line(&mut r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(err("missing ply magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut meta = Meta::default();
    let mut format_ok = false;
    loop {
        next_line(&mut r, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, ..] => return Err(err(format!("unsupported format {other}"))),
            ["comment", tag, key, rest @ ..] if *tag == META_TAG => match *key {
                "center_offset" => {
                    let v = parse_floats::<3>(rest)
                        .ok_or_else(|| err("malformed center_offset comment".into()))?;
                    meta.center_offset = Some(Vec3::from(v));
                }
                "sampling_distances" => {
                    let [near, far] = parse_floats::<2>(rest)
                        .ok_or_else(|| err("malformed sampling_distances comment".into()))?;
                    meta.distances = Some(SamplingDistances { near, far });
                }
                _ => {}
            },
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| err(format!("bad element count {count}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                    stride: 0,
                });
            }
            ["property", "list", ..] => {
                return Err(err("list properties are not supported".into()))
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err("property before element".into()))?;
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| err(format!("unknown property type {ty}")))?;
                el.props.push(Property {
                    name: name.to_string(),
                    ty,
                    offset: el.stride,
                });
                el.stride += ty.size();
            }
            _ => return Err(err(format!("malformed header line {:?}", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(err("missing format line".into()));
    }

    let mut asset = None;
    for el in &elements {
        let mut body = vec![0u8; el.count * el.stride];
        r.read_exact(&mut body)
            .map_err(|_| err(format!("truncated body in element {}", el.name)))?;
        if el.name == "vertex" {
            asset = Some(decode_vertices(el, &body)?);
        }
    }
    let mut asset = asset.ok_or_else(|| err("missing element vertex".into()))?;
    if let Some(off) = meta.center_offset {
        asset.center_offset = off;
    }
    asset.sampling_distances = meta.distances;
    Ok(asset)
}

fn decode_vertices(el: &Element, body: &[u8]) -> Result<Asset> {
    let err = |msg: String| Error::format("ply", msg);
    let find = |name: &str| -> Result<&Property> {
        el.props
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| err(format!("missing property {name}")))
    };
    let required =
        |names: &[&str]| -> Result<Vec<&Property>> { names.iter().map(|n| find(n)).collect() };

    let pos = required(&["x", "y", "z"])?;
    let dc = required(&["f_dc_0", "f_dc_1", "f_dc_2"])?;
    let opacity = find("opacity")?;
    let scale = required(&["scale_0", "scale_1", "scale_2"])?;
    let rot = required(&["rot_0", "rot_1", "rot_2", "rot_3"])?;

    let mut rest: Vec<(usize, &Property)> = el
        .props
        .iter()
        .filter_map(|p| {
            p.name
                .strip_prefix("f_rest_")
                .and_then(|i| i.parse().ok())
                .map(|i| (i, p))
        })
        .collect();
    rest.sort_by_key(|&(i, _)| i);
    if rest.iter().enumerate().any(|(k, &(i, _))| k != i) {
        return Err(err("f_rest properties are not contiguous".into()));
    }
    let n_rest = rest.len();
    let per_channel = if n_rest.is_multiple_of(3) {
        n_rest / 3 + 1
    } else {
        0
    };
    let degree = (0..=3u32)
        .find(|&d| sh_coeff_count(d) == per_channel)
        .ok_or_else(|| {
            err(format!(
                "{n_rest} f_rest properties do not match any SH degree"
            ))
        })?;

    let mut gaussians = Vec::with_capacity(el.count);
    for (i, rec) in body.chunks_exact(el.stride).enumerate() {
        let get = |p: &Property| -> Result<f32> {
            let v = p.ty.read(&rec[p.offset..]);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!(
                    "non-finite value in property {} of vertex {i}",
                    p.name
                )))
            }
        };
        let vec3 = |ps: &[&Property]| -> Result<Vec3> {
            Ok(Vec3::new(get(ps[0])?, get(ps[1])?, get(ps[2])?))
        };

        let mut sh = Vec::with_capacity(per_channel);
        sh.push(vec3(&dc)?);
        // f_rest is channel-major: all red coefficients, then green, then blue.
        let m = per_channel - 1;
        for k in 0..m {
            sh.push(Vec3::new(
                get(rest[k].1)?,
                get(rest[m + k].1)?,
                get(rest[2 * m + k].1)?,
            ));
        }
        let (w, x, y, z) = (get(rot[0])?, get(rot[1])?, get(rot[2])?, get(rot[3])?);
        let mut q = Quat::from_xyzw(x, y, z, w);
        let norm = q.length();
        if norm == 0.0 {
            return Err(err(format!(
                "zero rotation quaternion (rot_0..3) at vertex {i}"
            )));
        }
        if (norm - 1.0).abs() > 1e-6 {
            q /= norm;
        }
        gaussians.push(Gaussian {
            mean: vec3(&pos)?,
            log_scale: vec3(&scale)?,
            rotation: q,
            opacity_logit: get(opacity)?,
            sh,
        });
    }
    Asset::new(gaussians, degree)
}

pub fn save_ply(asset: &Asset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(asset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply<W: Write>(asset: &Asset, w: &mut W) -> Result<()> {
    let n_rest = 3 * (sh_coeff_count(asset.sh_degree) - 1);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    let c = asset.center_offset;
    header += &format!("comment {META_TAG} center_offset {} {} {}\n", c.x, c.y, c.z);
    if let Some(d) = asset.sampling_distances {
        header += &format!(
            "comment {META_TAG} sampling_distances {} {}\n",
            d.near, d.far
        );
    }
    header += &format!("element vertex {}\n", asset.len());
    let mut names: Vec<String> = [
        "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((0..n_rest).map(|i| format!("f_rest_{i}")));
    names.extend(
        [
            "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    for n in &names {
        header += &format!("property float {n}\n");
    }
    header += "end_header\n";
    w.write_all(header.as_bytes())?;

    let m = n_rest / 3;
    let mut rec: Vec<f32> = Vec::with_capacity(names.len());
    for g in &asset.gaussians {
        rec.clear();
        rec.extend(g.mean.to_array());
        rec.extend([0.0; 3]);
        rec.extend(g.sh[0].to_array());
        for ch in 0..3 {
            rec.extend((0..m).map(|k| g.sh[k + 1][ch]));
        }
        rec.push(g.opacity_logit);
        rec.extend(g.log_scale.to_array());
        rec.extend([g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z]);
        for v in &rec {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}
