//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic "SKGCKPT\0"  u32 version  u32 network_count
//! per network:
//!   str name  str role  str arch  u32 input_channels  u32 input_size
//!   f32 leaky_alpha  f32 discriminator_alpha  f32 dropout_rate
//!   u32 dropout_layers  f32 init_std  f32 norm_eps
//!   u32 param_count
//!   per parameter: str name  u32 rank  u32 dims[rank]  f32 values[numel]
//! str metadata ("key = value" lines)
//! magic "CKPTEND\0"
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::netspec::{parse_spec, render, NetworkSpec, Role};
use crate::network::{build_network, BuildOptions, NetworkInstance};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SKGCKPT\0";
pub const END_MAGIC: &[u8; 8] = b"CKPTEND\0";
pub const VERSION: u32 = 1;

const MAX_RANK: u32 = 8;

pub type Metadata = BTreeMap<String, String>;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub networks: Vec<NetworkInstance>,
    pub metadata: Metadata,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&NetworkInstance> {
        self.networks
            .iter()
            .find(|n| n.name() == name)
            .ok_or_else(|| Error::CheckpointFormat(format!("no network named {name:?}")))
    }

    pub fn take_network(&mut self, name: &str) -> Result<NetworkInstance> {
        let i = self
            .networks
            .iter()
            .position(|n| n.name() == name)
            .ok_or_else(|| Error::CheckpointFormat(format!("no network named {name:?}")))?;
        Ok(self.networks.remove(i))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Parses a metadata value, naming the key on failure.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| Error::CheckpointFormat(format!("metadata key {key:?} missing")))?;
        raw.parse()
            .map_err(|_| Error::CheckpointFormat(format!("metadata {key} = {raw:?} is malformed")))
    }
}

struct Out<W: Write> {
    w: W,
    path: std::path::PathBuf,
}

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b).map_err(|e| Error::io(&self.path, e))
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::CheckpointFormat(format!("length {v} exceeds u32")))?;
        self.u32(v)
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.bytes(s.as_bytes())
    }
}

fn render_metadata(meta: &Metadata) -> Result<String> {
    let mut text = String::new();
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', '\n']) || k.trim() != k || v.contains('\n') || v.trim() != v {
            return Err(Error::CheckpointFormat(format!(
                "metadata entry {k:?} = {v:?} cannot be stored"
            )));
        }
        text.push_str(&format!("{k} = {v}\n"));
    }
    Ok(text)
}

fn parse_metadata(text: &str) -> Result<Metadata> {
    let mut meta = Metadata::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::CheckpointFormat(format!("metadata line {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(meta)
}

fn write_network<W: Write>(out: &mut Out<W>, net: &NetworkInstance) -> Result<()> {
    let spec = net.spec();
    out.str(net.name())?;
    out.str(&spec.role.to_string())?;
    out.str(&spec.arch_string())?;
    out.len(spec.input_channels)?;
    out.len(spec.input_size)?;
    let o = net.options();
    out.f32(o.leaky_alpha)?;
    out.f32(o.discriminator_alpha)?;
    out.f32(o.dropout_rate)?;
    out.len(o.dropout_layers)?;
    out.f32(o.init_std)?;
    out.f32(o.norm_eps)?;
    out.len(net.params().len())?;
    for p in net.params().iter() {
        out.str(p.name())?;
        out.len(p.value().shape().len())?;
        for &d in p.value().shape() {
            out.len(d)?;
        }
        let mut buf = Vec::with_capacity(p.numel() * 4);
        for v in p.value().data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.bytes(&buf)?;
    }
    Ok(())
}

/// Writes networks plus metadata atomically (temp file, then rename).
pub fn save_checkpoint(path: &Path, nets: &[&NetworkInstance], metadata: &Metadata) -> Result<()> {
    let meta_text = render_metadata(metadata)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut out = Out {
            w: BufWriter::new(tmp.as_file()),
            path: path.to_path_buf(),
        };
        out.bytes(MAGIC)?;
        out.u32(VERSION)?;
        out.len(nets.len())?;
        for net in nets {
            write_network(&mut out, net)?;
        }
        out.str(&meta_text)?;
        out.bytes(END_MAGIC)?;
        out.w.flush().map_err(|e| Error::io(path, e))?;
    }
    super::persist(tmp, path)
}

struct In<R: Read> {
    r: R,
    path: std::path::PathBuf,
}

impl<R: Read> In<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.r.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::CheckpointTruncated(format!("{}: file ends inside {what}", self.path.display()))
            }
            _ => Error::io(&self.path, e),
        })
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        if n > 1 << 24 {
            return Err(Error::CheckpointFormat(format!("{what}: implausible length {n}")));
        }
        let mut b = vec![0u8; n];
        self.exact(&mut b, what)?;
        String::from_utf8(b).map_err(|_| Error::CheckpointFormat(format!("{what} is not UTF-8")))
    }
}

fn read_network<R: Read>(inp: &mut In<R>) -> Result<NetworkInstance> {
    let name = inp.str("network name")?;
    let role: Role = inp
        .str("role")?
        .parse()
        .map_err(|e: Error| Error::CheckpointFormat(format!("{name}: {e}")))?;
    let arch = inp.str("architecture")?;
    let in_ch = inp.u32("input channels")? as usize;
    let size = inp.u32("input size")? as usize;
    let options = BuildOptions {
        leaky_alpha: inp.f32("options")?,
        discriminator_alpha: inp.f32("options")?,
        dropout_rate: inp.f32("options")?,
        dropout_layers: inp.u32("options")? as usize,
        init_std: inp.f32("options")?,
        norm_eps: inp.f32("options")?,
    };
    let spec = NetworkSpec::parse(&arch, role, in_ch, size)
        .map_err(|e| Error::CheckpointFormat(format!("{name}: stored architecture invalid: {e}")))?;
    let count = inp.u32("parameter count")? as usize;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let pname = inp.str("parameter name")?;
        let rank = inp.u32("parameter rank")?;
        if rank > MAX_RANK {
            return Err(Error::CheckpointFormat(format!("{pname}: rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(inp.u32("parameter shape")? as usize);
        }
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 4];
        inp.exact(&mut raw, &pname)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        values.push((pname, Tensor::new(dims, data)?));
    }
    let mut net =
        build_network(&spec, &name, options, 0).map_err(|e| Error::CheckpointFormat(format!("{name}: {e}")))?;
    net.load_values(values.iter().map(|(n, t)| (n.as_str(), t)))
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    Ok(net)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut inp = In {
        r: BufReader::new(f),
        path: path.to_path_buf(),
    };
    let mut magic = [0u8; 8];
    inp.exact(&mut magic, "header")?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let version = inp.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let n = inp.u32("network count")? as usize;
    let mut networks = Vec::with_capacity(n.min(16));
    for _ in 0..n {
        networks.push(read_network(&mut inp)?);
    }
    let metadata = parse_metadata(&inp.str("metadata")?)?;
    inp.exact(&mut magic, "end marker")?;
    if &magic != END_MAGIC {
        return Err(Error::CheckpointFormat("end marker missing".into()));
    }
    let mut rest = [0u8; 1];
    if inp.r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::CheckpointFormat("trailing bytes after end marker".into()));
    }
    Ok(Checkpoint { networks, metadata })
}

/// Loads and checks that each named network was built from the expected
/// architecture string.
pub fn load_checkpoint_expecting(path: &Path, expected: &[(&str, &str)]) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    for (name, arch) in expected {
        let net = ckpt.network(name)?;
        let want = render(&parse_spec(arch)?);
        let found = net.spec().arch_string();
        if want != found {
            return Err(Error::ArchitectureMismatch {
                expected: arch.to_string(),
                found,
            });
        }
    }
    Ok(ckpt)
}
