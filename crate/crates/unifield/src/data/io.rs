//! On-disk formats.
//!
//! Sample, text (`.ufs`): header lines `domain <id> <name>`, `flow <v...>`,
//! `points <N>`, then N rows `x y z p`. Floats print in Rust's shortest
//! round-trip form, so text files reload bit-exactly.
//!
//! Sample, packed binary (`.ufsb`): magic `UFSAMP01`, then name, local
//! domain id, flow vector, and interleaved x,y,z,p rows, all little-endian.
//!
//! Manifest (`.ufm`): `name`, `domain`, and `sample` lines declaring the
//! dataset's domains and listing sample files with split tags. Loading is
//! sniffed from content, not extension. The full grammar lives in
//! docs/FORMATS.md.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

use super::synthetic::{self, CylinderOptions};
use super::{
    destandardize_pressure, standardize_pressure, Condition, DomainRegistry, DomainSpec,
    PressureMode, Sample, Split,
};

pub const SAMPLE_TEXT_HEADER: &str = "# unifield sample v1";
pub const MANIFEST_HEADER: &str = "# unifield manifest v1";
pub const SAMPLE_BINARY_MAGIC: &[u8; 8] = b"UFSAMP01";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Text body of a sample, independent of any registry. The p column holds
/// domain-native pressure values.
fn format_sample_text(sample: &Sample, domain: &DomainSpec, raw_p: &[f64]) -> String {
    let mut out = String::new();
    out.push_str(SAMPLE_TEXT_HEADER);
    out.push('\n');
    out.push_str(&format!("domain {} {}\n", domain.id, domain.name));
    out.push_str("flow");
    for v in &sample.flow {
        out.push_str(&format!(" {v}"));
    }
    out.push('\n');
    out.push_str(&format!("points {}\n", sample.len()));
    for (i, raw) in raw_p.iter().enumerate() {
        let p = sample.points.point(i);
        out.push_str(&format!("{} {} {} {raw}\n", p[0], p[1], p[2]));
    }
    out
}

/// Pressure values as they appear on disk for this domain.
fn to_raw_pressure(domain: &DomainSpec, target: &[f64]) -> Result<Vec<f64>> {
    match domain.pressure {
        PressureMode::Passthrough => Ok(target.to_vec()),
        PressureMode::Affine { mean, std } => target
            .iter()
            .map(|&v| destandardize_pressure(v, mean, std))
            .collect(),
    }
}

fn from_raw_pressure(domain: &DomainSpec, raw: Vec<f64>) -> Result<Vec<f64>> {
    match domain.pressure {
        PressureMode::Passthrough => Ok(raw),
        PressureMode::Affine { mean, std } => raw
            .into_iter()
            .map(|v| standardize_pressure(v, mean, std))
            .collect(),
    }
}

/// Write a sample in the text format.
pub fn save_sample_text(sample: &Sample, registry: &DomainRegistry, path: &Path) -> Result<()> {
    let domain = registry.get(sample.domain)?;
    let raw = to_raw_pressure(domain, &sample.target)?;
    fs::write(path, format_sample_text(sample, domain, &raw))?;
    Ok(())
}

/// Write a sample in the packed binary format.
pub fn save_sample_binary(sample: &Sample, registry: &DomainRegistry, path: &Path) -> Result<()> {
    let domain = registry.get(sample.domain)?;
    let raw = to_raw_pressure(domain, &sample.target)?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(SAMPLE_BINARY_MAGIC);
    let name = domain.name.as_bytes();
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name);
    buf.extend_from_slice(&(domain.id as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.flow.len() as u32).to_le_bytes());
    for v in &sample.flow {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(sample.len() as u64).to_le_bytes());
    for (i, raw) in raw.iter().enumerate() {
        let p = sample.points.point(i);
        for v in [p[0], p[1], p[2], *raw] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Load a sample in either format, resolving the domain by name against the
/// registry and applying the domain's pressure mode.
pub fn load_sample(path: &Path, registry: &DomainRegistry) -> Result<Sample> {
    let mut head = [0u8; 8];
    {
        let mut f = fs::File::open(path)?;
        let n = f.read(&mut head)?;
        if n < 8 {
            return Err(parse_err(path, 0, "file too short"));
        }
    }
    if &head == SAMPLE_BINARY_MAGIC {
        load_sample_binary(path, registry)
    } else {
        load_sample_text(path, registry)
    }
}

fn resolve_domain(path: &Path, registry: &DomainRegistry, name: &str) -> Result<usize> {
    registry.index_of(name).map_err(|_| {
        Error::Registry(format!(
            "sample {} references domain '{name}' which is not in the registry",
            path.display()
        ))
    })
}

fn load_sample_text(path: &Path, registry: &DomainRegistry) -> Result<Sample> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty file"))?;
    if header.trim() != SAMPLE_TEXT_HEADER {
        return Err(parse_err(path, ln + 1, "missing sample header"));
    }

    let mut domain_name: Option<String> = None;
    let mut flow: Option<Vec<f64>> = None;
    let mut n_points: Option<usize> = None;
    let mut body_start = 0;
    for (ln, line) in lines.by_ref() {
        let line = line.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("domain") => {
                let _local_id: usize = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, ln + 1, "domain line needs an id"))?;
                domain_name = Some(
                    tok.next()
                        .ok_or_else(|| parse_err(path, ln + 1, "domain line needs a name"))?
                        .to_string(),
                );
            }
            Some("flow") => {
                let vals: std::result::Result<Vec<f64>, _> =
                    tok.map(|t| t.parse::<f64>()).collect();
                flow = Some(
                    vals.map_err(|e| parse_err(path, ln + 1, format!("bad flow value: {e}")))?,
                );
            }
            Some("points") => {
                n_points = Some(
                    tok.next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(path, ln + 1, "points line needs a count"))?,
                );
                body_start = ln + 1;
                break;
            }
            Some(other) => {
                return Err(parse_err(path, ln + 1, format!("unexpected key '{other}'")));
            }
            None => {}
        }
    }

    let domain_name =
        domain_name.ok_or_else(|| parse_err(path, body_start, "missing domain line"))?;
    let flow = flow.ok_or_else(|| parse_err(path, body_start, "missing flow line"))?;
    let n = n_points.ok_or_else(|| parse_err(path, body_start, "missing points line"))?;

    let mut coords = Vec::with_capacity(n * 3);
    let mut raw_p = Vec::with_capacity(n);
    let mut rows = 0;
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(|t| t.parse::<f64>()).collect();
        let vals = vals.map_err(|e| parse_err(path, ln + 1, format!("bad row: {e}")))?;
        if vals.len() != 4 {
            return Err(parse_err(
                path,
                ln + 1,
                format!("expected 4 columns x y z p, got {}", vals.len()),
            ));
        }
        coords.extend_from_slice(&vals[..3]);
        raw_p.push(vals[3]);
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(
            path,
            body_start,
            format!("header declares {n} points, body has {rows}"),
        ));
    }

    let domain = resolve_domain(path, registry, &domain_name)?;
    registry.check_flow(domain, &flow)?;
    let target = from_raw_pressure(registry.get(domain)?, raw_p)?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into());
    Sample::new(PointSet::new(coords)?, domain, flow, target, tag)
}

fn load_sample_binary(path: &Path, registry: &DomainRegistry) -> Result<Sample> {
    let buf = fs::read(path)?;
    let mut at = 8usize; // past magic
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > buf.len() {
            return Err(parse_err(path, 0, format!("truncated at byte {at}")));
        }
        let s = &buf[*at..*at + n];
        *at += n;
        Ok(s)
    };
    let read_u32 =
        |at: &mut usize| -> Result<u32> { Ok(u32::from_le_bytes(take(at, 4)?.try_into().unwrap())) };
    let read_u64 =
        |at: &mut usize| -> Result<u64> { Ok(u64::from_le_bytes(take(at, 8)?.try_into().unwrap())) };
    let read_f64 =
        |at: &mut usize| -> Result<f64> { Ok(f64::from_le_bytes(take(at, 8)?.try_into().unwrap())) };

    let name_len = read_u32(&mut at)? as usize;
    let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
        .map_err(|_| parse_err(path, 0, "domain name is not utf-8"))?;
    let _local_id = read_u32(&mut at)?;
    let flow_dim = read_u32(&mut at)? as usize;
    let mut flow = Vec::with_capacity(flow_dim);
    for _ in 0..flow_dim {
        flow.push(read_f64(&mut at)?);
    }
    let n = read_u64(&mut at)? as usize;
    let mut coords = Vec::with_capacity(n * 3);
    let mut raw_p = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push(read_f64(&mut at)?);
        coords.push(read_f64(&mut at)?);
        coords.push(read_f64(&mut at)?);
        raw_p.push(read_f64(&mut at)?);
    }

    let domain = resolve_domain(path, registry, &name)?;
    registry.check_flow(domain, &flow)?;
    let target = from_raw_pressure(registry.get(domain)?, raw_p)?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into());
    Sample::new(PointSet::new(coords)?, domain, flow, target, tag)
}

/// One manifest line: a sample file with its domain, split, and flow values.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub domain_name: String,
    pub split: Split,
    pub flow: Vec<f64>,
}

/// A dataset index: declared domains plus the sample listing. Paths are
/// relative to the manifest's directory.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub name: String,
    pub domains: Vec<DomainSpec>,
    pub entries: Vec<ManifestEntry>,
    pub dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "empty manifest"))?;
        if header.trim() != MANIFEST_HEADER {
            return Err(parse_err(path, 1, "missing manifest header"));
        }

        let mut name = String::new();
        let mut domains: Vec<DomainSpec> = Vec::new();
        let mut entries = Vec::new();
        for (ln, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("name") => {
                    name = tok.collect::<Vec<_>>().join(" ");
                }
                Some("domain") => {
                    domains.push(parse_domain_line(path, ln + 1, &mut tok)?);
                }
                Some("sample") => {
                    entries.push(parse_sample_line(path, ln + 1, &mut tok)?);
                }
                Some(other) => {
                    return Err(parse_err(path, ln + 1, format!("unexpected key '{other}'")));
                }
                None => {}
            }
        }
        if domains.is_empty() {
            return Err(parse_err(path, 0, "manifest declares no domains"));
        }
        // local ids must be unique, sample domains declared, files present
        for (i, d) in domains.iter().enumerate() {
            if domains[..i].iter().any(|o| o.id == d.id || o.name == d.name) {
                return Err(parse_err(
                    path,
                    0,
                    format!("duplicate domain declaration '{}'", d.name),
                ));
            }
        }
        for e in &entries {
            if !domains.iter().any(|d| d.name == e.domain_name) {
                return Err(Error::Registry(format!(
                    "manifest sample {} uses undeclared domain '{}'",
                    e.path.display(),
                    e.domain_name
                )));
            }
            let full = dir.join(&e.path);
            if !full.exists() {
                return Err(Error::Registry(format!(
                    "manifest references missing file {}",
                    full.display()
                )));
            }
        }
        Ok(Manifest {
            name,
            domains,
            entries,
            dir,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        out.push_str(&format!("name {}\n", self.name));
        for d in &self.domains {
            let conds = d
                .conditions
                .iter()
                .map(|c| format!("{}:{}", c.name, c.unit))
                .collect::<Vec<_>>()
                .join(",");
            let pressure = match d.pressure {
                PressureMode::Passthrough => "passthrough".to_string(),
                PressureMode::Affine { mean, std } => format!("affine:{mean}:{std}"),
            };
            out.push_str(&format!(
                "domain {} {} conditions={conds} pressure={pressure}\n",
                d.id, d.name
            ));
        }
        for e in &self.entries {
            let split = match e.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let flow = e
                .flow
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!(
                "sample {} domain={} split={split} flow={flow}\n",
                e.path.display(),
                e.domain_name
            ));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn parse_domain_line<'a>(
    path: &Path,
    line: usize,
    tok: &mut impl Iterator<Item = &'a str>,
) -> Result<DomainSpec> {
    let id: usize = tok
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| parse_err(path, line, "domain line needs a numeric id"))?;
    let name = tok
        .next()
        .ok_or_else(|| parse_err(path, line, "domain line needs a name"))?
        .to_string();
    let mut conditions = Vec::new();
    let mut pressure = PressureMode::Passthrough;
    for kv in tok {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| parse_err(path, line, format!("expected key=value, got '{kv}'")))?;
        match key {
            "conditions" => {
                for c in value.split(',') {
                    let (cname, unit) = c.split_once(':').ok_or_else(|| {
                        parse_err(path, line, format!("condition '{c}' needs name:unit"))
                    })?;
                    conditions.push(Condition {
                        name: cname.to_string(),
                        unit: unit.to_string(),
                    });
                }
            }
            "pressure" => {
                pressure = if value == "passthrough" {
                    PressureMode::Passthrough
                } else if let Some(rest) = value.strip_prefix("affine:") {
                    let (m, s) = rest
                        .split_once(':')
                        .ok_or_else(|| parse_err(path, line, "affine needs mean:std"))?;
                    PressureMode::Affine {
                        mean: m
                            .parse()
                            .map_err(|e| parse_err(path, line, format!("bad mean: {e}")))?,
                        std: s
                            .parse()
                            .map_err(|e| parse_err(path, line, format!("bad std: {e}")))?,
                    }
                } else {
                    return Err(parse_err(path, line, format!("unknown pressure mode '{value}'")));
                };
            }
            other => {
                return Err(parse_err(path, line, format!("unknown domain key '{other}'")));
            }
        }
    }
    if conditions.is_empty() {
        return Err(parse_err(path, line, "domain declares no conditions"));
    }
    let mut spec = DomainSpec::new(id, name, conditions);
    spec.id = id;
    spec.pressure = pressure;
    Ok(spec)
}

fn parse_sample_line<'a>(
    path: &Path,
    line: usize,
    tok: &mut impl Iterator<Item = &'a str>,
) -> Result<ManifestEntry> {
    let rel = tok
        .next()
        .ok_or_else(|| parse_err(path, line, "sample line needs a path"))?;
    let mut domain_name = None;
    let mut split = None;
    let mut flow = None;
    for kv in tok {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| parse_err(path, line, format!("expected key=value, got '{kv}'")))?;
        match key {
            "domain" => domain_name = Some(value.to_string()),
            "split" => {
                split = Some(match value {
                    "train" => Split::Train,
                    "test" => Split::Test,
                    other => {
                        return Err(parse_err(path, line, format!("unknown split '{other}'")))
                    }
                })
            }
            "flow" => {
                let vals: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(|t| t.parse::<f64>()).collect();
                flow =
                    Some(vals.map_err(|e| parse_err(path, line, format!("bad flow: {e}")))?);
            }
            other => {
                return Err(parse_err(path, line, format!("unknown sample key '{other}'")));
            }
        }
    }
    Ok(ManifestEntry {
        path: PathBuf::from(rel),
        domain_name: domain_name
            .ok_or_else(|| parse_err(path, line, "sample line needs domain="))?,
        split: split.ok_or_else(|| parse_err(path, line, "sample line needs split="))?,
        flow: flow.ok_or_else(|| parse_err(path, line, "sample line needs flow="))?,
    })
}

/// Merge manifests into one registry: domains keyed by name in first-seen
/// order, schemas must agree.
pub fn build_registry(manifests: &[Manifest]) -> Result<DomainRegistry> {
    let mut merged: Vec<DomainSpec> = Vec::new();
    for m in manifests {
        for d in &m.domains {
            match merged.iter().find(|o| o.name == d.name) {
                None => merged.push(d.clone()),
                Some(existing) => {
                    if !existing.schema_matches(d) {
                        return Err(Error::Registry(format!(
                            "domain '{}' declared with conflicting schemas across manifests",
                            d.name
                        )));
                    }
                }
            }
        }
    }
    DomainRegistry::new(merged)
}

/// Load every sample of a split, in manifest order, re-tagged with registry
/// domain indices. The flow vector in the file must match the manifest line.
pub fn load_split(
    manifest: &Manifest,
    registry: &DomainRegistry,
    split: Split,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        let full = manifest.dir.join(&e.path);
        let sample = load_sample(&full, registry)?;
        let declared = registry.index_of(&e.domain_name)?;
        if sample.domain != declared {
            return Err(Error::Registry(format!(
                "sample {} header domain disagrees with manifest entry '{}'",
                full.display(),
                e.domain_name
            )));
        }
        if sample.flow != e.flow {
            return Err(Error::Registry(format!(
                "sample {} flow vector disagrees with manifest entry",
                full.display()
            )));
        }
        out.push(sample);
    }
    Ok(out)
}

/// Which synthetic generator a dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticDomain {
    Cylinder,
    Sphere,
}

impl SyntheticDomain {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            synthetic::CYLINDER_NAME => Ok(SyntheticDomain::Cylinder),
            synthetic::SPHERE_NAME => Ok(SyntheticDomain::Sphere),
            other => Err(Error::config(format!("unknown synthetic domain '{other}'"))),
        }
    }

    pub fn spec(self) -> DomainSpec {
        match self {
            SyntheticDomain::Cylinder => synthetic::cylinder_domain(),
            SyntheticDomain::Sphere => synthetic::sphere_domain(),
        }
    }
}

/// Settings for writing a synthetic dataset to disk.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub domain: SyntheticDomain,
    pub train_count: usize,
    pub test_count: usize,
    pub n_points: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub binary: bool,
    /// Cylinder-only condition warp coefficient.
    pub warp: f64,
}

/// Generate a dataset deterministically and write samples plus manifest.
/// Returns the manifest path. Sample i draws from seed + i, so regenerating
/// with the same spec is byte-identical.
pub fn write_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir.join("samples"))?;
    let domain_spec = spec.domain.spec();
    let registry = DomainRegistry::new(vec![domain_spec.clone()])?;
    let ext = if spec.binary { "ufsb" } else { "ufs" };

    let mut entries = Vec::new();
    let total = spec.train_count + spec.test_count;
    for i in 0..total {
        let sample_seed = spec.seed.wrapping_add(i as u64);
        let sample = match spec.domain {
            SyntheticDomain::Cylinder => synthetic::gen_cylinder_with(CylinderOptions {
                n_points: spec.n_points,
                noise_std: spec.noise_std,
                seed: sample_seed,
                warp: spec.warp,
            })?,
            SyntheticDomain::Sphere => {
                synthetic::gen_sphere(spec.n_points, spec.noise_std, sample_seed)?
            }
        };
        let (split, ordinal) = if i < spec.train_count {
            (Split::Train, i)
        } else {
            (Split::Test, i - spec.train_count)
        };
        let split_name = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let rel = PathBuf::from(format!("samples/{split_name}_{ordinal:04}.{ext}"));
        let full = out_dir.join(&rel);
        if spec.binary {
            save_sample_binary(&sample, &registry, &full)?;
        } else {
            save_sample_text(&sample, &registry, &full)?;
        }
        entries.push(ManifestEntry {
            path: rel,
            domain_name: domain_spec.name.clone(),
            split,
            flow: sample.flow.clone(),
        });
    }

    let manifest = Manifest {
        name: format!("{}-synthetic", domain_spec.name),
        domains: vec![domain_spec],
        entries,
        dir: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.ufm");
    manifest.save(&manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests;
