//! Field dumps and their CSV index.
//!
//! Dump layout, all little-endian:
//!
//! ```text
//! magic    8 bytes  "PRTFIELD"
//! version  u32      1
//! reserved u32      0
//! n_space, n_shells, n_directions, step   u64 × 4
//! time     f64
//! shell radii                 n_shells × f64
//! direction table             n_directions × 3 f64
//! node positions              n_space × 3 f64
//! payload (I, Q, U, V)        n_space·n_shells·n_directions × 4 f64
//! ```
//!
//! Payload order is node-major: `(space·n_shells + shell)·n_directions + dir`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::algebra::CoherenceMatrix;
use crate::flow::Vec3;
use crate::geometry::PhaseGrid;

pub const MAGIC: &[u8; 8] = b"PRTFIELD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub step: u64,
    pub time: f64,
    pub radii: Vec<f64>,
    pub directions: Vec<Vec3>,
    pub positions: Vec<Vec3>,
    pub field: Vec<CoherenceMatrix>,
}

impl FieldDump {
    pub fn n_nodes(&self) -> usize {
        self.positions.len() * self.radii.len() * self.directions.len()
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_vec3(w: &mut impl Write, v: &Vec3) -> io::Result<()> {
    for a in 0..3 {
        put_f64(w, v[a])?;
    }
    Ok(())
}

pub fn write_dump<W: Write>(out: W, grid: &PhaseGrid, field: &[CoherenceMatrix], step: u64, time: f64) -> io::Result<()> {
    if field.len() != grid.n_nodes() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("field has {} nodes, grid has {}", field.len(), grid.n_nodes()),
        ));
    }
    let mut w = BufWriter::new(out);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for n in [grid.n_space(), grid.n_shells(), grid.n_directions()] {
        put_u64(&mut w, n as u64)?;
    }
    put_u64(&mut w, step)?;
    put_f64(&mut w, time)?;
    for r in grid.momentum.radii() {
        put_f64(&mut w, *r)?;
    }
    for d in grid.momentum.directions() {
        put_vec3(&mut w, d)?;
    }
    for x in grid.lattice.positions() {
        put_vec3(&mut w, x)?;
    }
    for m in field {
        for v in m.to_array() {
            put_f64(&mut w, v)?;
        }
    }
    w.flush()
}

fn get<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

fn get_vec3(r: &mut impl Read) -> io::Result<Vec3> {
    Ok(Vec3::new(get_f64(r)?, get_f64(r)?, get_f64(r)?))
}

fn bad(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn read_dump<R: Read>(input: R) -> io::Result<FieldDump> {
    let mut r = BufReader::new(input);
    let magic: [u8; 8] = get(&mut r)?;
    if &magic != MAGIC {
        return Err(bad("not a field dump (bad magic)".into()));
    }
    let version = u32::from_le_bytes(get(&mut r)?);
    if version != VERSION {
        return Err(bad(format!("unsupported dump version {version}")));
    }
    let _reserved: [u8; 4] = get(&mut r)?;
    let ns = get_u64(&mut r)? as usize;
    let nr = get_u64(&mut r)? as usize;
    let nd = get_u64(&mut r)? as usize;
    let step = get_u64(&mut r)?;
    let time = get_f64(&mut r)?;
    // guard against absurd headers before allocating
    let n_nodes = ns.checked_mul(nr).and_then(|v| v.checked_mul(nd)).ok_or_else(|| bad("node count overflows".into()))?;
    if n_nodes > (1usize << 34) {
        return Err(bad(format!("implausible node count {n_nodes}")));
    }
    let radii = (0..nr).map(|_| get_f64(&mut r)).collect::<io::Result<Vec<_>>>()?;
    let directions = (0..nd).map(|_| get_vec3(&mut r)).collect::<io::Result<Vec<_>>>()?;
    let positions = (0..ns).map(|_| get_vec3(&mut r)).collect::<io::Result<Vec<_>>>()?;
    let mut field = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        field.push(CoherenceMatrix::new(get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after payload".into()));
    }
    Ok(FieldDump { step, time, radii, directions, positions, field })
}

pub fn read_dump_file(path: &Path) -> io::Result<FieldDump> {
    read_dump(File::open(path)?)
}

/// Writes dumps into a directory and keeps `index.csv` alongside.
pub struct DumpWriter {
    dir: PathBuf,
    index: csv::Writer<File>,
}

impl DumpWriter {
    pub fn create(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut index = csv::Writer::from_path(dir.join("index.csv")).map_err(io::Error::other)?;
        index.write_record(["file", "step", "time", "n_nodes", "bytes"]).map_err(io::Error::other)?;
        Ok(DumpWriter { dir: dir.to_path_buf(), index })
    }

    pub fn dump(&mut self, grid: &PhaseGrid, field: &[CoherenceMatrix], step: u64, time: f64) -> io::Result<PathBuf> {
        let name = format!("field_{step:06}.bin");
        let path = self.dir.join(&name);
        write_dump(File::create(&path)?, grid, field, step, time)?;
        let bytes = std::fs::metadata(&path)?.len();
        self.index
            .write_record([name, step.to_string(), format!("{time:.17e}"), field.len().to_string(), bytes.to_string()])
            .map_err(io::Error::other)?;
        self.index.flush()?;
        Ok(path)
    }
}
