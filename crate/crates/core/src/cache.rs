//! Binary cache files for propagators and their eigensystems.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "CATE"
//! version    u32      FORMAT_VERSION
//! record     u8       0 = propagator, 1 = eigensystem
//! kind       u8       PropagatorKind code
//! label_len  u16      followed by the UTF-8 map label
//! N          u64
//! k, k0      f64, f64
//! window     f64 center, f64 width
//! body       propagator:  N×N row-major (re, im) f64 pairs
//!            eigensystem: max_residual f64, N phases f64,
//!                         then the N×N state matrix as above
//! ```
//!
//! Files are keyed by the header tuple. A file with a different format
//! version is treated as a miss and overwritten.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::classical::{CatMap, ShearWindow};
use crate::linalg::CMatrix;
use crate::quantum::{build_propagator, HilbertDim, PerturbationKind, PerturbationSpec, Propagator, PropagatorKind, PropagatorMeta};
use crate::spectral::{eigendecompose, EigenSystem};
use crate::{Error, Result, C64};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CATE";
const RECORD_PROPAGATOR: u8 = 0;
const RECORD_EIGEN: u8 = 1;

fn write_header<W: Write>(w: &mut W, record: u8, meta: &PropagatorMeta) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[record, meta.kind.code()])?;
    let label = meta.map.as_bytes();
    let len = u16::try_from(label.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "map label too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(label)?;
    w.write_all(&(meta.n as u64).to_le_bytes())?;
    for x in [meta.k, meta.k0, meta.window.center(), meta.window.width()] {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<const L: usize, R: Read>(r: &mut R) -> io::Result<[u8; L]> {
    let mut buf = [0u8; L];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8, R>(r)?))
}

/// Parsed header. `version` is returned rather than checked so callers can
/// distinguish stale files from corrupt ones.
struct Header {
    version: u32,
    record: u8,
    meta: PropagatorMeta,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    if &read_exact::<4, R>(r)? != MAGIC {
        return Err(Error::CacheFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4, R>(r)?);
    let [record, kind] = read_exact::<2, R>(r)?;
    let kind = PropagatorKind::from_code(kind).ok_or_else(|| Error::CacheFormat(format!("unknown kind code {kind}")))?;
    let len = u16::from_le_bytes(read_exact::<2, R>(r)?) as usize;
    let mut label = vec![0u8; len];
    r.read_exact(&mut label)?;
    let map = String::from_utf8(label).map_err(|e| Error::CacheFormat(e.to_string()))?;
    let n = u64::from_le_bytes(read_exact::<8, R>(r)?) as usize;
    let k = read_f64(r)?;
    let k0 = read_f64(r)?;
    let center = read_f64(r)?;
    let width = read_f64(r)?;
    let window = ShearWindow::new(center, width)?;
    Ok(Header { version, record, meta: PropagatorMeta { map, kind, k, k0, window, n } })
}

fn write_matrix<W: Write>(w: &mut W, m: &CMatrix) -> io::Result<()> {
    for z in m.iter() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, n: usize) -> Result<CMatrix> {
    let mut bytes = vec![0u8; n * n * 16];
    r.read_exact(&mut bytes)?;
    let data: Vec<C64> = bytes
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    CMatrix::from_shape_vec((n, n), data).map_err(|e| Error::CacheFormat(e.to_string()))
}

pub fn write_propagator<W: Write>(w: &mut W, u: &Propagator) -> Result<()> {
    write_header(w, RECORD_PROPAGATOR, u.meta())?;
    write_matrix(w, &u.matrix().to_owned())?;
    Ok(())
}

/// Read a propagator record; the unitarity check is repeated on load.
pub fn read_propagator<R: Read>(r: &mut R) -> Result<Propagator> {
    let header = read_header(r)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::CacheFormat(format!("format version {} (expected {FORMAT_VERSION})", header.version)));
    }
    if header.record != RECORD_PROPAGATOR {
        return Err(Error::CacheFormat("not a propagator record".into()));
    }
    let matrix = read_matrix(r, header.meta.n)?;
    Propagator::checked(matrix, header.meta)
}

pub fn write_eigensystem<W: Write>(w: &mut W, sys: &EigenSystem) -> Result<()> {
    let meta = sys.meta.as_ref().ok_or_else(|| Error::CacheFormat("eigensystem without provenance".into()))?;
    write_header(w, RECORD_EIGEN, meta)?;
    w.write_all(&sys.max_residual.to_le_bytes())?;
    for p in &sys.phases {
        w.write_all(&p.to_le_bytes())?;
    }
    write_matrix(w, &sys.states)?;
    Ok(())
}

pub fn read_eigensystem<R: Read>(r: &mut R) -> Result<EigenSystem> {
    let header = read_header(r)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::CacheFormat(format!("format version {} (expected {FORMAT_VERSION})", header.version)));
    }
    if header.record != RECORD_EIGEN {
        return Err(Error::CacheFormat("not an eigensystem record".into()));
    }
    let n = header.meta.n;
    let max_residual = read_f64(r)?;
    let phases = (0..n).map(|_| read_f64(r)).collect::<io::Result<Vec<_>>>()?;
    let states = read_matrix(r, n)?;
    Ok(EigenSystem { phases, states, meta: Some(header.meta), max_residual })
}

/// File name derived from the header tuple; floats are encoded by their bits.
pub fn cache_file_name(record: &str, meta: &PropagatorMeta) -> String {
    let label: String = meta.map.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    format!(
        "{record}-v{FORMAT_VERSION}-{label}-{}-N{}-k{:016x}-k0{:016x}-c{:016x}-w{:016x}.bin",
        meta.kind.code(),
        meta.n,
        meta.k.to_bits(),
        meta.k0.to_bits(),
        meta.window.center().to_bits(),
        meta.window.width().to_bits()
    )
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write via a temporary file in the same directory, then rename.
fn write_atomic(path: &Path, write: impl FnOnce(&mut io::BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("cache"),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut w = io::BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Directory of cached eigensystems, keyed by propagator header.
#[derive(Debug, Clone)]
pub struct EigenCache {
    dir: PathBuf,
}

impl EigenCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, meta: &PropagatorMeta) -> PathBuf {
        self.dir.join(cache_file_name("eig", meta))
    }

    /// Cached eigensystem if the file exists with the current format
    /// version; `None` on a miss or a stale/corrupt file.
    pub fn load(&self, meta: &PropagatorMeta) -> Option<EigenSystem> {
        let path = self.path_for(meta);
        let file = fs::File::open(&path).ok()?;
        match read_eigensystem(&mut io::BufReader::new(file)) {
            Ok(sys) if sys.meta.as_ref() == Some(meta) => Some(sys),
            Ok(_) => None,
            Err(e) => {
                log::info!("ignoring cache file {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store(&self, sys: &EigenSystem) -> Result<()> {
        let meta = sys.meta.as_ref().ok_or_else(|| Error::CacheFormat("eigensystem without provenance".into()))?;
        write_atomic(&self.path_for(meta), |w| write_eigensystem(w, sys))
    }

    /// Eigensystem of `build_propagator(map, spec, n)`, from cache when the
    /// header tuple matches.
    pub fn get_or_compute(&self, map: &CatMap, spec: &PerturbationSpec, n: HilbertDim) -> Result<EigenSystem> {
        let meta = expected_meta(map, spec, n);
        if let Some(sys) = self.load(&meta) {
            return Ok(sys);
        }
        let sys = eigendecompose(&build_propagator(map, spec, n)?)?;
        self.store(&sys)?;
        Ok(sys)
    }
}

/// The metadata `build_propagator` attaches, without building the matrix.
pub fn expected_meta(map: &CatMap, spec: &PerturbationSpec, n: HilbertDim) -> PropagatorMeta {
    PropagatorMeta {
        map: map.label().to_string(),
        kind: match spec.kind {
            PerturbationKind::MomentumShear => PropagatorKind::MomentumPerturbed,
            PerturbationKind::DoubleShear => PropagatorKind::DoubleShear,
        },
        k: spec.k,
        k0: spec.k0,
        window: match spec.kind {
            PerturbationKind::MomentumShear => spec.window,
            PerturbationKind::DoubleShear => ShearWindow::global(),
        },
        n: n.get(),
    }
}

pub fn save_propagator(path: &Path, u: &Propagator) -> Result<()> {
    write_atomic(path, |w| write_propagator(w, u))
}

pub fn load_propagator(path: &Path) -> Result<Propagator> {
    read_propagator(&mut io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::quantum::PerturbationKind;

    fn spec() -> PerturbationSpec {
        PerturbationSpec::new(PerturbationKind::MomentumShear, 0.05, 0.02, ShearWindow::new(0.21, 0.3).unwrap()).unwrap()
    }

    #[test]
    fn propagator_bytes_are_little_endian_row_major() {
        let n = HilbertDim::new(3).unwrap();
        let u = build_propagator(&CatMap::g2(), &spec(), n).unwrap();
        let mut bytes = Vec::new();
        write_propagator(&mut bytes, &u).unwrap();
        let header_len = 4 + 4 + 2 + 2 + 2 + 8 + 32;
        assert_eq!(bytes.len(), header_len + 9 * 16);
        assert_eq!(&bytes[..4], b"CATE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(&bytes[12..14], b"G2");
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[22..30].try_into().unwrap()), 0.05);
        // entry (0, 1)
        let off = header_len + 16;
        let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        assert_eq!(C64::new(re, im), u.matrix()[[0, 1]]);

        let back = read_propagator(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.meta(), u.meta());
        assert_eq!(max_abs_diff(&back.matrix(), &u.matrix()), 0.0);
    }

    #[test]
    fn version_mismatch_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EigenCache::new(dir.path());
        let n = HilbertDim::new(16).unwrap();
        let fresh = cache.get_or_compute(&CatMap::g3(), &spec(), n).unwrap();
        let meta = expected_meta(&CatMap::g3(), &spec(), n);
        assert!(cache.load(&meta).is_some());

        let path = cache.path_for(&meta);
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(cache.load(&meta).is_none());

        let again = cache.get_or_compute(&CatMap::g3(), &spec(), n).unwrap();
        assert_eq!(again.phases, fresh.phases);
        assert!(cache.load(&meta).is_some());
    }

    #[test]
    fn cached_eigensystem_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EigenCache::new(dir.path());
        let n = HilbertDim::new(20).unwrap();
        let a = cache.get_or_compute(&CatMap::g2(), &spec(), n).unwrap();
        let b = cache.get_or_compute(&CatMap::g2(), &spec(), n).unwrap();
        assert_eq!(a.phases, b.phases);
        assert_eq!(a.states, b.states);
        assert_eq!(a.meta, b.meta);
        // no stray temp files
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn expected_meta_matches_builder() {
        let n = HilbertDim::new(10).unwrap();
        let u = build_propagator(&CatMap::g1(), &spec(), n).unwrap();
        assert_eq!(&expected_meta(&CatMap::g1(), &spec(), n), u.meta());
        let ds = PerturbationSpec::new(PerturbationKind::DoubleShear, 0.04, 0.02, ShearWindow::global()).unwrap();
        let u = build_propagator(&CatMap::g1(), &ds, n).unwrap();
        assert_eq!(&expected_meta(&CatMap::g1(), &ds, n), u.meta());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.bin");
        let u = build_propagator(&CatMap::g2(), &spec(), HilbertDim::new(5).unwrap()).unwrap();
        save_propagator(&path, &u).unwrap();
        let back = load_propagator(&path).unwrap();
        assert_eq!(back.matrix(), u.matrix());
        fs::write(&path, b"nope").unwrap();
        assert!(load_propagator(&path).is_err());
    }
}
