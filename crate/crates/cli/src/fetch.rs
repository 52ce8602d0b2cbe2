//! Optional MNIST download with checksum verification.

use std::io::Read;
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};

use crate::RunError;

pub const MIRRORS: [&str; 2] = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
];

/// `(file name, md5)` of the four gzipped IDX files.
pub const FILES: [(&str, &str); 4] = [
    ("train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    ("train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"),
    ("t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"),
    ("t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"),
];

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn verify(name: &str, bytes: &[u8], expected: &str) -> Result<(), RunError> {
    let got = md5_hex(bytes);
    if got != expected {
        return Err(RunError::Download(format!("{name}: checksum {got}, expected {expected}")));
    }
    Ok(())
}

fn download(url: &str) -> Result<Vec<u8>, String> {
    let resp = ureq::get(url).call().map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    resp.into_reader().read_to_end(&mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

/// Downloads the files missing from `dir` (existing ones are re-verified),
/// trying `mirrors` in order. Returns the paths of the four files.
pub fn fetch_mnist(dir: &Path, mirrors: &[String]) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let mut paths = Vec::new();
    for (name, md5) in FILES {
        let path = dir.join(name);
        if path.is_file() {
            let bytes = std::fs::read(&path).map_err(|e| RunError::io(&path, e))?;
            verify(name, &bytes, md5)?;
            paths.push(path);
            continue;
        }
        let mut errors = Vec::new();
        let mut fetched = None;
        for m in mirrors {
            let url = format!("{}/{name}", m.trim_end_matches('/'));
            match download(&url).map_err(RunError::Download).and_then(|b| verify(name, &b, md5).map(|_| b)) {
                Ok(b) => {
                    fetched = Some(b);
                    break;
                }
                Err(e) => errors.push(format!("{url}: {e}")),
            }
        }
        let bytes = fetched.ok_or_else(|| RunError::Download(errors.join("; ")))?;
        std::fs::write(&path, bytes).map_err(|e| RunError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn md5_known_vectors() {
        assert_eq!(md5_hex(b""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(md5_hex(b"abc"), "900150983cd24fb0d6963f7d28e17f72");
    }

    #[test]
    fn corrupt_local_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(FILES[0].0), b"not mnist").unwrap();
        let err = fetch_mnist(dir.path(), &[]).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }
}
