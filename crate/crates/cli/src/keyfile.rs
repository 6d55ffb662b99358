//! Key files: the signing key is a hex seed in `<path>`, the public key
//! hex in `<path>.pub`. Both end with a newline.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use biotrak_core::{PublicKey, SigningKey};

use crate::error::CliError;

pub fn pub_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".pub");
    PathBuf::from(s)
}

fn write_private(path: &Path, contents: &str, force: bool) -> Result<(), CliError> {
    let mut opts = OpenOptions::new();
    opts.write(true);
    if force {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
        opts.mode(0o600);
        let mut f = opts.open(path).map_err(CliError::io(path.display().to_string()))?;
        // A pre-existing file keeps its old mode when truncated.
        f.set_permissions(fs::Permissions::from_mode(0o600)).map_err(CliError::io(path.display().to_string()))?;
        f.write_all(contents.as_bytes()).map_err(CliError::io(path.display().to_string()))
    }
    #[cfg(not(unix))]
    {
        let mut f = opts.open(path).map_err(CliError::io(path.display().to_string()))?;
        f.write_all(contents.as_bytes()).map_err(CliError::io(path.display().to_string()))
    }
}

pub fn generate(out: &Path, force: bool) -> Result<SigningKey, CliError> {
    let public = pub_path(out);
    if !force {
        for p in [out, public.as_path()] {
            if p.exists() {
                return Err(CliError::Refused(format!("{} already exists (use --force to overwrite)", p.display())));
            }
        }
    }
    let key = SigningKey::generate().map_err(|e| CliError::Refused(format!("cannot generate key: {e}")))?;
    write_private(out, &format!("{}\n", hex::encode(key.seed())), force)?;
    write_private(&public, &format!("{}\n", key.public_key()), force)?;
    Ok(key)
}

pub fn read_signing_key(path: &Path) -> Result<SigningKey, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path.display().to_string()))?;
    let seed: [u8; 32] = hex::decode(text.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError::InvalidSpec(format!("{}: not a hex-encoded 32-byte key", path.display())))?;
    Ok(SigningKey::from_seed(seed))
}

/// Accepts a hex public key or the path of a `.pub` file.
pub fn read_public_key(arg: &str) -> Result<PublicKey, CliError> {
    if let Ok(k) = arg.parse() {
        return Ok(k);
    }
    let text = fs::read_to_string(arg).map_err(CliError::io(arg.to_owned()))?;
    text.trim().parse().map_err(|e| CliError::InvalidSpec(format!("{arg}: {e}")))
}
