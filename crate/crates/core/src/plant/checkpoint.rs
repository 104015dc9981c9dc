//! State checkpoints: a little-endian binary record with a name header, and
//! a two-row CSV twin.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{state_names, PlantState, N_STATES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WWTPST01";

pub fn write_state_binary(path: &Path, state: &PlantState) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(N_STATES as u32).to_le_bytes())?;
    for name in state_names() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    w.write_all(&state.time.to_le_bytes())?;
    for v in state.x.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_state_binary(path: &Path) -> Result<PlantState> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut cur = buf.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if count != N_STATES {
        return Err(bad(&format!("expected {N_STATES} entries, found {count}")));
    }
    let expected = state_names();
    for name in expected.iter() {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let got = std::str::from_utf8(take(len)?).map_err(|_| bad("non-utf8 name"))?;
        if got != name {
            return Err(bad(&format!(
                "header entry `{got}` where `{name}` expected"
            )));
        }
    }
    let time = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut x = [0.0; N_STATES];
    for v in x.iter_mut() {
        *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    Ok(PlantState { x, time })
}

pub fn write_state_csv(path: &Path, state: &PlantState) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time[day]".to_string()];
    header.extend(state_names());
    w.write_record(&header)?;
    let mut row = vec![format!("{:e}", state.time)];
    row.extend(state.x.iter().map(|v| format!("{v:e}")));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub fn read_state_csv(path: &Path) -> Result<PlantState> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() != N_STATES + 1 {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} columns, found {}",
            path.display(),
            N_STATES + 1,
            header.len()
        )));
    }
    let rec = r
        .records()
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("{}: no data row", path.display())))??;
    let vals: Vec<f64> = rec
        .iter()
        .map(|f| f.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    PlantState::from_slice(&vals[1..], vals[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_and_csv_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = PlantState::reference();
        s.time = 1.0 / 3.0;
        s.x[7] = 7.696e-3 + 1e-17;
        let bin = dir.path().join("state.bin");
        let csv = dir.path().join("state.csv");
        write_state_binary(&bin, &s).unwrap();
        write_state_csv(&csv, &s).unwrap();
        assert_eq!(read_state_binary(&bin).unwrap(), s);
        assert_eq!(read_state_csv(&csv).unwrap(), s);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"NOTMAGIC....").unwrap();
        assert!(matches!(read_state_binary(&p), Err(Error::Checkpoint(_))));
    }
}
