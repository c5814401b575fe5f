use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::Result;
use crate::fedsim::RoundMetrics;

pub const METRICS_HEADER: &str =
    "round,loss,gap,grad_norm,uplink_floats,downlink_floats,wall_seconds";

pub(crate) fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.round,
            float(m.loss),
            float(m.gap),
            float(m.grad_norm),
            m.uplink_floats,
            m.downlink_floats,
            float(m.wall_seconds)
        );
    }
    out
}

/// Write via a temporary file in the target directory, then rename, so a
/// crash never leaves a truncated result behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = RoundMetrics {
            round: 3,
            loss: 0.5,
            gap: 1e-9,
            grad_norm: 2.0,
            uplink_floats: 272,
            downlink_floats: 65,
            wall_seconds: 0.25,
        };
        let csv = format_metrics_csv(&[m]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(
            lines[1],
            "3,5.0000000000000000e-1,1.0000000000000001e-9,2.0000000000000000e0,272,65,2.5000000000000000e-1"
        );
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
