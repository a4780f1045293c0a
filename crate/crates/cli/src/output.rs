//! Deterministic, locale-independent file output.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::CliError;

/// Shortest text that parses back to `v` exactly (`.` decimal point,
/// exponent for very small or large magnitudes).
pub fn num(v: f64) -> String {
    serde_json::to_string(&v).expect("finite float")
}

/// Write `bytes` to `path`, or to standard output when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)
                .and_then(|()| out.flush())
                .map_err(|source| CliError::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

/// CSV document from a header and string rows.
pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn number_text() {
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(1.0), "1.0");
        assert_eq!(num(1.7478712517226327e-46), "1.7478712517226327e-46");
        assert_eq!(num(num(0.1 + 0.2).parse::<f64>().unwrap()), num(0.1 + 0.2));
    }

    #[test]
    fn csv_quoting() {
        let b = csv_bytes(&["a".into(), "b".into()], &[vec!["1".into(), "x,y".into()]]);
        assert_eq!(String::from_utf8(b).unwrap(), "a,b\n1,\"x,y\"\n");
    }

    proptest! {
        #[test]
        fn number_text_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
