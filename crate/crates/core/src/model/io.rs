//! Versioned plain-text parameter format.
//!
//! ```text
//! format dgmm-params
//! version 1
//! p 3
//! k 4 1
//! r 2 1
//! component 1 1
//! weight 0.25
//! eta 3 0.1 -0.2 0.3
//! lambda 3 2 <6 values, row-major>
//! psi 3 0.5 0.5 0.5
//! ...
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so save/load is bit-exact for finite values.

use nalgebra::{DMatrix, DVector};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use super::{DgmmParams, DgmmSpec, LayerComponent};
use crate::error::{DgmmError, Result};

const FORMAT: &str = "dgmm-params";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &DgmmParams) -> Result<()> {
    let spec = params.spec();
    let join_usize = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let join_f64 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    writeln!(w, "format {FORMAT}")?;
    writeln!(w, "version {VERSION}")?;
    writeln!(w, "p {}", spec.p())?;
    writeln!(w, "k {}", join_usize(spec.k()))?;
    writeln!(w, "r {}", join_usize(spec.r()))?;
    for (l, layer) in params.layers().iter().enumerate() {
        for (j, c) in layer.iter().enumerate() {
            writeln!(w, "component {} {}", l + 1, j + 1)?;
            writeln!(w, "weight {:?}", c.weight)?;
            writeln!(w, "eta {} {}", c.eta.len(), join_f64(&mut c.eta.iter().copied()))?;
            let (rows, cols) = c.lambda.shape();
            let row_major = (0..rows).flat_map(|a| (0..cols).map(move |b| (a, b)));
            writeln!(
                w,
                "lambda {rows} {cols} {}",
                join_f64(&mut row_major.map(|(a, b)| c.lambda[(a, b)]))
            )?;
            writeln!(w, "psi {} {}", c.psi.len(), join_f64(&mut c.psi.iter().copied()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_params(path: impl AsRef<FsPath>, params: &DgmmParams) -> Result<()> {
    write_params(BufWriter::new(File::create(path)?), params)
}

pub fn load_params(path: impl AsRef<FsPath>) -> Result<DgmmParams> {
    read_params(File::open(path)?)
}

struct Lines<R: BufRead> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    /// Next non-empty line split into `(keyword, rest)`.
    fn next_record(&mut self) -> Result<Option<(String, Vec<String>)>> {
        for raw in self.inner.by_ref() {
            self.line += 1;
            let raw = raw?;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace().map(str::to_owned);
            let key = parts.next().unwrap_or_default();
            return Ok(Some((key, parts.collect())));
        }
        Ok(None)
    }

    fn expect(&mut self, key: &str) -> Result<Vec<String>> {
        match self.next_record()? {
            Some((k, rest)) if k == key => Ok(rest),
            Some((k, _)) => Err(self.err(format!("expected `{key}`, found `{k}`"))),
            None => Err(self.err(format!("unexpected end of input, expected `{key}`"))),
        }
    }

    fn err(&self, msg: String) -> DgmmError {
        DgmmError::Parse {
            line: self.line,
            msg,
        }
    }

    fn usizes(&self, fields: &[String]) -> Result<Vec<usize>> {
        fields
            .iter()
            .map(|f| f.parse().map_err(|_| self.err(format!("invalid integer `{f}`"))))
            .collect()
    }

    fn floats(&self, fields: &[String]) -> Result<Vec<f64>> {
        fields
            .iter()
            .map(|f| {
                let v: f64 = f.parse().map_err(|_| self.err(format!("invalid number `{f}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(self.err(format!("non-finite number `{f}`")))
                }
            })
            .collect()
    }

    /// `<len> v1 .. vlen`
    fn vector(&mut self, key: &str, len: usize) -> Result<DVector<f64>> {
        let rest = self.expect(key)?;
        let declared = self.usizes(rest.get(..1).unwrap_or(&[]))?;
        if declared != [len] || rest.len() != len + 1 {
            return Err(self.err(format!("`{key}` must declare and hold {len} values")));
        }
        Ok(DVector::from_vec(self.floats(&rest[1..])?))
    }
}

pub fn read_params<R: Read>(reader: R) -> Result<DgmmParams> {
    let mut lines = Lines {
        inner: BufReader::new(reader).lines(),
        line: 0,
    };
    let format = lines.expect("format")?;
    if format != [FORMAT] {
        return Err(lines.err(format!("unknown format {format:?}")));
    }
    let version = lines.expect("version")?;
    if version != [VERSION.to_string()] {
        return Err(lines.err(format!("unsupported version {version:?}")));
    }
    let p = lines.expect("p")?;
    let p = match lines.usizes(&p)?.as_slice() {
        [p] => *p,
        _ => return Err(lines.err("`p` takes one value".into())),
    };
    let k = lines.expect("k")?;
    let k = lines.usizes(&k)?;
    let r = lines.expect("r")?;
    let r = lines.usizes(&r)?;
    let spec = DgmmSpec::new(p, k, r)?;

    let mut layers = Vec::with_capacity(spec.depth());
    for l in 1..=spec.depth() {
        let (rows, cols) = (spec.dim(l - 1), spec.dim(l));
        let mut comps = Vec::with_capacity(spec.components(l));
        for j in 1..=spec.components(l) {
            let header = lines.expect("component")?;
            if lines.usizes(&header)? != [l, j] {
                return Err(lines.err(format!("expected `component {l} {j}`")));
            }
            let weight = lines.expect("weight")?;
            let weight = match lines.floats(&weight)?.as_slice() {
                [w] => *w,
                _ => return Err(lines.err("`weight` takes one value".into())),
            };
            let eta = lines.vector("eta", rows)?;
            let rest = lines.expect("lambda")?;
            let shape = lines.usizes(rest.get(..2).unwrap_or(&[]))?;
            if shape != [rows, cols] || rest.len() != rows * cols + 2 {
                return Err(lines.err(format!("`lambda` must be {rows}x{cols}")));
            }
            let lambda = DMatrix::from_row_slice(rows, cols, &lines.floats(&rest[2..])?);
            let psi = lines.vector("psi", rows)?;
            comps.push(LayerComponent {
                weight,
                eta,
                lambda,
                psi,
            });
        }
        layers.push(comps);
    }
    if let Some((key, _)) = lines.next_record()? {
        return Err(lines.err(format!("trailing record `{key}`")));
    }
    DgmmParams::new(spec, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_params;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), k1 in 1usize..4, k2 in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = DgmmSpec::new(5, vec![k1, k2], vec![3, 1]).unwrap();
            let params = random_params(&spec, &mut rng);
            let mut buf = Vec::new();
            write_params(&mut buf, &params).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            prop_assert_eq!(back, params);
        }
    }

    #[test]
    fn rejects_malformed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = DgmmSpec::new(3, vec![2], vec![1]).unwrap();
        let params = random_params(&spec, &mut rng);
        let mut buf = Vec::new();
        write_params(&mut buf, &params).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let bad_version = text.replace("version 1", "version 9");
        assert!(read_params(bad_version.as_bytes()).is_err());

        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        let err = read_params(truncated.as_bytes()).unwrap_err();
        assert!(matches!(err, DgmmError::Parse { .. }));

        let bad_shape = text.replacen("lambda 3 1", "lambda 3 2", 1);
        assert!(read_params(bad_shape.as_bytes()).is_err());

        let nan = text.replacen("weight ", "weight NaN #", 1);
        assert!(read_params(nan.as_bytes()).is_err());

        let extra = format!("{text}component 9 9\n");
        assert!(read_params(extra.as_bytes()).is_err());
    }
}
