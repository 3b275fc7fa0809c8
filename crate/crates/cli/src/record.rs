use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rnla_core::nn::AttentionKernel;
use thiserror::Error;

use crate::timing::Timing;

pub const CSV_HEADER: [&str; 27] = [
    "op",
    "impl",
    "d_in",
    "d_out",
    "c_in",
    "c_out",
    "kernel",
    "image",
    "d_model",
    "heads",
    "N",
    "m",
    "l",
    "k",
    "batch",
    "seed",
    "trials",
    "warmup",
    "mean_ms",
    "std_ms",
    "params_dense",
    "params_sketched",
    "est_mem_bytes",
    "recon_rel_err",
    "orth_err",
    "skipped",
    "skip_reason",
];

pub const SKIP_EXCEEDS_DENSE: &str = "exceeds dense size";
pub const SKIP_MEMORY_BUDGET: &str = "memory-budget";
pub const SKIP_RESOURCE: &str = "resource";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Impl {
    Dense,
    Sketched,
}

impl fmt::Display for Impl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Impl::Dense => "dense",
            Impl::Sketched => "sketched",
        })
    }
}

impl FromStr for Impl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dense" => Ok(Impl::Dense),
            "sketched" => Ok(Impl::Sketched),
            _ => Err(format!("unknown impl {s:?}")),
        }
    }
}

/// Contents of the `kernel` column: a convolution kernel size or an
/// attention kernel name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelCell {
    Size(usize),
    Attention(AttentionKernel),
}

/// One row of benchmark output. A record is skipped exactly when it has a
/// `skip_reason`, and then carries no timing.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub op: String,
    pub implementation: Impl,
    pub d_in: Option<usize>,
    pub d_out: Option<usize>,
    pub c_in: Option<usize>,
    pub c_out: Option<usize>,
    pub kernel: Option<KernelCell>,
    pub image: Option<usize>,
    pub d_model: Option<usize>,
    pub heads: Option<usize>,
    pub seq_len: Option<usize>,
    pub num_features: Option<usize>,
    pub num_terms: Option<usize>,
    pub low_rank: Option<usize>,
    pub batch: Option<usize>,
    pub seed: u64,
    pub trials: usize,
    pub warmup: usize,
    pub timing: Option<Timing>,
    pub params_dense: Option<u64>,
    pub params_sketched: Option<u64>,
    pub est_mem_bytes: Option<u64>,
    pub recon_rel_err: Option<f64>,
    pub orth_err: Option<f64>,
    pub skip_reason: Option<String>,
}

impl BenchRecord {
    pub fn new(op: impl Into<String>, implementation: Impl, seed: u64, trials: usize, warmup: usize) -> Self {
        Self {
            op: op.into(),
            implementation,
            d_in: None,
            d_out: None,
            c_in: None,
            c_out: None,
            kernel: None,
            image: None,
            d_model: None,
            heads: None,
            seq_len: None,
            num_features: None,
            num_terms: None,
            low_rank: None,
            batch: None,
            seed,
            trials,
            warmup,
            timing: None,
            params_dense: None,
            params_sketched: None,
            est_mem_bytes: None,
            recon_rel_err: None,
            orth_err: None,
            skip_reason: None,
        }
    }

    pub fn skipped(&self) -> bool {
        self.skip_reason.is_some()
    }

    pub fn mean_ms(&self) -> Option<f64> {
        self.timing.map(|t| t.mean_ms)
    }

    pub fn skip(&mut self, reason: impl Into<String>) {
        self.timing = None;
        self.skip_reason = Some(reason.into());
    }

    fn to_row(&self) -> Vec<String> {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let kernel = match self.kernel {
            Some(KernelCell::Size(s)) => s.to_string(),
            Some(KernelCell::Attention(k)) => k.to_string(),
            None => String::new(),
        };
        vec![
            self.op.clone(),
            self.implementation.to_string(),
            opt(self.d_in),
            opt(self.d_out),
            opt(self.c_in),
            opt(self.c_out),
            kernel,
            opt(self.image),
            opt(self.d_model),
            opt(self.heads),
            opt(self.seq_len),
            opt(self.num_features),
            opt(self.num_terms),
            opt(self.low_rank),
            opt(self.batch),
            self.seed.to_string(),
            self.trials.to_string(),
            self.warmup.to_string(),
            self.timing.map(|t| significant(t.mean_ms, 6)).unwrap_or_default(),
            self.timing.map(|t| significant(t.std_ms, 6)).unwrap_or_default(),
            opt(self.params_dense),
            opt(self.params_sketched),
            opt(self.est_mem_bytes),
            self.recon_rel_err.map(|e| format!("{e:e}")).unwrap_or_default(),
            self.orth_err.map(|e| format!("{e:e}")).unwrap_or_default(),
            self.skipped().to_string(),
            self.skip_reason.clone().unwrap_or_default(),
        ]
    }

    fn from_row(row: &csv::StringRecord) -> Result<Self, String> {
        let cell = |i: usize| row.get(i).unwrap_or("");
        fn opt<T: FromStr>(s: &str) -> Result<Option<T>, String>
        where
            T::Err: fmt::Display,
        {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| format!("{s:?}: {e}"))
            }
        }
        let req = |i: usize| -> Result<u64, String> {
            opt::<u64>(cell(i))?.ok_or_else(|| format!("column {} is empty", CSV_HEADER[i]))
        };
        let kernel = match cell(6) {
            "" => None,
            s => Some(match s.parse::<usize>() {
                Ok(n) => KernelCell::Size(n),
                Err(_) => KernelCell::Attention(s.parse().map_err(|e| format!("{e}"))?),
            }),
        };
        let timing = match (opt::<f64>(cell(18))?, opt::<f64>(cell(19))?) {
            (Some(mean_ms), Some(std_ms)) => Some(Timing { mean_ms, std_ms }),
            (None, None) => None,
            _ => return Err("mean_ms and std_ms must be both present or both empty".into()),
        };
        let skip_reason = opt::<String>(cell(26))?;
        if cell(25) != skip_reason.is_some().to_string() {
            return Err(format!("skipped={} disagrees with skip_reason", cell(25)));
        }
        Ok(Self {
            op: cell(0).to_string(),
            implementation: cell(1).parse()?,
            d_in: opt(cell(2))?,
            d_out: opt(cell(3))?,
            c_in: opt(cell(4))?,
            c_out: opt(cell(5))?,
            kernel,
            image: opt(cell(7))?,
            d_model: opt(cell(8))?,
            heads: opt(cell(9))?,
            seq_len: opt(cell(10))?,
            num_features: opt(cell(11))?,
            num_terms: opt(cell(12))?,
            low_rank: opt(cell(13))?,
            batch: opt(cell(14))?,
            seed: req(15)?,
            trials: req(16)? as usize,
            warmup: req(17)? as usize,
            timing,
            params_dense: opt(cell(20))?,
            params_sketched: opt(cell(21))?,
            est_mem_bytes: opt(cell(22))?,
            recon_rel_err: opt(cell(23))?,
            orth_err: opt(cell(24))?,
            skip_reason,
        })
    }
}

/// `x` rounded to `digits` significant digits in positional notation.
pub fn significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let rounded: f64 = sci.parse().unwrap();
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: csv::Error },
    #[error("{}: row {row}: {reason}", path.display())]
    Parse { path: PathBuf, row: usize, reason: String },
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<(), CsvError> {
    let file = std::fs::File::create(path).map_err(|e| CsvError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    write_csv_to(records, file).map_err(|source| CsvError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_csv_to<W: io::Write>(records: &[BenchRecord], sink: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>, CsvError> {
    let wrap = |source| CsvError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(wrap)?;
    let header = rdr.headers().map_err(wrap)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(CsvError::Parse {
            path: path.to_path_buf(),
            row: 0,
            reason: "unexpected header".into(),
        });
    }
    rdr.records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(wrap)?;
            BenchRecord::from_row(&row).map_err(|reason| CsvError::Parse {
                path: path.to_path_buf(),
                row: i + 1,
                reason,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(significant(1.23456789, 6), "1.23457");
        assert_eq!(significant(0.000123456789, 6), "0.000123457");
        assert_eq!(significant(123456789.0, 6), "123457000");
        assert_eq!(significant(9.9999996, 6), "10.0000");
        assert_eq!(significant(0.0, 6), "0");
    }

    #[test]
    fn golden_header() {
        assert_eq!(
            CSV_HEADER.join(","),
            "op,impl,d_in,d_out,c_in,c_out,kernel,image,d_model,heads,N,m,l,k,batch,seed,trials,warmup,\
             mean_ms,std_ms,params_dense,params_sketched,est_mem_bytes,recon_rel_err,orth_err,skipped,skip_reason"
        );
    }

    #[test]
    fn empty_list_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim_end(), CSV_HEADER.join(","));
    }

    #[test]
    fn round_trip() {
        let mut timed = BenchRecord::new("linear", Impl::Sketched, 3, 200, 10);
        timed.d_in = Some(8192);
        timed.d_out = Some(8192);
        timed.num_terms = Some(1);
        timed.low_rank = Some(16);
        timed.timing = Some(Timing {
            mean_ms: 1.5,
            std_ms: 0.25,
        });
        timed.params_sketched = Some(524_288);
        let mut skipped = BenchRecord::new("attention", Impl::Dense, 0, 5, 1);
        skipped.kernel = Some(KernelCell::Attention(AttentionKernel::Relu));
        skipped.skip("has, a comma");
        let mut conv = BenchRecord::new("conv", Impl::Dense, 0, 5, 1);
        conv.kernel = Some(KernelCell::Size(9));
        conv.recon_rel_err = Some(1.25e-12);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let records = vec![timed, skipped, conv];
        write_csv(&records, &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), records);

        let text = std::fs::read_to_string(&path).unwrap();
        let skipped_line = text.lines().nth(2).unwrap();
        assert!(skipped_line.contains(",,,,,,,,true,\"has, a comma\""), "{skipped_line}");
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let err = write_csv(&[], Path::new("/nonexistent/dir/out.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/out.csv"));
    }
}
