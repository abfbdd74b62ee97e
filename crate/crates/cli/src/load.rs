//! Dataset loading shared by the subcommands.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use cpr_core::io::{load_dataset, read_table_file, LabelSource};
use cpr_core::model::{Dataset, SampleKernel};
use cpr_core::{CprError, Result};

use crate::DataArgs;

pub fn labeled(args: &DataArgs) -> Result<Dataset<f64>> {
    let src = match &args.labels {
        Some(p) => LabelSource::File(p),
        None => LabelSource::Column(&args.label_column),
    };
    load_dataset(&args.data, src, !args.no_header, args.side.as_deref(), None)
}

/// Features with the label column dropped when present; labels default to +1.
pub fn features(path: &Path, label_column: &str, no_header: bool, side: Option<&Path>) -> Result<Dataset<f64>> {
    let table = read_table_file(path, !no_header)?;
    let skip = table.header.as_ref().and_then(|h| h.iter().position(|c| c == label_column));
    let mut data = Dataset::new(table.to_feature_matrix(skip), vec![1; table.rows.len()])?;
    if let Some(h) = &table.header {
        data = data.with_names(h.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, s)| s.clone()).collect())?;
    }
    if let Some(p) = side {
        data = data.with_side(read_table_file(p, !no_header)?.to_feature_matrix(None))?;
    }
    Ok(data)
}

pub fn kernel_matrix(path: &Path) -> Result<SampleKernel<f64>> {
    SampleKernel::new(read_table_file(path, false)?.to_feature_matrix(None))
}

/// Attaches a kernel covering `parts` in order and splits it back.
pub fn attach_kernel(parts: &[&Dataset<f64>], kernel: SampleKernel<f64>) -> Result<Vec<Dataset<f64>>> {
    let total: usize = parts.iter().map(|p| p.n()).sum();
    if kernel.full().nrows() != total {
        return Err(CprError::DimensionMismatch(format!("kernel is {0}×{0} but there are {total} samples", kernel.full().nrows())));
    }
    let mut joined = parts[0].clone();
    for p in &parts[1..] {
        joined = joined.concat(p)?;
    }
    let joined = joined.with_sample_kernel(kernel)?;
    let mut out = Vec::new();
    let mut start = 0;
    for p in parts {
        out.push(joined.select(&(start..start + p.n()).collect::<Vec<_>>())?);
        start += p.n();
    }
    Ok(out)
}

pub fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}
