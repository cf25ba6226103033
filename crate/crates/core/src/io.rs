//! On-disk formats: flat little-endian binaries for datasets, samples and
//! checkpoints, plus RFC-4180 CSV emission (CRLF, header row, '.' decimal).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{noise_dataset, NoiseCoupling, NoisedDataset};
use crate::error::{Error, Result};
use crate::models::{Activation, LinearScoreModel, TimeMlp};
use crate::sample::SampleSet;
use crate::schedule::{Schedule, ScheduleKind};
use crate::train::TracePoint;

const DATASET_MAGIC: &[u8; 8] = b"SLDS0001";
const CHECKPOINT_MAGIC: &[u8; 8] = b"SLCK0001";

fn kind_tag(kind: ScheduleKind) -> Result<u8> {
    match kind {
        ScheduleKind::Linear => Ok(0),
        ScheduleKind::Quadratic => Ok(1),
        ScheduleKind::Strided { .. } => Err(Error::InvalidArgument(
            "strided schedules are derived at runtime and not serialized to binary".into(),
        )),
    }
}

fn kind_from_tag(tag: u8) -> Result<ScheduleKind> {
    match tag {
        0 => Ok(ScheduleKind::Linear),
        1 => Ok(ScheduleKind::Quadratic),
        other => Err(Error::InvalidArgument(format!("unknown schedule tag {other}"))),
    }
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Binary layout: magic, u64 {m, N, d, seed}, u8 schedule-kind, f64 horizon,
/// then x0 (m*d), x (m*N*d), z (m*N*d) as little-endian f64.
pub fn write_dataset(path: &Path, ds: &NoisedDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    for v in [ds.m() as u64, ds.n_steps() as u64, ds.dim() as u64, ds.seed()] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[kind_tag(ds.schedule().kind())?])?;
    w.write_all(&ds.schedule().horizon().to_le_bytes())?;
    write_f64s(&mut w, ds.x0_flat())?;
    write_f64s(&mut w, ds.x_flat())?;
    write_f64s(&mut w, ds.z_flat())?;
    w.flush()?;
    Ok(())
}

/// Read a dataset back; the schedule is regenerated from (kind, N, horizon)
/// and trajectories are validated against their stored decomposition.
pub fn read_dataset(path: &Path) -> Result<NoisedDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::InvalidArgument(format!(
            "{}: not a dataset file",
            path.display()
        )));
    }
    let m = read_u64(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let mut hz = [0u8; 8];
    r.read_exact(&mut hz)?;
    let horizon = f64::from_le_bytes(hz);
    let schedule = Schedule::new(kind_from_tag(tag[0])?, n, horizon)?;
    let x0 = read_f64s(&mut r, m * d)?;
    // Regeneration from (seed, x0) reproduces x and z bit-exactly; the file
    // still carries them so foreign tools can read the tensors directly.
    let x = read_f64s(&mut r, m * n * d)?;
    let z = read_f64s(&mut r, m * n * d)?;
    let ds = noise_dataset(x0, d, schedule, seed, NoiseCoupling::Dependent)?;
    if ds.x_flat() != x || ds.z_flat() != z {
        return Err(Error::InvalidArgument(format!(
            "{}: stored trajectories do not match their seed (corrupt or foreign file)",
            path.display()
        )));
    }
    Ok(ds)
}

const SAMPLES_MAGIC: &[u8; 8] = b"SLSM0001";

/// Samples binary layout: magic, u64 {n, d, seed}, then flat row-major
/// little-endian f64 data.
pub fn write_samples_bin(path: &Path, samples: &SampleSet, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SAMPLES_MAGIC)?;
    for v in [samples.len() as u64, samples.d as u64, seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_f64s(&mut w, &samples.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_samples_bin(path: &Path) -> Result<(SampleSet, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SAMPLES_MAGIC {
        return Err(Error::InvalidArgument(format!(
            "{}: not a samples file",
            path.display()
        )));
    }
    let n = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let data = read_f64s(&mut r, n * d)?;
    Ok((SampleSet { d, data }, seed))
}

/// CSV escape per RFC 4180 (quotes around fields containing , " or newline).
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write rows of stringified fields with a mandatory header, CRLF-terminated.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    let head: Vec<String> = header.iter().map(|h| csv_field(h)).collect();
    w.write_all(head.join(",").as_bytes())?;
    w.write_all(b"\r\n")?;
    for row in rows {
        let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        w.write_all(fields.join(",").as_bytes())?;
        w.write_all(b"\r\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Small-instance CSV dump: step 0 holds the clean sample, steps 1..N the
/// trajectory (x and z columns side by side).
pub fn write_dataset_csv(path: &Path, ds: &NoisedDataset) -> Result<()> {
    let d = ds.dim();
    let mut header: Vec<String> = vec!["trajectory".into(), "step".into(), "t".into()];
    for c in 0..d {
        header.push(format!("x{c}"));
    }
    for c in 0..d {
        header.push(format!("z{c}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut rows = Vec::with_capacity(ds.m() * (ds.n_steps() + 1));
    for i in 0..ds.m() {
        let mut row = vec![i.to_string(), "0".to_string(), "0".to_string()];
        row.extend(ds.x0_row(i).iter().map(|v| v.to_string()));
        row.extend(std::iter::repeat_n("0".to_string(), d));
        rows.push(row);
        for j in 0..ds.n_steps() {
            let mut row = vec![
                i.to_string(),
                (j + 1).to_string(),
                ds.schedule().time(j).to_string(),
            ];
            row.extend(ds.state(i, j).iter().map(|v| v.to_string()));
            row.extend(ds.noise(i, j).iter().map(|v| v.to_string()));
            rows.push(row);
        }
    }
    write_csv(path, &header_refs, rows)
}

pub fn write_samples_csv(path: &Path, samples: &SampleSet) -> Result<()> {
    let header: Vec<String> = (0..samples.d).map(|c| format!("x{c}")).collect();
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows = (0..samples.len())
        .map(|i| samples.row(i).iter().map(|v| v.to_string()).collect());
    write_csv(path, &header_refs, rows)
}

pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    write_csv(
        path,
        &["step", "loss", "lr"],
        trace
            .iter()
            .map(|p| vec![p.step.to_string(), p.loss.to_string(), p.lr.to_string()]),
    )
}

/// JSON header of a checkpoint file.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum CheckpointHeader {
    Linear { d: usize, times: Vec<f64> },
    Mlp { widths: Vec<usize>, activation: Activation, horizon: f64, grid: Vec<f64> },
    /// One MLP per grid time, parameter blocks concatenated in grid order.
    MlpPerStep { widths: Vec<usize>, activation: Activation, horizon: f64, grid: Vec<f64> },
}

/// A stored model.
pub enum ModelCheckpoint {
    Linear(LinearScoreModel),
    Mlp(TimeMlp),
    MlpPerStep(crate::models::TimestepModels),
}

impl ModelCheckpoint {
    pub fn as_score_fn(&self) -> &dyn crate::ScoreFn {
        match self {
            ModelCheckpoint::Linear(m) => m,
            ModelCheckpoint::Mlp(m) => m,
            ModelCheckpoint::MlpPerStep(m) => m,
        }
    }

    /// Grid times the stored model is defined on.
    pub fn times(&self) -> Vec<f64> {
        match self {
            ModelCheckpoint::Linear(m) => m.times().to_vec(),
            ModelCheckpoint::Mlp(m) => m.grid().to_vec(),
            ModelCheckpoint::MlpPerStep(m) => m.models()[0].grid().to_vec(),
        }
    }
}

/// Checkpoint layout: magic, u32 JSON-header length, JSON header, then the
/// flat little-endian f64 parameter block.
pub fn write_checkpoint(path: &Path, model: &ModelCheckpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let (header, body): (CheckpointHeader, Vec<f64>) = match model {
        ModelCheckpoint::Linear(m) => {
            let d = m.dim();
            let mut body = Vec::new();
            for j in 0..m.times().len() {
                let (a, b) = m.map(j);
                for r in 0..d {
                    for c in 0..d {
                        body.push(a[(r, c)]);
                    }
                }
                body.extend(b.iter());
            }
            (CheckpointHeader::Linear { d, times: m.times().to_vec() }, body)
        }
        ModelCheckpoint::Mlp(m) => (
            CheckpointHeader::Mlp {
                widths: m.widths().to_vec(),
                activation: m.activation(),
                horizon: m.horizon(),
                grid: m.grid().to_vec(),
            },
            m.params().to_vec(),
        ),
        ModelCheckpoint::MlpPerStep(models) => {
            let first = &models.models()[0];
            let mut body = Vec::new();
            for step in models.models() {
                body.extend_from_slice(step.params());
            }
            (
                CheckpointHeader::MlpPerStep {
                    widths: first.widths().to_vec(),
                    activation: first.activation(),
                    horizon: first.horizon(),
                    grid: first.grid().to_vec(),
                },
                body,
            )
        }
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    write_f64s(&mut w, &body)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::InvalidArgument(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    match header {
        CheckpointHeader::Linear { d, times } => {
            let per_step = d * d + d;
            let body = read_f64s(&mut r, times.len() * per_step)?;
            let mut a = Vec::with_capacity(times.len());
            let mut b = Vec::with_capacity(times.len());
            for j in 0..times.len() {
                let block = &body[j * per_step..(j + 1) * per_step];
                a.push(DMatrix::from_row_slice(d, d, &block[..d * d]));
                b.push(DVector::from_column_slice(&block[d * d..]));
            }
            Ok(ModelCheckpoint::Linear(LinearScoreModel::new(times, a, b)?))
        }
        CheckpointHeader::Mlp { widths, activation, horizon, grid } => {
            let n_params = widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
            let params = read_f64s(&mut r, n_params)?;
            Ok(ModelCheckpoint::Mlp(TimeMlp::from_parts(
                widths, activation, horizon, grid, params,
            )?))
        }
        CheckpointHeader::MlpPerStep { widths, activation, horizon, grid } => {
            let n_params: usize = widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
            let body = read_f64s(&mut r, n_params * grid.len())?;
            let mut models = Vec::with_capacity(grid.len());
            for k in 0..grid.len() {
                models.push(TimeMlp::from_parts(
                    widths.clone(),
                    activation,
                    horizon,
                    grid.clone(),
                    body[k * n_params..(k + 1) * n_params].to_vec(),
                )?);
            }
            Ok(ModelCheckpoint::MlpPerStep(crate::models::TimestepModels::new(
                grid, models,
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{sample_target, TargetSpec};
    use crate::ScoreFn;

    #[test]
    fn dataset_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let target = TargetSpec::gaussian(DMatrix::identity(2, 2)).unwrap();
        let x0 = sample_target(&target, 12, 3).unwrap();
        let schedule = Schedule::new(ScheduleKind::Quadratic, 4, 2.0).unwrap();
        let ds = noise_dataset(x0, 2, schedule, 3, NoiseCoupling::Dependent).unwrap();
        let path = dir.path().join("ds.bin");
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds.x_flat(), back.x_flat());
        assert_eq!(ds.z_flat(), back.z_flat());
        assert_eq!(ds.schedule(), back.schedule());
    }

    #[test]
    fn checkpoint_round_trip_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let lin = LinearScoreModel::new(
            vec![0.5, 1.0],
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]); 2],
            vec![DVector::from_vec(vec![-0.5, 0.25]); 2],
        )
        .unwrap();
        let p = dir.path().join("lin.ckpt");
        write_checkpoint(&p, &ModelCheckpoint::Linear(lin.clone())).unwrap();
        match read_checkpoint(&p).unwrap() {
            ModelCheckpoint::Linear(back) => {
                let x = [0.3, -0.7];
                assert_eq!(lin.eval(1.0, &x).unwrap(), back.eval(1.0, &x).unwrap());
            }
            _ => panic!("wrong kind"),
        }

        let mlp = TimeMlp::new(2, &[5], Activation::Tanh, vec![0.5, 1.0], 1.0, 9, 0).unwrap();
        let p = dir.path().join("mlp.ckpt");
        write_checkpoint(&p, &ModelCheckpoint::Mlp(mlp.clone())).unwrap();
        match read_checkpoint(&p).unwrap() {
            ModelCheckpoint::Mlp(back) => {
                assert_eq!(mlp.params(), back.params());
                let x = [0.1, 0.2];
                assert_eq!(mlp.eval(0.5, &x).unwrap(), back.eval(0.5, &x).unwrap());
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn csv_escaping_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(
            &path,
            &["a", "b"],
            vec![vec!["1.5".to_string(), "x,\"y\"".to_string()]],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a,b\r\n1.5,\"x,\"\"y\"\"\"\r\n");
    }
}
