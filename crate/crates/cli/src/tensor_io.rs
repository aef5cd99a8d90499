//! Flat little-endian tensor buffers described by text records.
//!
//! Each record is one line `tensor<TAB>name<TAB>dtype<TAB>d0,d1,...<TAB>byte_offset`.
//! A scalar has the shape field `-`.

use s2o_core::{DType, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Record {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.numel() * self.dtype.size_of()
    }

    pub fn to_line(&self) -> String {
        let shape = if self.shape.is_empty() {
            String::from("-")
        } else {
            self.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        };
        format!("tensor\t{}\t{}\t{}\t{}", self.name, self.dtype, shape, self.offset)
    }

    pub fn parse(line: &str) -> Result<Record, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 || f[0] != "tensor" {
            return Err(format!("malformed tensor record `{line}`"));
        }
        let dtype = DType::parse(f[2]).ok_or_else(|| format!("unknown dtype `{}`", f[2]))?;
        let shape = if f[3] == "-" {
            Vec::new()
        } else {
            f[3].split(',')
                .map(|d| d.parse::<usize>().map_err(|_| format!("bad shape `{}`", f[3])))
                .collect::<Result<_, _>>()?
        };
        let offset = f[4].parse().map_err(|_| format!("bad offset `{}`", f[4]))?;
        Ok(Record { name: f[1].to_string(), dtype, shape, offset })
    }
}

/// Appends the tensors to `buf` in order and returns their records.
pub fn encode<T: Real>(tensors: &[(String, &Tensor<T>)], buf: &mut Vec<u8>) -> Vec<Record> {
    tensors
        .iter()
        .map(|(name, t)| {
            let offset = buf.len();
            for &x in t.data() {
                match T::DTYPE {
                    DType::F64 => buf.extend_from_slice(&x.as_f64().to_le_bytes()),
                    DType::F32 => buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
                }
            }
            Record { name: name.clone(), dtype: T::DTYPE, shape: t.shape().to_vec(), offset }
        })
        .collect()
}

pub fn decode<T: Real>(rec: &Record, buf: &[u8]) -> Result<Tensor<T>, String> {
    if rec.dtype != T::DTYPE {
        return Err(format!("tensor `{}` is {}, expected {}", rec.name, rec.dtype, T::DTYPE));
    }
    let bytes = buf
        .get(rec.offset..rec.offset + rec.byte_len())
        .ok_or_else(|| format!("tensor `{}` runs past the end of the buffer", rec.name))?;
    let data: Vec<T> = match rec.dtype {
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
    };
    let shape = if rec.shape.is_empty() { vec![1] } else { rec.shape.clone() };
    Tensor::new(shape, data).map_err(|e| e.to_string())
}
