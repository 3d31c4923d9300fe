//! Binary checkpoint format, shared by every model kind.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"LNN1"
//! version u32 (currently 1)
//! kind    u8 (ModelKind tag)
//! flags   u8 (bit 0: softplus diagonal reparameterization)
//! epsilon f64
//! n       u32 (DoF or reduced dimension; input dim for VALUE)
//! m       u32 (actuator count; 0 where not applicable)
//! n_nets  u8
//! per net: n_sizes u32, sizes u32..., activation u8, n_params u64, params f64...
//! LNN kinds only: B matrix, n*m f64 row-major
//! ```
//!
//! Floats are written as raw bit patterns, so a save/load roundtrip is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use super::{BnnModel, ComLnnModel, LnnModel, StateEstimator};
use crate::diff::{Activation, Mlp, ParamVector};
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"LNN1";
const VERSION: u32 = 1;

/// Serialized model kind tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Bnn,
    LnnFd,
    LnnDiag,
    LnnId,
    LnnCom,
    Estimator,
    Value,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Bnn => 0,
            ModelKind::LnnFd => 1,
            ModelKind::LnnDiag => 2,
            ModelKind::LnnId => 3,
            ModelKind::LnnCom => 4,
            ModelKind::Estimator => 5,
            ModelKind::Value => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => ModelKind::Bnn,
            1 => ModelKind::LnnFd,
            2 => ModelKind::LnnDiag,
            3 => ModelKind::LnnId,
            4 => ModelKind::LnnCom,
            5 => ModelKind::Estimator,
            6 => ModelKind::Value,
            t => return Err(CoreError::Format(format!("unknown model kind tag {t}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bnn => "BNN",
            ModelKind::LnnFd => "LNN_FD",
            ModelKind::LnnDiag => "LNN_DIAG",
            ModelKind::LnnId => "LNN_ID",
            ModelKind::LnnCom => "LNN_COM",
            ModelKind::Estimator => "ESTIMATOR",
            ModelKind::Value => "VALUE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "BNN" | "bnn" => ModelKind::Bnn,
            "LNN_FD" | "lnn_fd" => ModelKind::LnnFd,
            "LNN_DIAG" | "lnn_diag" => ModelKind::LnnDiag,
            "LNN_ID" | "lnn_id" => ModelKind::LnnId,
            "LNN_COM" | "lnn_com" => ModelKind::LnnCom,
            "ESTIMATOR" | "estimator" => ModelKind::Estimator,
            "VALUE" | "value" => ModelKind::Value,
            other => return Err(CoreError::Config(format!("unknown model kind '{other}'"))),
        })
    }
}

/// A loaded or to-be-saved model of any kind.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    /// Full-state LNN; `kind` distinguishes the FD/DIAG/ID training lineage.
    Lnn { kind: ModelKind, model: LnnModel },
    Com(ComLnnModel),
    Bnn(BnnModel),
    /// Learned estimator; identity estimators are not serialized.
    Estimator(Mlp),
    Value(Mlp),
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Checkpoint::Lnn { kind, .. } => *kind,
            Checkpoint::Com(_) => ModelKind::LnnCom,
            Checkpoint::Bnn(_) => ModelKind::Bnn,
            Checkpoint::Estimator(_) => ModelKind::Estimator,
            Checkpoint::Value(_) => ModelKind::Value,
        }
    }
}

fn write_net<W: Write>(w: &mut W, net: &Mlp) -> Result<()> {
    let sizes = net.layer_sizes();
    w.write_u32::<LittleEndian>(sizes.len() as u32)?;
    for &s in sizes {
        w.write_u32::<LittleEndian>(s as u32)?;
    }
    w.write_u8(net.activation().tag())?;
    let params = net.params();
    w.write_u64::<LittleEndian>(params.len() as u64)?;
    for &p in params.as_slice() {
        w.write_u64::<LittleEndian>(p.to_bits())?;
    }
    Ok(())
}

fn read_net<R: Read>(r: &mut R) -> Result<Mlp> {
    let n_sizes = r.read_u32::<LittleEndian>()? as usize;
    if n_sizes < 2 || n_sizes > 64 {
        return Err(CoreError::Format(format!(
            "implausible layer count {n_sizes}"
        )));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let activation = Activation::from_tag(r.read_u8()?)?;
    let mut net = Mlp::zeros(&sizes, activation)?;
    let n_params = r.read_u64::<LittleEndian>()? as usize;
    if n_params != net.n_params() {
        return Err(CoreError::Format(format!(
            "parameter count {n_params} does not match sizes {sizes:?}"
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    net.set_params(&ParamVector(params))?;
    Ok(net)
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(ckpt.kind().tag())?;

    match ckpt {
        Checkpoint::Lnn { model, .. } => {
            w.write_u8(u8::from(model.softplus_diag))?;
            w.write_u64::<LittleEndian>(model.epsilon.to_bits())?;
            w.write_u32::<LittleEndian>(model.n as u32)?;
            w.write_u32::<LittleEndian>(model.actuators() as u32)?;
            w.write_u8(3)?;
            write_net(&mut w, &model.y_net)?;
            write_net(&mut w, &model.v_net)?;
            write_net(&mut w, &model.f_net)?;
            for i in 0..model.n {
                for j in 0..model.actuators() {
                    w.write_u64::<LittleEndian>(model.b[(i, j)].to_bits())?;
                }
            }
        }
        Checkpoint::Com(model) => {
            w.write_u8(u8::from(model.softplus_diag))?;
            w.write_u64::<LittleEndian>(model.epsilon.to_bits())?;
            w.write_u32::<LittleEndian>(model.n as u32)?;
            w.write_u32::<LittleEndian>(0)?;
            w.write_u8(3)?;
            write_net(&mut w, &model.y_net)?;
            write_net(&mut w, &model.v_net)?;
            write_net(&mut w, &model.f_net)?;
        }
        Checkpoint::Bnn(model) => {
            w.write_u8(0)?;
            w.write_u64::<LittleEndian>(0f64.to_bits())?;
            w.write_u32::<LittleEndian>(model.n as u32)?;
            w.write_u32::<LittleEndian>(model.m as u32)?;
            w.write_u8(1)?;
            write_net(&mut w, &model.net)?;
        }
        Checkpoint::Estimator(net) => {
            w.write_u8(0)?;
            w.write_u64::<LittleEndian>(0f64.to_bits())?;
            w.write_u32::<LittleEndian>(net.out_dim() as u32)?;
            w.write_u32::<LittleEndian>(0)?;
            w.write_u8(1)?;
            write_net(&mut w, net)?;
        }
        Checkpoint::Value(net) => {
            w.write_u8(0)?;
            w.write_u64::<LittleEndian>(0f64.to_bits())?;
            w.write_u32::<LittleEndian>(net.in_dim() as u32)?;
            w.write_u32::<LittleEndian>(0)?;
            w.write_u8(1)?;
            write_net(&mut w, net)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(CoreError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kind = ModelKind::from_tag(r.read_u8()?)?;
    let flags = r.read_u8()?;
    let softplus_diag = flags & 1 != 0;
    let epsilon = f64::from_bits(r.read_u64::<LittleEndian>()?);
    let n = r.read_u32::<LittleEndian>()? as usize;
    let m = r.read_u32::<LittleEndian>()? as usize;
    let n_nets = r.read_u8()? as usize;

    let expect_nets = |want: usize| -> Result<()> {
        if n_nets != want {
            return Err(CoreError::Format(format!(
                "{} checkpoint must carry {want} nets, found {n_nets}",
                kind.name()
            )));
        }
        Ok(())
    };

    match kind {
        ModelKind::LnnFd | ModelKind::LnnDiag | ModelKind::LnnId => {
            expect_nets(3)?;
            let y_net = read_net(&mut r)?;
            let v_net = read_net(&mut r)?;
            let f_net = read_net(&mut r)?;
            let mut b = DMatrix::zeros(n, m);
            for i in 0..n {
                for j in 0..m {
                    b[(i, j)] = f64::from_bits(r.read_u64::<LittleEndian>()?);
                }
            }
            Ok(Checkpoint::Lnn {
                kind,
                model: LnnModel {
                    y_net,
                    v_net,
                    f_net,
                    epsilon,
                    n,
                    b,
                    softplus_diag,
                },
            })
        }
        ModelKind::LnnCom => {
            expect_nets(3)?;
            let y_net = read_net(&mut r)?;
            let v_net = read_net(&mut r)?;
            let f_net = read_net(&mut r)?;
            Ok(Checkpoint::Com(ComLnnModel {
                y_net,
                v_net,
                f_net,
                epsilon,
                n,
                softplus_diag,
            }))
        }
        ModelKind::Bnn => {
            expect_nets(1)?;
            let net = read_net(&mut r)?;
            Ok(Checkpoint::Bnn(BnnModel { net, n, m }))
        }
        ModelKind::Estimator => {
            expect_nets(1)?;
            Ok(Checkpoint::Estimator(read_net(&mut r)?))
        }
        ModelKind::Value => {
            expect_nets(1)?;
            Ok(Checkpoint::Value(read_net(&mut r)?))
        }
    }
}

/// Convenience: load and require a specific kind.
pub fn load_expecting<P: AsRef<Path>>(path: P, want: ModelKind) -> Result<Checkpoint> {
    let path = path.as_ref();
    let ckpt = load_checkpoint(path)?;
    if ckpt.kind() != want {
        return Err(CoreError::Config(format!(
            "checkpoint {} holds a {} model, expected {}",
            path.display(),
            ckpt.kind().name(),
            want.name()
        )));
    }
    Ok(ckpt)
}

#[allow(unused)]
fn _estimator_roundtrip_uses(est: &StateEstimator) {
    // StateEstimator itself is not serialized; only its learned net is.
    let _ = est;
}
