//! Target transformations and the input/output field datasets.
//!
//! Matrix `A_w` has entries `amp · exp(j·phase)` with `amp ~ U[0,1)` and
//! `phase ~ U[0,2π)`, drawn entry by entry in column-major order (amplitude
//! first) from the stream `[TAG_TRANSFORM, w]` of the master seed. Inputs
//! are drawn the same way, per element, from `[TAG_DATASET, w, split]`;
//! targets are `o = A_w · i`.

use std::f64::consts::PI;
use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::field::{ComplexMatrix, FovField, C64};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, val: usize, test: usize) -> Result<Self> {
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::Parameter(format!(
                "every split needs at least one sample, got ({train}, {val}, {test})"
            )));
        }
        Ok(Self { train, val, test })
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.val,
            Split::Test => self.test,
        }
    }
}

#[inline]
fn random_phasor(r: &mut impl Rng) -> C64 {
    let amp = rng::uniform(r);
    let phase = 2.0 * PI * rng::uniform(r);
    C64::from_polar(amp, phase)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformSet {
    matrices: Vec<ComplexMatrix>,
    seeds: Vec<u64>,
    master_seed: u64,
}

impl TransformSet {
    pub fn matrices(&self) -> &[ComplexMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, channel: usize) -> &ComplexMatrix {
        &self.matrices[channel]
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

pub fn transform_seed(master_seed: u64, channel: usize) -> u64 {
    rng::derive_seed(master_seed, &[rng::TAG_TRANSFORM, channel as u64])
}

/// `A_w` alone, without generating any other channel.
pub fn gen_transform(channel: usize, n_i: usize, n_o: usize, master_seed: u64) -> ComplexMatrix {
    let mut r = rng::stream(master_seed, &[rng::TAG_TRANSFORM, channel as u64]);
    let data = (0..n_i * n_o).map(|_| random_phasor(&mut r)).collect();
    ComplexMatrix::from_column_major(n_o, n_i, data).expect("shape matches by construction")
}

pub fn gen_transforms(n_w: usize, n_i: usize, n_o: usize, master_seed: u64) -> Result<TransformSet> {
    if n_w == 0 || n_i == 0 || n_o == 0 {
        return Err(Error::Parameter(format!(
            "transform set needs N_w, N_i, N_o ≥ 1, got ({n_w}, {n_i}, {n_o})"
        )));
    }
    Ok(TransformSet {
        matrices: (0..n_w).map(|w| gen_transform(w, n_i, n_o, master_seed)).collect(),
        seeds: (0..n_w).map(|w| transform_seed(master_seed, w)).collect(),
        master_seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub input: FovField,
    pub target: FovField,
}

fn fov_side(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Sizing(format!("{n} pixels do not form a square field of view")));
    }
    Ok(side)
}

/// One (channel, split) stream of pairs.
pub fn gen_split(a: &ComplexMatrix, channel: usize, split: Split, count: usize, master_seed: u64) -> Result<Vec<Pair>> {
    let in_side = fov_side(a.cols())?;
    let out_side = fov_side(a.rows())?;
    let mut r = rng::stream(master_seed, &[rng::TAG_DATASET, channel as u64, split.tag()]);
    (0..count)
        .map(|_| {
            let input: Vec<C64> = (0..a.cols()).map(|_| random_phasor(&mut r)).collect();
            let target = a.apply(&input);
            Ok(Pair {
                input: FovField::new(in_side, input)?,
                target: FovField::new(out_side, target)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ChannelData {
    pub train: Vec<Pair>,
    pub val: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl ChannelData {
    pub fn split(&self, split: Split) -> &[Pair] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    channels: Vec<ChannelData>,
    sizes: SplitSizes,
    master_seed: u64,
}

impl Dataset {
    /// Reassembles a dataset, e.g. from cached splits. Every channel must
    /// have the same split sizes.
    pub fn from_channels(channels: Vec<ChannelData>, master_seed: u64) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::Parameter("dataset needs at least one channel".into()))?;
        let sizes = SplitSizes::new(first.train.len(), first.val.len(), first.test.len())?;
        if channels
            .iter()
            .any(|c| (c.train.len(), c.val.len(), c.test.len()) != (sizes.train, sizes.val, sizes.test))
        {
            return Err(Error::Parameter("channels have different split sizes".into()));
        }
        Ok(Self {
            channels,
            sizes,
            master_seed,
        })
    }

    pub fn channels(&self) -> &[ChannelData] {
        &self.channels
    }

    pub fn channel(&self, w: usize) -> &ChannelData {
        &self.channels[w]
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sizes(&self) -> SplitSizes {
        self.sizes
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
}

pub fn gen_dataset(transforms: &TransformSet, sizes: SplitSizes, master_seed: u64) -> Result<Dataset> {
    let sizes = SplitSizes::new(sizes.train, sizes.val, sizes.test)?;
    let channels = transforms
        .matrices()
        .iter()
        .enumerate()
        .map(|(w, a)| {
            Ok(ChannelData {
                train: gen_split(a, w, Split::Train, sizes.train, master_seed)?,
                val: gen_split(a, w, Split::Validation, sizes.val, master_seed)?,
                test: gen_split(a, w, Split::Test, sizes.test, master_seed)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        channels,
        sizes,
        master_seed,
    })
}

pub fn write_transform(path: impl AsRef<Path>, transforms: &TransformSet, channel: usize) -> Result<()> {
    let a = transforms.matrix(channel);
    let mut c = Container::new("transform");
    c.set("channel", channel)
        .set("master_seed", transforms.master_seed())
        .set("seed", transforms.seeds()[channel])
        .set("rows", a.rows())
        .set("cols", a.cols());
    c.push_complex(a.data());
    c.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<ComplexMatrix> {
    let c = Container::read_from(std::fs::File::open(path)?, "transform")?;
    ComplexMatrix::from_column_major(c.parse("rows")?, c.parse("cols")?, c.complex_payload()?)
}

/// Cache of one (channel, split): inputs followed by targets.
pub fn write_split_cache(
    path: impl AsRef<Path>,
    channel: usize,
    split: Split,
    master_seed: u64,
    pairs: &[Pair],
) -> Result<()> {
    let mut c = Container::new("dataset");
    let (n_i, n_o) = pairs.first().map(|p| (p.input.len(), p.target.len())).unwrap_or((0, 0));
    c.set("channel", channel)
        .set("split", split.name())
        .set("master_seed", master_seed)
        .set("n_i", n_i)
        .set("n_o", n_o)
        .set("count", pairs.len());
    for p in pairs {
        c.push_complex(p.input.values());
    }
    for p in pairs {
        c.push_complex(p.target.values());
    }
    c.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_split_cache(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    let c = Container::read_from(std::fs::File::open(path)?, "dataset")?;
    let (n_i, n_o, count): (usize, usize, usize) = (c.parse("n_i")?, c.parse("n_o")?, c.parse("count")?);
    let values = c.complex_payload()?;
    if values.len() != count * (n_i + n_o) {
        return Err(Error::Format("dataset cache payload does not match its header".into()));
    }
    let (inputs, targets) = values.split_at(count * n_i);
    (0..count)
        .map(|k| {
            Ok(Pair {
                input: FovField::new(fov_side(n_i)?, inputs[k * n_i..(k + 1) * n_i].to_vec())?,
                target: FovField::new(fov_side(n_o)?, targets[k * n_o..(k + 1) * n_o].to_vec())?,
            })
        })
        .collect()
}
