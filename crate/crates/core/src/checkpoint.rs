//! Checkpoint files: the full model description in the header, then the
//! `K · layer_side²` latents as little-endian `f64`, layer by layer,
//! row-major within each layer. Reading back reproduces the model bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::materials::{DispersionNode, Material};
use crate::propagation::Boundary;
use crate::stack::{BitDepth, DiffractiveModel, StackGeometry};

const KIND: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DiffractiveModel,
    /// Last completed epoch (0-based); `None` for an untrained model.
    pub epoch: Option<usize>,
}

pub fn write(mut w: impl Write, model: &DiffractiveModel, epoch: Option<usize>) -> Result<()> {
    let g = model.geometry();
    let mut c = Container::new(KIND);
    c.set("layers", g.layers)
        .set("layer_side", g.layer_side)
        .set("fov_side", g.fov_side)
        .set("grid_side", g.grid_side)
        .set("distance", g.distance)
        .set(
            "boundary",
            match g.boundary {
                Boundary::ZeroPadded => "zero-padded",
                Boundary::Periodic => "periodic",
            },
        );
    for wl in &g.channels {
        c.set("channel", wl);
    }
    match model.material() {
        Material::Constant { n, kappa } => {
            c.set("material", format!("constant {n} {kappa}"));
        }
        Material::Tabulated { nodes } => {
            c.set("material", "table");
            for node in nodes {
                c.set(
                    "material_node",
                    format!("{} {} {}", node.wavelength, node.n, node.kappa),
                );
            }
        }
    }
    c.set("bit_depth", model.bit_depth())
        .set("seed", model.seed())
        .set("epoch", epoch.map_or_else(|| "none".to_string(), |e| e.to_string()));
    c.payload = model.latents().iter().flatten().copied().collect();
    c.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn parse_floats(raw: &str) -> Result<Vec<f64>> {
    raw.split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Format(format!("bad number {s:?} in checkpoint header")))
        })
        .collect()
}

pub fn read(r: impl Read) -> Result<Checkpoint> {
    let c = Container::read_from(r, KIND)?;
    let channels = c
        .get_all("channel")
        .map(|v| parse_floats(v).map(|x| x[0]))
        .collect::<Result<Vec<_>>>()?;
    let boundary = match c.get("boundary")? {
        "zero-padded" => Boundary::ZeroPadded,
        "periodic" => Boundary::Periodic,
        other => return Err(Error::Format(format!("unknown boundary {other:?}"))),
    };
    let geometry = StackGeometry {
        layers: c.parse("layers")?,
        layer_side: c.parse("layer_side")?,
        fov_side: c.parse("fov_side")?,
        grid_side: c.parse("grid_side")?,
        distance: c.parse("distance")?,
        channels,
        boundary,
    };
    geometry
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint geometry: {e}")))?;

    let material_desc = c.get("material")?;
    let material = if material_desc == "table" {
        let nodes = c
            .get_all("material_node")
            .map(|v| {
                let x = parse_floats(v)?;
                match x.as_slice() {
                    [wavelength, n, kappa] => Ok(DispersionNode {
                        wavelength: *wavelength,
                        n: *n,
                        kappa: *kappa,
                    }),
                    _ => Err(Error::Format(format!("bad material node {v:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Material::tabulated(nodes)?
    } else if let Some(rest) = material_desc.strip_prefix("constant ") {
        match parse_floats(rest)?.as_slice() {
            [n, kappa] => Material::constant(*n, *kappa)?,
            _ => return Err(Error::Format(format!("bad material {material_desc:?}"))),
        }
    } else {
        return Err(Error::Format(format!("unknown material {material_desc:?}")));
    };

    let bit_depth: BitDepth = c.get("bit_depth")?.parse()?;
    let seed: u64 = c.parse("seed")?;
    let epoch = match c.get("epoch")? {
        "none" => None,
        _ => Some(c.parse("epoch")?),
    };
    let per_layer = geometry.neurons_per_layer();
    if c.payload.len() != geometry.layers * per_layer {
        return Err(Error::Format(format!(
            "checkpoint holds {} latents, geometry needs {}",
            c.payload.len(),
            geometry.layers * per_layer
        )));
    }
    let latents = c.payload.chunks_exact(per_layer).map(<[f64]>::to_vec).collect();
    let model = DiffractiveModel::from_latents(geometry, material, bit_depth, seed, latents)?;
    Ok(Checkpoint { model, epoch })
}

pub fn save(path: impl AsRef<Path>, model: &DiffractiveModel, epoch: Option<usize>) -> Result<()> {
    let path = path.as_ref();
    // write-then-rename so a crash never leaves a truncated checkpoint
    let tmp = path.with_extension("tmp");
    write(std::io::BufWriter::new(std::fs::File::create(&tmp)?), model, epoch)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::default_channels;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = StackGeometry::new(3, 10, 2, default_channels(3)).unwrap();
        let m = DiffractiveModel::random(g, Material::dispersion_free(), BitDepth::Bits(8), 77).unwrap();
        let mut buf = Vec::new();
        write(&mut buf, &m, Some(12)).unwrap();
        let back = read(buf.as_slice()).unwrap();
        assert_eq!(back.epoch, Some(12));
        assert_eq!(back.model, m);
        let bits = |m: &DiffractiveModel| m.latents().iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.model), bits(&m));
    }

    #[test]
    fn tabulated_material_survives() {
        let table = Material::parse_table("0.9 1.7 0.01\n1.1 1.65 0.03\n").unwrap();
        let g = StackGeometry::new(1, 8, 1, vec![1.0 / 3.0 + 0.7])
            .unwrap()
            .with_boundary(Boundary::Periodic);
        let m = DiffractiveModel::random(g, table, BitDepth::Continuous, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &m, None).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.epoch, None);
    }

    #[test]
    fn rejects_short_payload() {
        let g = StackGeometry::new(1, 4, 1, vec![1.0]).unwrap();
        let m = DiffractiveModel::random(g, Material::dispersion_free(), BitDepth::Continuous, 1).unwrap();
        let mut buf = Vec::new();
        write(&mut buf, &m, None).unwrap();
        buf.truncate(buf.len() - 8);
        assert!(matches!(read(buf.as_slice()), Err(Error::Format(_))));
    }
}
