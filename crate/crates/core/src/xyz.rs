//! Extended-XYZ text format: atom count, a `Lattice="..."` comment line, then
//! `<species> <x> <y> <z>` in Cartesian Å.

use std::io::{BufRead, Write};

use crate::crystal::{CrystalConfiguration, Lattice, Vec3};
use crate::error::{Error, Result};

/// Snap window for fractional coordinates that round-trip to just outside
/// `[0, 1)`.
const WRAP_SNAP: f64 = 1e-9;

fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

pub fn write_xyz<W: Write>(mut w: W, cfg: &CrystalConfiguration) -> Result<()> {
    let l = cfg.lattice();
    let scale = l.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    // Quantize to 12 significant digits of the cell scale, so that the
    // rounding residue of a read-back-and-rewrite cycle never changes the text.
    let unit = 10f64.powi(scale.log10().floor() as i32 - 11);
    let clean = |x: f64| {
        let q = (x / unit).round() * unit;
        if q == 0.0 {
            0.0
        } else {
            q
        }
    };
    writeln!(w, "{}", cfg.n_atoms())?;
    let lat: Vec<String> = l.iter().flatten().map(|x| fmt12(clean(*x))).collect();
    writeln!(
        w,
        "Lattice=\"{}\" Properties=species:S:1:pos:R:3",
        lat.join(" ")
    )?;
    for (i, s) in cfg.species().iter().enumerate() {
        let c = cfg.cartesian(i);
        writeln!(
            w,
            "{} {} {} {}",
            s,
            fmt12(clean(c[0])),
            fmt12(clean(c[1])),
            fmt12(clean(c[2]))
        )?;
    }
    Ok(())
}

pub fn write_xyz_frames<W: Write>(mut w: W, cfgs: &[&CrystalConfiguration]) -> Result<()> {
    for c in cfgs {
        write_xyz(&mut w, c)?;
    }
    Ok(())
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected a finite number, found {tok:?}"),
        })
}

fn parse_lattice(text: &str, line: usize) -> Result<Lattice> {
    let start = text.find("Lattice=\"").ok_or_else(|| Error::Parse {
        line,
        message: "missing Lattice=\"...\"".into(),
    })? + "Lattice=\"".len();
    let end = text[start..].find('"').ok_or_else(|| Error::Parse {
        line,
        message: "unterminated Lattice string".into(),
    })? + start;
    let vals = text[start..end]
        .split_whitespace()
        .map(|t| parse_f64(t, line))
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() != 9 {
        return Err(Error::Parse {
            line,
            message: format!("Lattice needs 9 numbers, found {}", vals.len()),
        });
    }
    Ok([
        [vals[0], vals[1], vals[2]],
        [vals[3], vals[4], vals[5]],
        [vals[6], vals[7], vals[8]],
    ])
}

fn snap_fraction(f: f64) -> f64 {
    if f < 0.0 && f > -WRAP_SNAP {
        0.0
    } else if (1.0..1.0 + WRAP_SNAP).contains(&f) {
        1.0f64.next_down()
    } else {
        f
    }
}

/// Reads every frame in the stream.
pub fn read_xyz_frames<R: BufRead>(r: R) -> Result<Vec<CrystalConfiguration>> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut frames = Vec::new();
    loop {
        let (ln, count) = match lines.next() {
            None => break,
            Some((ln, l)) => (ln, l?),
        };
        if count.trim().is_empty() {
            continue;
        }
        let n: usize = count.trim().parse().map_err(|_| Error::Parse {
            line: ln,
            message: format!("expected an atom count, found {:?}", count.trim()),
        })?;
        let (ln, header) = lines.next().ok_or(Error::Parse {
            line: ln + 1,
            message: "missing lattice line".into(),
        })?;
        let lattice = parse_lattice(&header?, ln)?;
        let mut species = Vec::with_capacity(n);
        let mut cart: Vec<Vec3> = Vec::with_capacity(n);
        for k in 0..n {
            let (ln, text) = lines.next().ok_or(Error::Parse {
                line: ln + k + 1,
                message: format!("expected {n} atom lines, found {k}"),
            })?;
            let text = text?;
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.len() < 4 {
                return Err(Error::Parse {
                    line: ln,
                    message: "atom line needs <species> <x> <y> <z>".into(),
                });
            }
            species.push(toks[0].to_string());
            cart.push([
                parse_f64(toks[1], ln)?,
                parse_f64(toks[2], ln)?,
                parse_f64(toks[3], ln)?,
            ]);
        }
        let probe = CrystalConfiguration::new(lattice, vec![], vec![])?;
        let inv_positions = fractional_of(&probe, &cart);
        let positions = inv_positions
            .into_iter()
            .map(|f| f.map(snap_fraction))
            .collect();
        frames.push(CrystalConfiguration::new(lattice, positions, species)?);
    }
    Ok(frames)
}

pub fn read_xyz<R: BufRead>(r: R) -> Result<CrystalConfiguration> {
    let mut frames = read_xyz_frames(r)?;
    match frames.len() {
        1 => Ok(frames.remove(0)),
        n => Err(Error::Parse {
            line: 1,
            message: format!("expected one frame, found {n}"),
        }),
    }
}

fn fractional_of(cfg: &CrystalConfiguration, cart: &[Vec3]) -> Vec<Vec3> {
    let l = cfg.lattice();
    let v = crate::crystal::signed_volume(l);
    let rc = [
        crate::crystal::cross(&l[1], &l[2]),
        crate::crystal::cross(&l[2], &l[0]),
        crate::crystal::cross(&l[0], &l[1]),
    ];
    cart.iter()
        .map(|c| [0, 1, 2].map(|k| crate::crystal::dot(c, &rc[k]) / v))
        .collect()
}
