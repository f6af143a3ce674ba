//! `FDNS1` text dumps of space-time fields.
//!
//! ```text
//! FDNS1 <torus|free> <d> <components> <n> <M> <T> [<lo> <hi>]
//! t,x1,..,xd,v1,..,vc
//! <one row per time node and grid node>
//! ```
//!
//! Rows run over time nodes, then grid nodes in flat order. Numbers carry 17
//! significant digits, so a dump reads back bit for bit.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use fdns_core::fields::{DomainDescriptor, DomainKind, Grid, SpaceTimeField};

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_field<W: Write>(field: &SpaceTimeField, mut w: W) -> io::Result<()> {
    let dom = field.domain();
    let d = dom.dim;
    let c = field.components;
    write!(
        w,
        "FDNS1 {} {d} {c} {} {} {:.16e}",
        dom.kind.name(),
        field.grid.n,
        field.steps(),
        field.horizon()
    )?;
    if dom.kind == DomainKind::FreeSpace {
        write!(w, " {:.16e} {:.16e}", dom.lo, dom.hi)?;
    }
    writeln!(w)?;
    let mut header = String::from("t");
    for a in 1..=d {
        write!(header, ",x{a}").unwrap();
    }
    for j in 1..=c {
        write!(header, ",v{j}").unwrap();
    }
    writeln!(w, "{header}")?;
    let coords: Vec<Vec<f64>> = (0..field.nodes()).map(|i| field.grid.node_coords(i)).collect();
    let mut line = String::new();
    for (m, &t) in field.times.iter().enumerate() {
        for (i, x) in coords.iter().enumerate() {
            line.clear();
            write!(line, "{t:.16e}").unwrap();
            for v in x.iter().chain(field.value(m, i)) {
                write!(line, ",{v:.16e}").unwrap();
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn read_field<R: BufRead>(r: R) -> io::Result<SpaceTimeField> {
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| bad("empty dump"))??;
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() < 7 || parts[0] != "FDNS1" {
        return Err(bad(format!("not an FDNS1 header: `{head}`")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}` in header")));
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer `{s}` in header")));
    let (d, c, n, steps, horizon) = (int(parts[2])?, int(parts[3])?, int(parts[4])?, int(parts[5])?, num(parts[6])?);
    let domain = match (parts[1], parts.len()) {
        ("torus", 7) => DomainDescriptor::torus(d),
        ("free", 9) => DomainDescriptor::free_space(d, num(parts[7])?, num(parts[8])?),
        _ => return Err(bad(format!("bad domain in header `{head}`"))),
    };
    let grid = Grid::new(domain, n).map_err(|e| bad(e.to_string()))?;
    let mut field = SpaceTimeField::zeros(grid, horizon, steps, c).map_err(|e| bad(e.to_string()))?;
    lines.next().ok_or_else(|| bad("missing column header"))??;
    let nodes = grid.nodes();
    let mut count = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if count == field.times.len() * nodes {
            return Err(bad("more rows than the header announces"));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 1 + d + c {
            return Err(bad(format!("row {} has {} columns, expected {}", count + 1, cols.len(), 1 + d + c)));
        }
        let (m, i) = (count / nodes, count % nodes);
        for (j, s) in cols[1 + d..].iter().enumerate() {
            field.value_mut(m, i)[j] = num(s.trim())?;
        }
        count += 1;
    }
    if count != field.times.len() * nodes {
        return Err(bad(format!("expected {} rows, found {count}", field.times.len() * nodes)));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let grid = Grid::new(DomainDescriptor::torus(2), 4).unwrap();
        let f = SpaceTimeField::from_fn(grid, 0.3, 3, 2, |t, x, o| {
            o[0] = (t + x[0]).sin() / 3.0;
            o[1] = 1e-300 * x[1] - t;
        })
        .unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("FDNS1 torus 2 2 4 3 "));
        assert_eq!(text.lines().nth(1), Some("t,x1,x2,v1,v2"));
        assert_eq!(read_field(&buf[..]).unwrap(), f);
    }

    #[test]
    fn free_space_header_carries_the_box() {
        let grid = Grid::new(DomainDescriptor::free_space(1, -2.0, 3.0), 5).unwrap();
        let f = SpaceTimeField::from_fn(grid, 1.0, 2, 1, |t, x, o| o[0] = t * x[0]).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(read_field(&buf[..]).unwrap(), f);
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let grid = Grid::new(DomainDescriptor::torus(1), 4).unwrap();
        let f = SpaceTimeField::zeros(grid, 1.0, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(read_field(cut.as_bytes()).is_err());
        assert!(read_field("FDNS2 torus".as_bytes()).is_err());
    }
}
