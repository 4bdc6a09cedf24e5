//! Extended XYZ reader and canonical writer.
//!
//! Each frame is an atom-count line, a comment line of `key=value` pairs,
//! then one row per atom laid out by the `Properties` key. `Lattice` holds
//! the three cell vectors as nine numbers; `pbc` defaults to all periodic
//! when a lattice is present. `energy`, `stress` and `weight` map onto
//! [`LabeledFrame`] fields and every other key lands in its metadata map.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead};
use std::path::Path;

use super::elements::{atomic_number, symbol};
use super::{Column, DataError, LabeledFrame};
use crate::geom::{AtomicSystem, Mat3, Vec3};

/// Streaming iterator over the frames of an extended XYZ stream.
pub struct ExtxyzReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    require_energy: bool,
    failed: bool,
}

impl<R: BufRead> ExtxyzReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            require_energy: true,
            failed: false,
        }
    }

    /// Accept frames without an `energy` key (energy reads as 0).
    pub fn allow_unlabeled(mut self) -> Self {
        self.require_energy = false;
        self
    }

    fn next_line(&mut self) -> Result<Option<String>, DataError> {
        match self.lines.next() {
            None => Ok(None),
            Some(Ok(l)) => {
                self.line_no += 1;
                Ok(Some(l))
            }
            Some(Err(e)) => Err(DataError::Io(format!("line {}: {e}", self.line_no + 1))),
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> DataError {
        DataError::Parse {
            line,
            message: message.into(),
        }
    }

    fn read_frame(&mut self) -> Result<Option<LabeledFrame>, DataError> {
        let count_line = loop {
            match self.next_line()? {
                None => return Ok(None),
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => break l,
            }
        };
        let count_at = self.line_no;
        let n: usize = count_line
            .trim()
            .parse()
            .map_err(|_| self.err(count_at, format!("invalid atom count `{}`", count_line.trim())))?;
        if n == 0 {
            return Err(self.err(count_at, "atom count must be positive"));
        }
        let comment = self
            .next_line()?
            .ok_or_else(|| self.err(count_at + 1, "missing comment line"))?;
        let header_at = self.line_no;
        let header = Header::parse(&comment, self.require_energy).map_err(|m| self.err(header_at, m))?;

        let mut species = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut forces = Vec::with_capacity(n);
        let mut extra: Vec<Column> = header
            .columns
            .iter()
            .filter(|c| c.role == Role::Extra)
            .map(|c| Column {
                name: c.name.clone(),
                kind: c.kind,
                width: c.width,
                values: Vec::with_capacity(n * c.width),
            })
            .collect();
        let width: usize = header.columns.iter().map(|c| c.width).sum();

        for row in 0..n {
            let Some(line) = self.next_line()? else {
                return Err(self.err(
                    self.line_no + 1,
                    format!("frame declares {n} atoms but atom row {} is missing", row + 1),
                ));
            };
            let at = self.line_no;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != width {
                return Err(self.err(at, format!("expected {width} columns, found {}", tokens.len())));
            }
            let mut rest = &tokens[..];
            let mut extra_idx = 0;
            for col in &header.columns {
                let (vals, tail) = rest.split_at(col.width);
                rest = tail;
                match col.role {
                    Role::Species => {
                        let z = atomic_number(vals[0])
                            .ok_or_else(|| self.err(at, format!("unknown species `{}`", vals[0])))?;
                        species.push(z);
                    }
                    Role::Positions => positions.push(self.vec3(vals, at)?),
                    Role::Forces => forces.push(self.vec3(vals, at)?),
                    Role::Extra => {
                        extra[extra_idx].values.extend(vals.iter().map(|s| s.to_string()));
                        extra_idx += 1;
                    }
                }
            }
        }

        let has_forces = header.columns.iter().any(|c| c.role == Role::Forces);
        if !has_forces {
            forces = vec![[0.0; 3]; n];
        }
        let system = AtomicSystem::new(species, positions, header.cell, header.pbc)
            .map_err(|e| self.err(header_at, e.to_string()))?;
        let frame = LabeledFrame {
            system,
            energy: header.energy.unwrap_or(0.0),
            forces,
            has_forces,
            stress: header.stress,
            weight: header.weight,
            metadata: header.metadata,
            extra_columns: extra,
        };
        frame.validate().map_err(|e| self.err(header_at, e.to_string()))?;
        Ok(Some(frame))
    }

    fn vec3(&self, vals: &[&str], line: usize) -> Result<Vec3, DataError> {
        let mut out = [0.0; 3];
        for (o, v) in out.iter_mut().zip(vals) {
            *o = parse_float(v).ok_or_else(|| self.err(line, format!("invalid number `{v}`")))?;
        }
        Ok(out)
    }
}

impl<R: BufRead> Iterator for ExtxyzReader<R> {
    type Item = Result<LabeledFrame, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let r = self.read_frame().transpose();
        if matches!(r, Some(Err(_))) {
            self.failed = true;
        }
        r
    }
}

/// Parse every frame from a reader.
pub fn parse_extxyz<R: BufRead>(reader: R) -> Result<Vec<LabeledFrame>, DataError> {
    ExtxyzReader::new(reader).collect()
}

pub fn parse_extxyz_str(text: &str) -> Result<Vec<LabeledFrame>, DataError> {
    parse_extxyz(text.as_bytes())
}

pub fn read_extxyz(path: &Path) -> Result<Vec<LabeledFrame>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_extxyz(io::BufReader::new(file))
}

/// Canonical text of one frame: fixed key order, shortest round-trip floats.
pub fn format_frame(frame: &LabeledFrame) -> String {
    let sys = &frame.system;
    let mut out = String::new();
    let _ = writeln!(out, "{}", sys.len());
    let mut keys = Vec::new();
    if let Some(cell) = &sys.cell {
        keys.push(format!("Lattice=\"{}\"", join(cell.iter().flatten())));
    }
    let mut props = String::from("species:S:1:pos:R:3");
    if frame.has_forces {
        props.push_str(":forces:R:3");
    }
    for c in &frame.extra_columns {
        let _ = write!(props, ":{}:{}:{}", c.name, c.kind, c.width);
    }
    keys.push(format!("Properties={props}"));
    keys.push(format!("energy={}", frame.energy));
    if let Some(s) = &frame.stress {
        keys.push(format!("stress=\"{}\"", join(s.iter().flatten())));
    }
    if frame.weight != 1.0 {
        keys.push(format!("weight={}", frame.weight));
    }
    let pbc: Vec<&str> = sys.pbc.iter().map(|&p| if p { "T" } else { "F" }).collect();
    keys.push(format!("pbc=\"{}\"", pbc.join(" ")));
    for (k, v) in &frame.metadata {
        keys.push(format!("{k}={}", quote(v)));
    }
    let _ = writeln!(out, "{}", keys.join(" "));
    for a in 0..sys.len() {
        let z = sys.species[a];
        out.push_str(symbol(z).unwrap_or("X"));
        for v in sys.positions[a] {
            let _ = write!(out, " {v}");
        }
        if frame.has_forces {
            for v in frame.forces[a] {
                let _ = write!(out, " {v}");
            }
        }
        for c in &frame.extra_columns {
            for v in &c.values[a * c.width..(a + 1) * c.width] {
                let _ = write!(out, " {v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn to_extxyz_string(frames: &[LabeledFrame]) -> String {
    frames.iter().map(format_frame).collect()
}

pub fn write_extxyz<W: io::Write>(mut w: W, frames: &[LabeledFrame]) -> io::Result<()> {
    for f in frames {
        w.write_all(format_frame(f).as_bytes())?;
    }
    Ok(())
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn quote(v: &str) -> String {
    if !v.is_empty() && !v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=' || c == '\\') {
        return v.to_string();
    }
    let mut s = String::from("\"");
    for c in v.chars() {
        if c == '"' || c == '\\' {
            s.push('\\');
        }
        s.push(c);
    }
    s.push('"');
    s
}

fn parse_float(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "T" | "t" | "True" | "true" | "TRUE" | "1" => Some(true),
        "F" | "f" | "False" | "false" | "FALSE" | "0" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Species,
    Positions,
    Forces,
    Extra,
}

struct ColumnSpec {
    name: String,
    kind: char,
    width: usize,
    role: Role,
}

struct Header {
    cell: Option<Mat3>,
    pbc: [bool; 3],
    columns: Vec<ColumnSpec>,
    energy: Option<f64>,
    stress: Option<Mat3>,
    weight: f64,
    metadata: BTreeMap<String, String>,
}

impl Header {
    fn parse(line: &str, require_energy: bool) -> Result<Self, String> {
        let mut cell = None;
        let mut pbc = None;
        let mut columns = None;
        let mut energy = None;
        let mut stress = None;
        let mut weight = 1.0;
        let mut metadata = BTreeMap::new();
        for (key, value) in key_values(line)? {
            match key.to_ascii_lowercase().as_str() {
                "lattice" => cell = Some(matrix(&value, "Lattice")?),
                "pbc" => {
                    let flags: Vec<bool> = value
                        .split_whitespace()
                        .map(|t| parse_bool(t).ok_or_else(|| format!("invalid pbc flag `{t}`")))
                        .collect::<Result<_, _>>()?;
                    let flags: [bool; 3] = flags
                        .try_into()
                        .map_err(|f: Vec<bool>| format!("pbc needs 3 flags, found {}", f.len()))?;
                    pbc = Some(flags);
                }
                "properties" => columns = Some(properties(&value)?),
                "energy" => {
                    energy = Some(parse_float(&value).ok_or_else(|| format!("invalid energy `{value}`"))?)
                }
                "stress" => stress = Some(stress_tensor(&value)?),
                "weight" => {
                    weight = parse_float(&value)
                        .filter(|w| *w >= 0.0)
                        .ok_or_else(|| format!("invalid weight `{value}`"))?
                }
                _ => {
                    metadata.insert(key, value);
                }
            }
        }
        if require_energy && energy.is_none() {
            return Err("missing energy key".into());
        }
        let columns = columns.unwrap_or_else(|| properties("species:S:1:pos:R:3").expect("default"));
        let pbc = pbc.unwrap_or([cell.is_some(); 3]);
        let cell = match (cell, pbc.iter().any(|&p| p)) {
            (Some(_), false) => None,
            (c, _) => c,
        };
        Ok(Self {
            cell,
            pbc,
            columns,
            energy,
            stress,
            weight,
            metadata,
        })
    }
}

fn key_values(line: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        if chars.peek().is_none() {
            return Ok(out);
        }
        let mut key = String::new();
        while let Some(c) = chars.next_if(|c| !c.is_whitespace() && *c != '=') {
            key.push(c);
        }
        if chars.next_if_eq(&'=').is_none() {
            out.push((key, "T".into()));
            continue;
        }
        let mut value = String::new();
        if chars.next_if_eq(&'"').is_some() {
            loop {
                match chars.next() {
                    None => return Err(format!("unterminated quote in value of `{key}`")),
                    Some('"') => break,
                    Some('\\') => value.extend(chars.next()),
                    Some(c) => value.push(c),
                }
            }
        } else {
            while let Some(c) = chars.next_if(|c| !c.is_whitespace()) {
                value.push(c);
            }
        }
        if key.is_empty() {
            return Err("empty key before `=`".into());
        }
        out.push((key, value));
    }
}

fn numbers(value: &str, what: &str) -> Result<Vec<f64>, String> {
    value
        .split_whitespace()
        .map(|t| parse_float(t).ok_or_else(|| format!("invalid number `{t}` in {what}")))
        .collect()
}

fn matrix(value: &str, what: &str) -> Result<Mat3, String> {
    let v = numbers(value, what)?;
    if v.len() != 9 {
        return Err(format!("{what} needs 9 numbers, found {}", v.len()));
    }
    Ok(std::array::from_fn(|r| std::array::from_fn(|c| v[3 * r + c])))
}

/// Full 3x3 or Voigt order `xx yy zz yz xz xy`.
fn stress_tensor(value: &str) -> Result<Mat3, String> {
    let v = numbers(value, "stress")?;
    match v.len() {
        9 => matrix(value, "stress"),
        6 => Ok([[v[0], v[5], v[4]], [v[5], v[1], v[3]], [v[4], v[3], v[2]]]),
        n => Err(format!("stress needs 9 or 6 numbers, found {n}")),
    }
}

fn properties(value: &str) -> Result<Vec<ColumnSpec>, String> {
    let fields: Vec<&str> = value.split(':').collect();
    if fields.len() % 3 != 0 {
        return Err("Properties must be name:type:count triples".into());
    }
    let mut cols = Vec::new();
    for f in fields.chunks_exact(3) {
        let kind = match f[1] {
            "S" | "R" | "I" | "L" => f[1].chars().next().expect("one char"),
            t => return Err(format!("unknown property type `{t}`")),
        };
        let width: usize = f[2]
            .parse()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| format!("invalid property count `{}`", f[2]))?;
        let role = match (f[0].to_ascii_lowercase().as_str(), kind, width) {
            ("species", 'S', 1) => Role::Species,
            ("pos", 'R', 3) => Role::Positions,
            ("forces" | "force", 'R', 3) => Role::Forces,
            ("species" | "pos" | "forces" | "force", _, _) => {
                return Err(format!("property `{}` has unexpected type {}:{}", f[0], f[1], f[2]))
            }
            _ => Role::Extra,
        };
        if role != Role::Extra && cols.iter().any(|c: &ColumnSpec| c.role == role) {
            return Err(format!("duplicate property `{}`", f[0]));
        }
        cols.push(ColumnSpec {
            name: f[0].to_string(),
            kind,
            width,
            role,
        });
    }
    for (role, name) in [(Role::Species, "species"), (Role::Positions, "pos")] {
        if !cols.iter().any(|c| c.role == role) {
            return Err(format!("Properties lacks `{name}`"));
        }
    }
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_frame() {
        let frames = parse_extxyz_str("1\nenergy=-1.0\nH 0 0 0\n").unwrap();
        assert_eq!(frames.len(), 1);
        let f = &frames[0];
        assert_eq!(f.energy, -1.0);
        assert!(!f.has_forces);
        assert_eq!(f.forces, vec![[0.0; 3]]);
        assert!(f.system.cell.is_none());
        assert_eq!(f.system.species, vec![1]);
    }

    #[test]
    fn lattice_forces_and_metadata() {
        let text = "2\nLattice=\"4 0 0 0 4 0 0 0 4\" Properties=species:S:1:pos:R:3:forces:R:3 \
                    energy=-3.5 config_type=bulk note=\"two words\" free\n\
                    Ar 0 0 0 0.1 0 0\n18 2 2 2 -0.1 0 0\n";
        let frames = parse_extxyz_str(text).unwrap();
        let f = &frames[0];
        assert_eq!(f.system.cell.unwrap()[1], [0.0, 4.0, 0.0]);
        assert_eq!(f.system.pbc, [true; 3]);
        assert!(f.has_forces);
        assert_eq!(f.forces[1], [-0.1, 0.0, 0.0]);
        assert_eq!(f.system.species, vec![18, 18]);
        assert_eq!(f.metadata["config_type"], "bulk");
        assert_eq!(f.metadata["note"], "two words");
        assert_eq!(f.metadata["free"], "T");
        let again = parse_extxyz_str(&format_frame(f)).unwrap();
        assert_eq!(&again[0], f);
    }

    #[test]
    fn partial_pbc_and_voigt_stress() {
        let text = "1\nLattice=\"3 0 0 0 3 0 0 0 9\" pbc=\"T T F\" energy=0 stress=\"1 2 3 4 5 6\"\nC 0 0 0\n";
        let f = &parse_extxyz_str(text).unwrap()[0];
        assert_eq!(f.system.pbc, [true, true, false]);
        let s = f.stress.unwrap();
        assert_eq!(s[0], [1.0, 6.0, 5.0]);
        assert_eq!(s[1][2], 4.0);
    }

    #[test]
    fn extra_columns_survive() {
        let text = "2\nProperties=species:S:1:pos:R:3:tag:I:1:m:R:2 energy=0\nO 0 0 0 7 1.5 2\nH 1 0 0 8 3 4\n";
        let frames = parse_extxyz_str(text).unwrap();
        let c = &frames[0].extra_columns;
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].values, vec!["7", "8"]);
        assert_eq!(c[1].values, vec!["1.5", "2", "3", "4"]);
        let out = to_extxyz_string(&frames);
        assert_eq!(to_extxyz_string(&parse_extxyz_str(&out).unwrap()), out);
    }

    #[test]
    fn missing_row_names_line() {
        let err = parse_extxyz_str("3\nenergy=0\nH 0 0 0\nH 1 0 0\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, DataError::Parse { line: 5, .. }), "{msg}");
        assert!(msg.contains("atom row 3"), "{msg}");
    }

    #[test]
    fn structured_errors() {
        let cases = [
            ("1\nenergy=0\nH 0 0\n", 3, "columns"),
            ("1\nenergy=0\nH 0 x 0\n", 3, "invalid number"),
            ("1\nLattice=\"1 0 0 0 1 0 0 0\" energy=0\nH 0 0 0\n", 2, "9 numbers"),
            ("1\nenergy=0\nH 0 0 0\nx\nenergy=0\n", 4, "atom count"),
            ("1\nenergy=abc\nH 0 0 0\n", 2, "energy"),
            ("1\nfoo=bar\nH 0 0 0\n", 2, "missing energy"),
            ("1\nenergy=0\nQq 0 0 0\n", 3, "species"),
            ("1\nenergy=0 tag=\"open\nH 0 0 0\n", 2, "quote"),
        ];
        for (text, line, needle) in cases {
            match parse_extxyz_str(text) {
                Err(DataError::Parse { line: l, message }) => {
                    assert_eq!(l, line, "{text:?}: {message}");
                    assert!(message.contains(needle), "{text:?}: {message}");
                }
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn unlabeled_structures() {
        let frames: Vec<_> = ExtxyzReader::new("1\n\nHe 0 0 0\n".as_bytes())
            .allow_unlabeled()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(frames[0].energy, 0.0);
    }

    #[test]
    fn metadata_quoting_roundtrip() {
        let mut f = parse_extxyz_str("1\nenergy=0.25\nH 0 0 0\n").unwrap().remove(0);
        f.metadata.insert("q".into(), "say \"hi\" = ok".into());
        f.metadata.insert("empty".into(), String::new());
        let text = format_frame(&f);
        let back = parse_extxyz_str(&text).unwrap().remove(0);
        assert_eq!(back, f);
        assert_eq!(format_frame(&back), text);
    }
}
