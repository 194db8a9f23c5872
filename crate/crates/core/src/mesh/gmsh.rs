//! Reader for the ASCII MSH 2.2 subset: `$MeshFormat`, `$PhysicalNames`,
//! `$Nodes` and `$Elements` with 2-node lines (boundary) and 3-node triangles.

use std::collections::HashMap;

use super::{Mesh, MeshError};

const LINE2: u32 = 1;
const TRIANGLE3: u32 = 2;
const POINT: u32 = 15;

fn parse_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        msg: msg.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, l) in self.inner.by_ref() {
            self.last = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Some((i + 1, t));
            }
        }
        None
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, &'a str), MeshError> {
        self.next_line().ok_or_else(|| {
            parse_err(
                self.last,
                format!("unexpected end of file, expected {what}"),
            )
        })
    }

    fn expect_end(&mut self, section: &str) -> Result<(), MeshError> {
        let (n, l) = self.expect_line(&format!("$End{section}"))?;
        if l != format!("$End{section}") {
            return Err(parse_err(n, format!("expected $End{section}, found `{l}`")));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, MeshError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

/// Parse an ASCII MSH 2.2 document into a [`Mesh`]. Boundary lines carry
/// their physical group (by name when `$PhysicalNames` provides one).
pub fn import_gmsh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let mut names: HashMap<(u32, u32), String> = HashMap::new();
    let mut nodes: Option<HashMap<u64, [f64; 2]>> = None;
    let mut node_order: Vec<u64> = Vec::new();
    let mut triangles: Vec<(usize, [u64; 3])> = Vec::new();
    let mut boundary: Vec<(usize, [u64; 2], u32)> = Vec::new();
    let mut saw_format = false;
    let mut saw_elements = false;

    while let Some((n, l)) = lines.next_line() {
        match l {
            "$MeshFormat" => {
                let (n, l) = lines.expect_line("format header")?;
                let mut tok = l.split_whitespace();
                let version: String = parse_num(tok.next(), n, "format version")?;
                let file_type: u32 = parse_num(tok.next(), n, "file type")?;
                if !version.starts_with("2.") {
                    return Err(parse_err(n, format!("unsupported MSH version {version}")));
                }
                if file_type != 0 {
                    return Err(parse_err(n, "binary MSH files are not supported"));
                }
                lines.expect_end("MeshFormat")?;
                saw_format = true;
            }
            "$PhysicalNames" => {
                let (n, l) = lines.expect_line("physical name count")?;
                let count: usize = parse_num(Some(l), n, "physical name count")?;
                for _ in 0..count {
                    let (n, l) = lines.expect_line("physical name")?;
                    let mut tok = l.splitn(3, char::is_whitespace);
                    let dim: u32 = parse_num(tok.next(), n, "physical dimension")?;
                    let tag: u32 = parse_num(tok.next(), n, "physical tag")?;
                    let name = tok
                        .next()
                        .map(|s| s.trim().trim_matches('"').to_string())
                        .ok_or_else(|| parse_err(n, "missing physical name"))?;
                    names.insert((dim, tag), name);
                }
                lines.expect_end("PhysicalNames")?;
            }
            "$Nodes" => {
                let (n, l) = lines.expect_line("node count")?;
                let count: usize = parse_num(Some(l), n, "node count")?;
                let mut map = HashMap::with_capacity(count);
                for _ in 0..count {
                    let (n, l) = lines.expect_line("node")?;
                    let mut tok = l.split_whitespace();
                    let id: u64 = parse_num(tok.next(), n, "node id")?;
                    let x: f64 = parse_num(tok.next(), n, "x coordinate")?;
                    let y: f64 = parse_num(tok.next(), n, "y coordinate")?;
                    if map.insert(id, [x, y]).is_some() {
                        return Err(parse_err(n, format!("duplicate node id {id}")));
                    }
                    node_order.push(id);
                }
                lines.expect_end("Nodes")?;
                nodes = Some(map);
            }
            "$Elements" => {
                let (n, l) = lines.expect_line("element count")?;
                let count: usize = parse_num(Some(l), n, "element count")?;
                for _ in 0..count {
                    let (n, l) = lines.expect_line("element")?;
                    let tok: Vec<&str> = l.split_whitespace().collect();
                    let _id: u64 = parse_num(tok.first().copied(), n, "element id")?;
                    let etype: u32 = parse_num(tok.get(1).copied(), n, "element type")?;
                    let ntags: usize = parse_num(tok.get(2).copied(), n, "tag count")?;
                    let physical: u32 = if ntags > 0 {
                        parse_num(tok.get(3).copied(), n, "physical tag")?
                    } else {
                        0
                    };
                    let conn = &tok[(3 + ntags).min(tok.len())..];
                    let ids = |want: usize| -> Result<Vec<u64>, MeshError> {
                        if conn.len() != want {
                            return Err(parse_err(
                                n,
                                format!(
                                    "element type {etype} needs {want} nodes, found {}",
                                    conn.len()
                                ),
                            ));
                        }
                        conn.iter()
                            .map(|t| parse_num(Some(*t), n, "node reference"))
                            .collect()
                    };
                    match etype {
                        LINE2 => {
                            let v = ids(2)?;
                            boundary.push((n, [v[0], v[1]], physical));
                        }
                        TRIANGLE3 => {
                            let v = ids(3)?;
                            triangles.push((n, [v[0], v[1], v[2]]));
                        }
                        POINT => {}
                        3 => return Err(parse_err(n, "quadrilateral cells are not supported")),
                        4..=7 | 11..=14 | 17..=19 => {
                            return Err(parse_err(
                                n,
                                format!("3D element type {etype} in a 2D mesh"),
                            ))
                        }
                        other => {
                            return Err(parse_err(n, format!("unsupported element type {other}")))
                        }
                    }
                }
                lines.expect_end("Elements")?;
                saw_elements = true;
            }
            s if s.starts_with('$') && !s.starts_with("$End") => {
                // unknown section: skip to its end marker
                let end = format!("$End{}", &s[1..]);
                loop {
                    let (_, l) = lines.expect_line(&end)?;
                    if l == end {
                        break;
                    }
                }
            }
            other => return Err(parse_err(n, format!("unexpected content `{other}`"))),
        }
    }

    let eof = lines.last;
    if !saw_format {
        return Err(parse_err(eof, "missing $MeshFormat section"));
    }
    let nodes = nodes.ok_or_else(|| parse_err(eof, "missing $Nodes section"))?;
    if !saw_elements {
        return Err(parse_err(eof, "missing $Elements section"));
    }
    if triangles.is_empty() {
        return Err(parse_err(eof, "mesh contains no triangles"));
    }

    // compact numbering over nodes used by triangles, in node-section order
    let mut used: HashMap<u64, usize> = HashMap::new();
    for (n, tri) in &triangles {
        for id in tri {
            if !nodes.contains_key(id) {
                return Err(parse_err(*n, format!("reference to undefined node {id}")));
            }
            used.insert(*id, usize::MAX);
        }
    }
    let mut vertices = Vec::with_capacity(used.len());
    for id in &node_order {
        if let Some(slot) = used.get_mut(id) {
            *slot = vertices.len();
            vertices.push(nodes[id]);
        }
    }
    let cells: Vec<[usize; 3]> = triangles
        .iter()
        .map(|(_, t)| [used[&t[0]], used[&t[1]], used[&t[2]]])
        .collect();
    let mut mesh = Mesh::new(vertices, cells)?;

    let mut lookup: HashMap<[usize; 2], usize> = HashMap::new();
    for f in mesh.boundary_facets() {
        lookup.insert(mesh.facets()[f], f);
    }
    for (n, [a, b], phys) in boundary {
        let (va, vb) = match (used.get(&a), used.get(&b)) {
            (Some(&va), Some(&vb)) => (va, vb),
            _ => {
                return Err(parse_err(
                    n,
                    format!("boundary line ({a}, {b}) references a node not used by any triangle"),
                ))
            }
        };
        let key = [va.min(vb), va.max(vb)];
        let f = *lookup
            .get(&key)
            .ok_or_else(|| parse_err(n, format!("line ({a}, {b}) is not a boundary facet")))?;
        let name = names
            .get(&(1, phys))
            .cloned()
            .unwrap_or_else(|| phys.to_string());
        mesh.boundary_tags.insert(f, name);
    }
    Ok(mesh)
}

/// Read and parse an ASCII MSH 2.2 file.
pub fn read_gmsh(path: impl AsRef<std::path::Path>) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    import_gmsh(&text)
}
