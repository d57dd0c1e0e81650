//! File formats: hashed CSV tables and mesh/velocity import-export.
//!
//! Every CSV starts with a comment line `# config_hash=<16 hex digits>`
//! followed by a header row. Floats are written in shortest round-trip form,
//! so read → write reproduces a file byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use moderr_core::pde::SpaceTimeMesh;

/// A CSV table: header names and rows of floats.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub config_hash: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(config_hash: &str, columns: &[&str]) -> Self {
        CsvTable {
            config_hash: config_hash.to_string(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# config_hash={}\n", self.config_hash));
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.render().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let hash_line = lines.next().ok_or("empty csv")?;
        let config_hash = hash_line
            .strip_prefix("# config_hash=")
            .ok_or("missing config_hash comment line")?
            .to_string();
        let header = lines.next().ok_or("missing header row")?;
        let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.parse::<f64>()).collect();
            let row = row.map_err(|e| format!("row {}: {e}", i + 1))?;
            if row.len() != columns.len() {
                return Err(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    row.len(),
                    columns.len()
                ));
            }
            rows.push(row);
        }
        Ok(CsvTable {
            config_hash,
            columns,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }
}

/// Writes `nodes.csv` (columns `x,y`, one row per node in index order) and
/// `triangles.csv` (columns `v0,v1,v2`, zero-based node indices).
pub fn export_mesh(mesh: &SpaceTimeMesh, config_hash: &str, dir: &Path) -> std::io::Result<()> {
    let mut nodes = CsvTable::new(config_hash, &["x", "y"]);
    for n in mesh.nodes() {
        nodes.push(vec![n[0], n[1]]);
    }
    nodes.write(&dir.join("nodes.csv"))?;
    let mut tris = CsvTable::new(config_hash, &["v0", "v1", "v2"]);
    for t in mesh.triangles() {
        tris.push(vec![t[0] as f64, t[1] as f64, t[2] as f64]);
    }
    tris.write(&dir.join("triangles.csv"))
}

/// Writes `velocity.csv` (columns `vx,vy`, node order matching `nodes.csv`).
pub fn export_velocity(
    velocity: &[[f64; 2]],
    config_hash: &str,
    dir: &Path,
) -> std::io::Result<()> {
    let mut table = CsvTable::new(config_hash, &["vx", "vy"]);
    for v in velocity {
        table.push(vec![v[0], v[1]]);
    }
    table.write(&dir.join("velocity.csv"))
}

/// Reads a mesh from `nodes.csv` + `triangles.csv`.
pub fn import_mesh(
    nodes_path: &Path,
    triangles_path: &Path,
    time_elements: usize,
) -> Result<SpaceTimeMesh, String> {
    let nodes_table = CsvTable::read(nodes_path)?;
    if nodes_table.columns != ["x", "y"] {
        return Err(format!("{}: expected header x,y", nodes_path.display()));
    }
    let nodes: Vec<[f64; 2]> = nodes_table.rows.iter().map(|r| [r[0], r[1]]).collect();
    let tri_table = CsvTable::read(triangles_path)?;
    if tri_table.columns != ["v0", "v1", "v2"] {
        return Err(format!(
            "{}: expected header v0,v1,v2",
            triangles_path.display()
        ));
    }
    let triangles: Vec<[usize; 3]> = tri_table
        .rows
        .iter()
        .map(|r| [r[0] as usize, r[1] as usize, r[2] as usize])
        .collect();
    SpaceTimeMesh::from_parts(nodes, triangles, time_elements).map_err(|e| e.to_string())
}

/// Reads a nodal velocity field from `velocity.csv`.
pub fn import_velocity(path: &Path, expected_nodes: usize) -> Result<Vec<[f64; 2]>, String> {
    let table = CsvTable::read(path)?;
    if table.columns != ["vx", "vy"] {
        return Err(format!("{}: expected header vx,vy", path.display()));
    }
    if table.rows.len() != expected_nodes {
        return Err(format!(
            "{}: {} rows but the mesh has {} nodes",
            path.display(),
            table.rows.len(),
            expected_nodes
        ));
    }
    Ok(table.rows.iter().map(|r| [r[0], r[1]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let mut t = CsvTable::new("00ff00ff00ff00ff", &["t", "value"]);
        t.push(vec![0.1, 1.0 / 3.0]);
        t.push(vec![0.2, -2.5e-17]);
        t.push(vec![0.30000000000000004, f64::MIN_POSITIVE]);
        let text = t.render();
        let parsed = CsvTable::parse(&text).unwrap();
        assert_eq!(parsed, t);
        assert_eq!(parsed.render(), text);
    }

    #[test]
    fn csv_rejects_malformed() {
        assert!(CsvTable::parse("").is_err());
        assert!(CsvTable::parse("no hash\nt\n1.0\n").is_err());
        assert!(CsvTable::parse("# config_hash=x\nt,v\n1.0\n").is_err());
    }

    #[test]
    fn mesh_export_import_round_trip() {
        let mesh = SpaceTimeMesh::structured(4, 5).unwrap();
        let dir = std::env::temp_dir().join("moderr-io-test");
        fs::create_dir_all(&dir).unwrap();
        export_mesh(&mesh, "0123456789abcdef", &dir).unwrap();
        let back = import_mesh(&dir.join("nodes.csv"), &dir.join("triangles.csv"), 5).unwrap();
        assert_eq!(back.num_nodes(), mesh.num_nodes());
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.nodes(), mesh.nodes());
    }
}
