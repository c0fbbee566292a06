//! Grid case data and the sectioned-CSV case format.
//!
//! ```text
//! [CASE]
//! s_base,f_base
//! [BUS]
//! id,type,v_set,p_load,q_load          type ∈ {SLACK, PV, PQ}; loads in pu
//! [BRANCH]
//! from,to,r,x,b[,tap]                  pu on s_base; tap defaults to 1
//! [GEN]
//! bus,h,d,xd_p,p_set,v_set             classical machine data
//! [LEL]
//! bus,archetype[,param_file]           optional section
//! ```
//!
//! Lines starting with `#` are comments. Columns are matched by header name.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use petgraph::graph::UnGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lel::{archetype_defaults, from_exchange_str, Archetype, DemandShares, LelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusType,
    pub v_set: f64,
    pub p_load: f64,
    pub q_load: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b: f64,
    /// Off-nominal turns ratio on the `from` side.
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    /// Inertia constant, s.
    pub h: f64,
    /// Damping, pu power per pu speed deviation.
    pub d: f64,
    pub xd_p: f64,
    pub p_set: f64,
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LelPlacement {
    pub bus: usize,
    pub params: LelParams,
    pub shares: DemandShares,
    /// Re-rate the motor to carry its share at `load_factor`; otherwise the
    /// motor keeps its MVA rating and its loading follows from the share.
    pub autosize_motor: bool,
}

impl LelPlacement {
    pub fn archetype(bus: usize, archetype: Archetype) -> Self {
        Self {
            bus,
            params: archetype_defaults(archetype),
            shares: DemandShares::default(),
            autosize_motor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub s_base: f64,
    pub f_base: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub lels: Vec<LelPlacement>,
}

impl GridCase {
    /// Position of bus `id` in [`GridCase::buses`].
    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| Error::validation(format!("unknown bus {id}")))
    }

    pub fn index_map(&self) -> HashMap<usize, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusType::Slack)
            .unwrap_or(0)
    }

    /// PQ buses with non-zero active load, in bus order: the candidate LEL
    /// sites.
    pub fn lel_candidate_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusType::Pq && b.p_load > 0.0)
            .map(|b| b.id)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_base > 0.0 && self.f_base > 0.0) {
            return Err(Error::validation("s_base and f_base must be positive"));
        }
        if self.buses.is_empty() {
            return Err(Error::validation("case has no buses"));
        }
        let mut seen = HashMap::new();
        for b in &self.buses {
            if seen.insert(b.id, ()).is_some() {
                return Err(Error::validation(format!("duplicate bus id {}", b.id)));
            }
            if ![b.v_set, b.p_load, b.q_load].iter().all(|v| v.is_finite()) || !(b.v_set > 0.0) {
                return Err(Error::validation(format!("bus {} has invalid data", b.id)));
            }
        }
        let slacks = self
            .buses
            .iter()
            .filter(|b| b.kind == BusType::Slack)
            .count();
        if slacks != 1 {
            return Err(Error::validation(format!(
                "case must have exactly one slack bus, found {slacks}"
            )));
        }
        let index = self.index_map();
        for br in &self.branches {
            for end in [br.from, br.to] {
                if !index.contains_key(&end) {
                    return Err(Error::validation(format!(
                        "branch references unknown bus {end}"
                    )));
                }
            }
            if br.from == br.to {
                return Err(Error::validation(format!(
                    "branch {}-{} is a self-loop",
                    br.from, br.to
                )));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::invalid(format!(
                    "branch {}-{} has zero impedance",
                    br.from, br.to
                )));
            }
            if !(br.tap > 0.0) {
                return Err(Error::validation(format!(
                    "branch {}-{} has non-positive tap",
                    br.from, br.to
                )));
            }
        }
        let mut gen_buses = HashMap::new();
        for g in &self.generators {
            let i = *index
                .get(&g.bus)
                .ok_or_else(|| Error::validation(format!("generator at unknown bus {}", g.bus)))?;
            if self.buses[i].kind == BusType::Pq {
                return Err(Error::validation(format!(
                    "generator bus {} must be PV or slack",
                    g.bus
                )));
            }
            if gen_buses.insert(g.bus, ()).is_some() {
                return Err(Error::validation(format!(
                    "more than one generator at bus {}",
                    g.bus
                )));
            }
            if !(g.h > 0.0 && g.xd_p > 0.0 && g.d >= 0.0) {
                return Err(Error::validation(format!(
                    "generator at bus {} needs h > 0, xd_p > 0, d >= 0",
                    g.bus
                )));
            }
        }
        for b in &self.buses {
            if b.kind != BusType::Pq && !gen_buses.contains_key(&b.id) {
                return Err(Error::validation(format!(
                    "{:?} bus {} has no generator",
                    b.kind, b.id
                )));
            }
        }
        let mut lel_buses = HashMap::new();
        for l in &self.lels {
            let i = *index
                .get(&l.bus)
                .ok_or_else(|| Error::validation(format!("LEL at unknown bus {}", l.bus)))?;
            if self.buses[i].kind != BusType::Pq {
                return Err(Error::validation(format!(
                    "LEL bus {} must be a PQ bus",
                    l.bus
                )));
            }
            if lel_buses.insert(l.bus, ()).is_some() {
                return Err(Error::validation(format!(
                    "more than one LEL at bus {}",
                    l.bus
                )));
            }
            l.params.validate()?;
            l.shares.validate()?;
        }
        self.check_connected(&index)
    }

    fn check_connected(&self, index: &HashMap<usize, usize>) -> Result<()> {
        let mut graph = UnGraph::<(), ()>::with_capacity(self.buses.len(), self.branches.len());
        let nodes: Vec<_> = self.buses.iter().map(|_| graph.add_node(())).collect();
        for br in &self.branches {
            graph.add_edge(nodes[index[&br.from]], nodes[index[&br.to]], ());
        }
        let islands = petgraph::algo::connected_components(&graph);
        if islands != 1 {
            return Err(Error::validation(format!(
                "network is disconnected ({islands} islands)"
            )));
        }
        Ok(())
    }
}

fn sections(document: &str) -> Result<BTreeMap<String, String>> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in document.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_ascii_uppercase();
            if out.contains_key(&name) {
                return Err(Error::Parse(format!(
                    "line {}: duplicate section [{name}]",
                    lineno + 1
                )));
            }
            out.insert(name.clone(), String::new());
            current = Some(name);
            continue;
        }
        let name = current.as_ref().ok_or_else(|| {
            Error::Parse(format!(
                "line {}: data before the first section",
                lineno + 1
            ))
        })?;
        let body = out.get_mut(name).unwrap();
        body.push_str(line);
        body.push('\n');
    }
    Ok(out)
}

type Rows = Vec<HashMap<String, String>>;

fn rows(section: &str, body: &str, required: &[&str]) -> Result<Rows> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(body.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    for r in required {
        if !headers.iter().any(|h| h == r) {
            return Err(Error::MissingField(format!("{section}.{r}")));
        }
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push(
            headers
                .iter()
                .cloned()
                .zip(record.iter().map(str::to_string))
                .collect(),
        );
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(
    row: &HashMap<String, String>,
    section: &str,
    key: &str,
    k: usize,
) -> Result<T> {
    let raw = row
        .get(key)
        .ok_or_else(|| Error::MissingField(format!("{section}.{key} (row {})", k + 1)))?;
    raw.parse().map_err(|_| {
        Error::Parse(format!(
            "{section} row {}: bad `{key}` value `{raw}`",
            k + 1
        ))
    })
}

/// Parses a case document. LEL `param_file` entries are resolved relative to
/// `base_dir` when given, otherwise relative to the working directory.
pub fn load_case_with_base(document: &str, base_dir: Option<&Path>) -> Result<GridCase> {
    let secs = sections(document)?;
    let get = |name: &str| {
        secs.get(name)
            .ok_or_else(|| Error::MissingField(format!("[{name}] section")))
    };

    let head = rows("CASE", get("CASE")?, &["s_base", "f_base"])?;
    let first = head
        .first()
        .ok_or_else(|| Error::MissingField("CASE row".into()))?;
    let s_base = num(first, "CASE", "s_base", 0)?;
    let f_base = num(first, "CASE", "f_base", 0)?;

    let mut buses = Vec::new();
    for (k, r) in rows(
        "BUS",
        get("BUS")?,
        &["id", "type", "v_set", "p_load", "q_load"],
    )?
    .iter()
    .enumerate()
    {
        let kind = match r["type"].to_ascii_uppercase().as_str() {
            "SLACK" | "REF" => BusType::Slack,
            "PV" => BusType::Pv,
            "PQ" => BusType::Pq,
            other => {
                return Err(Error::Parse(format!(
                    "BUS row {}: unknown bus type `{other}`",
                    k + 1
                )))
            }
        };
        buses.push(Bus {
            id: num(r, "BUS", "id", k)?,
            kind,
            v_set: num(r, "BUS", "v_set", k)?,
            p_load: num(r, "BUS", "p_load", k)?,
            q_load: num(r, "BUS", "q_load", k)?,
        });
    }

    let mut branches = Vec::new();
    if let Some(body) = secs.get("BRANCH") {
        for (k, r) in rows("BRANCH", body, &["from", "to", "r", "x", "b"])?
            .iter()
            .enumerate()
        {
            let tap = match r.get("tap").map(String::as_str) {
                None | Some("") => 1.0,
                Some(_) => num(r, "BRANCH", "tap", k)?,
            };
            branches.push(Branch {
                from: num(r, "BRANCH", "from", k)?,
                to: num(r, "BRANCH", "to", k)?,
                r: num(r, "BRANCH", "r", k)?,
                x: num(r, "BRANCH", "x", k)?,
                b: num(r, "BRANCH", "b", k)?,
                tap,
            });
        }
    }

    let mut generators = Vec::new();
    for (k, r) in rows(
        "GEN",
        get("GEN")?,
        &["bus", "h", "d", "xd_p", "p_set", "v_set"],
    )?
    .iter()
    .enumerate()
    {
        generators.push(Generator {
            bus: num(r, "GEN", "bus", k)?,
            h: num(r, "GEN", "h", k)?,
            d: num(r, "GEN", "d", k)?,
            xd_p: num(r, "GEN", "xd_p", k)?,
            p_set: num(r, "GEN", "p_set", k)?,
            v_set: num(r, "GEN", "v_set", k)?,
        });
    }

    let mut lels = Vec::new();
    if let Some(body) = secs.get("LEL").filter(|b| !b.trim().is_empty()) {
        for (k, r) in rows("LEL", body, &["bus", "archetype"])?.iter().enumerate() {
            let bus = num(r, "LEL", "bus", k)?;
            let archetype: Archetype = r["archetype"].parse()?;
            let placement = match r
                .get("param_file")
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
            {
                Some(file) => {
                    let path =
                        base_dir.map_or_else(|| Path::new(file).to_path_buf(), |d| d.join(file));
                    let text = std::fs::read_to_string(&path)?;
                    LelPlacement {
                        bus,
                        params: from_exchange_str(&text)?,
                        shares: DemandShares::default(),
                        autosize_motor: false,
                    }
                }
                None => LelPlacement::archetype(bus, archetype),
            };
            lels.push(placement);
        }
    }

    let case = GridCase {
        s_base,
        f_base,
        buses,
        branches,
        generators,
        lels,
    };
    case.validate()?;
    Ok(case)
}

pub fn load_case(document: &str) -> Result<GridCase> {
    load_case_with_base(document, None)
}

pub fn load_case_file(path: &Path) -> Result<GridCase> {
    let text = std::fs::read_to_string(path)?;
    load_case_with_base(&text, path.parent())
}

pub const IEEE39: &str = include_str!("../../data/ieee39.case");
pub const TOY9: &str = include_str!("../../data/toy9.case");
pub const TOY2: &str = include_str!("../../data/toy2.case");

/// Bundled fixture by name (`ieee39`, `toy9`, `toy2`).
pub fn fixture(name: &str) -> Option<GridCase> {
    let text = match name.trim_end_matches(".case") {
        "ieee39" => IEEE39,
        "toy9" => TOY9,
        "toy2" => TOY2,
        _ => return None,
    };
    Some(load_case(text).expect("bundled fixture is valid"))
}

/// Bundled fixture by name, or a case file path.
pub fn resolve_case(name_or_path: &str) -> Result<GridCase> {
    match fixture(name_or_path) {
        Some(case) => Ok(case),
        None => load_case_file(Path::new(name_or_path)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_expected_sizes() {
        let c = fixture("toy9").unwrap();
        assert_eq!(
            (c.buses.len(), c.generators.len(), c.branches.len()),
            (9, 3, 9)
        );
        let c = fixture("ieee39").unwrap();
        assert_eq!(
            (c.buses.len(), c.generators.len(), c.branches.len()),
            (39, 10, 46)
        );
        let c = fixture("toy2").unwrap();
        assert_eq!(c.lels.len(), 1);
    }

    #[test]
    fn two_slacks_rejected() {
        let text = TOY9.replacen("2,PV", "2,SLACK", 1);
        assert!(matches!(load_case(&text), Err(Error::Validation(m)) if m.contains("slack")));
    }

    #[test]
    fn duplicate_and_disconnected_rejected() {
        let dup = TOY9.replacen("4,PQ", "5,PQ", 1);
        assert!(matches!(load_case(&dup), Err(Error::Validation(m)) if m.contains("duplicate")));
        let lines: Vec<&str> = TOY2.lines().filter(|l| !l.starts_with("1,2,")).collect();
        let cut = lines.join("\n");
        assert!(matches!(load_case(&cut), Err(Error::Validation(m)) if m.contains("disconnected")));
    }

    #[test]
    fn missing_column_is_named() {
        let text = TOY2.replace("bus,h,d,xd_p", "bus,h,damping,xd_p");
        assert!(matches!(load_case(&text), Err(Error::MissingField(m)) if m == "GEN.d"));
    }
}
