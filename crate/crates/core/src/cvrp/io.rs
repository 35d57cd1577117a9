//! JSON-lines serialization of instances and solutions.
//!
//! Instance line: `{"id", "capacity", "depot":[x,y], "coords":[[x,y],...],
//! "demands":[...]}`. Solution line: `{"id", "routes":[[i,...],...], "cost"}`
//! with 1-based customer indices (depot = 0). Floats round-trip exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cvrp::instance::CvrpInstance;
use crate::cvrp::plan::RoutePlan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub id: String,
    pub routes: Vec<Vec<usize>>,
    pub cost: f64,
}

impl SolutionRecord {
    pub fn from_plan(plan: &RoutePlan) -> Self {
        SolutionRecord {
            id: plan.instance_id.clone(),
            routes: plan
                .routes
                .iter()
                .map(|t| t.iter().map(|c| c + 1).collect())
                .collect(),
            cost: plan.cost,
        }
    }

    pub fn to_plan(&self) -> Result<RoutePlan> {
        let mut routes = Vec::with_capacity(self.routes.len());
        for tour in &self.routes {
            let mut t = Vec::with_capacity(tour.len());
            for &c in tour {
                if c == 0 {
                    return Err(Error::Structural(
                        "serialized tours must not contain the depot index 0".into(),
                    ));
                }
                t.push(c - 1);
            }
            routes.push(t);
        }
        Ok(RoutePlan {
            instance_id: self.id.clone(),
            routes,
            cost: self.cost,
        })
    }
}

pub fn write_instances(path: &Path, instances: &[CvrpInstance]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut file, inst)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<CvrpInstance>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_solutions(path: &Path, plans: &[RoutePlan]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for plan in plans {
        serde_json::to_writer(&mut file, &SolutionRecord::from_plan(plan))?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_solutions(path: &Path) -> Result<Vec<RoutePlan>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SolutionRecord = serde_json::from_str(&line)?;
        out.push(rec.to_plan()?);
    }
    Ok(out)
}
