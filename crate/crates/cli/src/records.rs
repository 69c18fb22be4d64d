//! JSON-lines output records. Field order is fixed by declaration, so
//! serialized output is byte-stable for identical inputs.

use serde::{Deserialize, Serialize};

use roigraph_core::geom::Box3D;
use roigraph_core::grouping::ProposalGroup;
use roigraph_core::pipeline::Refined;
use roigraph_core::sampling::SampleResult;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoxRecord {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl From<&Box3D> for BoxRecord {
    fn from(b: &Box3D) -> Self {
        Self { cx: b.cx, cy: b.cy, cz: b.cz, l: b.l, w: b.w, h: b.h, yaw: b.yaw }
    }
}

/// One line of `group` output: the cloud indices grouped into a proposal.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GroupRecord {
    pub box_index: usize,
    pub indices: Vec<u32>,
}

impl From<&ProposalGroup> for GroupRecord {
    fn from(g: &ProposalGroup) -> Self {
        Self { box_index: g.box_index, indices: g.point_indices.clone() }
    }
}

/// One line of `sample` output. `selected` holds original cloud indices;
/// `None` marks a proposal whose group was empty.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SampleRecord {
    pub box_index: usize,
    pub selected: Option<Vec<u32>>,
    pub pad_count: usize,
}

impl SampleRecord {
    pub fn from_result(group: &ProposalGroup, result: &SampleResult) -> Self {
        Self {
            box_index: group.box_index,
            selected: Some(
                result
                    .selected
                    .iter()
                    .map(|&pos| group.point_indices[pos as usize])
                    .collect(),
            ),
            pad_count: result.pad_count,
        }
    }

    pub fn empty(box_index: usize) -> Self {
        Self { box_index, selected: None, pad_count: 0 }
    }
}

/// One line of `pool` output.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PoolRecord {
    pub box_index: usize,
    pub score: Option<f64>,
    pub refined: Option<BoxRecord>,
    pub grouped_points: usize,
}

impl From<&Refined> for PoolRecord {
    fn from(r: &Refined) -> Self {
        Self {
            box_index: r.box_index,
            score: r.score,
            refined: r.refined.as_ref().map(BoxRecord::from),
            grouped_points: r.grouped_points,
        }
    }
}

/// Serializes records as JSON lines.
pub fn to_json_lines<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_lines_are_stable_and_parse_back() {
        let records = vec![
            GroupRecord { box_index: 0, indices: vec![1, 5, 9] },
            GroupRecord { box_index: 1, indices: vec![] },
        ];
        let text = to_json_lines(&records);
        assert_eq!(
            text,
            "{\"box_index\":0,\"indices\":[1,5,9]}\n{\"box_index\":1,\"indices\":[]}\n"
        );
        let back: Vec<GroupRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, records);
    }
}
