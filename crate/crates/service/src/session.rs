//! Analyst edit sessions: declarative per-frame edit state layered over the
//! automated results, with a replayable log.

use fcap_core::capseg::Anchor;
use fcap_core::docs::{FrameResult, Provenance};
use fcap_core::lipid::LipidArc;
use fcap_core::pipeline::{measure_arcs, FrameStatus};
use fcap_core::preprocess::{preprocess_pipeline, LumenBoundary};
use fcap_core::{AnalysisConfig, CalibrationMeta, Error, PolarFrame, Result};
use serde::{Deserialize, Serialize};

pub const SESSION_KIND: &str = "session";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcKeyword {
    #[serde(rename = "delete-all")]
    DeleteAll,
}

/// Replacement lipid arcs for a frame: a full list or `"delete-all"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArcsEdit {
    Replace(Vec<ArcSpec>),
    Keyword(ArcKeyword),
}

impl ArcsEdit {
    pub fn arcs(&self, n_alines: usize) -> Result<Vec<LipidArc>> {
        match self {
            ArcsEdit::Keyword(ArcKeyword::DeleteAll) => Ok(Vec::new()),
            ArcsEdit::Replace(specs) => {
                let mut arcs = specs
                    .iter()
                    .map(|s| LipidArc::new(s.start, s.length, n_alines))
                    .collect::<Result<Vec<_>>>()?;
                arcs.sort_by_key(|a| a.start);
                fcap_core::lipid::lipid_angle(&arcs, n_alines)?;
                Ok(arcs)
            }
        }
    }
}

/// Body of `PUT /api/sessions/{sid}/frames/{k}/edits`. Absent fields keep
/// the frame's current edit state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arcs: Option<ArcsEdit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<Anchor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    /// Frame revision the client edited from; a stale value is rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_revision: Option<u64>,
}

/// Declarative edit state of one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arcs: Option<ArcsEdit>,
    #[serde(default)]
    pub anchors: Vec<Anchor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
}

impl EditState {
    pub fn apply(&self, req: &EditRequest) -> Self {
        let mut anchors = req.anchors.clone().unwrap_or_else(|| self.anchors.clone());
        anchors.sort_unstable();
        anchors.dedup();
        Self {
            arcs: req.arcs.clone().or_else(|| self.arcs.clone()),
            anchors,
            accepted: req.accepted.or(self.accepted),
        }
    }

    /// Whether the automated geometry has to be recomputed.
    pub fn changes_geometry(&self) -> bool {
        self.arcs.is_some() || !self.anchors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEdits {
    pub frame_index: usize,
    pub revision: u64,
    pub state: EditState,
    /// The merged frame this state produces.
    pub result: FrameResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub frame_index: usize,
    pub revision: u64,
    pub at: String,
    pub state: EditState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub schema_version: String,
    pub kind: String,
    pub session_id: String,
    pub analyst_id: String,
    pub pullback_id: String,
    pub created: String,
    pub updated: String,
    /// Bumped on every state change of any frame.
    pub revision: u64,
    /// Edited frames in index order.
    pub frames: Vec<FrameEdits>,
    pub log: Vec<LogEntry>,
}

impl Session {
    pub fn new(session_id: String, analyst_id: String, pullback_id: String, now: String) -> Self {
        Self {
            schema_version: fcap_core::store::SCHEMA_VERSION.into(),
            kind: SESSION_KIND.into(),
            session_id,
            analyst_id,
            pullback_id,
            created: now.clone(),
            updated: now,
            revision: 0,
            frames: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn frame(&self, frame_index: usize) -> Option<&FrameEdits> {
        self.frames.iter().find(|f| f.frame_index == frame_index)
    }

    /// Stores `edits` for its frame and logs the new state.
    pub fn record(&mut self, edits: FrameEdits, now: String) {
        self.log.push(LogEntry {
            frame_index: edits.frame_index,
            revision: edits.revision,
            at: now.clone(),
            state: edits.state.clone(),
        });
        match self.frames.binary_search_by_key(&edits.frame_index, |f| f.frame_index) {
            Ok(k) => self.frames[k] = edits,
            Err(k) => self.frames.insert(k, edits),
        }
        self.revision += 1;
        self.updated = now;
    }
}

/// Inputs for recomputing one frame.
pub struct FrameContext<'a> {
    pub auto: &'a FrameResult,
    pub frame: &'a PolarFrame,
    pub calib: &'a CalibrationMeta,
    pub config: &'a AnalysisConfig,
}

/// The frame `state` produces over the automated result. Geometry edits
/// re-run preprocessing with the automated lumen and re-solve the cap
/// boundary with the anchors as waypoints.
pub fn materialize(ctx: &FrameContext<'_>, state: &EditState, analyst_id: &str, revision: u64) -> Result<FrameResult> {
    let auto = ctx.auto;
    let mut result = auto.clone();
    if state.changes_geometry() {
        if auto.status != FrameStatus::Ok {
            return Err(Error::InvalidAnchor(format!(
                "frame {} has no lumen to measure from",
                auto.frame_index
            )));
        }
        let n = ctx.calib.n_alines;
        let arcs = match &state.arcs {
            Some(edit) => edit.arcs(n)?,
            None => auto.arcs.clone(),
        };
        let lumen = LumenBoundary::external(auto.lumen_px.clone());
        let pre = preprocess_pipeline(ctx.frame, ctx.calib, ctx.config, Some(&lumen))?;
        let (boundaries, m) = measure_arcs(&pre, &arcs, &state.anchors, ctx.config)?;
        let frame = FrameResult::from_analysis(
            &fcap_core::FrameAnalysis {
                frame_index: auto.frame_index,
                status: FrameStatus::Ok,
                lumen: Vec::new(),
                guidewire: Vec::new(),
                arcs,
                boundaries,
                measurements: m,
            },
            ctx.config,
        )?;
        result.arcs = frame.arcs;
        result.boundaries = frame.boundaries;
        result.measurements = frame.measurements;
    }
    result.accepted = state.accepted;
    result.provenance = Some(Provenance {
        analyst_id: analyst_id.into(),
        revision: Some(revision),
        timestamp: None,
    });
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arcs_edit_accepts_list_or_keyword() {
        let list: ArcsEdit = serde_json::from_str(r#"[{"start": 3, "length": 10}]"#).unwrap();
        assert_eq!(list, ArcsEdit::Replace(vec![ArcSpec { start: 3, length: 10 }]));
        let del: ArcsEdit = serde_json::from_str(r#""delete-all""#).unwrap();
        assert_eq!(del.arcs(504).unwrap(), Vec::new());
        assert!(serde_json::from_str::<ArcsEdit>(r#""delete-some""#).is_err());
    }

    #[test]
    fn overlapping_or_out_of_range_arcs_rejected() {
        let overlap = ArcsEdit::Replace(vec![ArcSpec { start: 0, length: 10 }, ArcSpec { start: 5, length: 10 }]);
        assert!(matches!(overlap.arcs(504), Err(Error::OverlappingArcs(_))));
        let outside = ArcsEdit::Replace(vec![ArcSpec { start: 504, length: 1 }]);
        assert!(outside.arcs(504).is_err());
    }

    #[test]
    fn apply_keeps_absent_fields() {
        let s = EditState::default().apply(&EditRequest {
            anchors: Some(vec![Anchor { aline: 9, r: 30 }, Anchor { aline: 2, r: 20 }, Anchor { aline: 9, r: 30 }]),
            ..Default::default()
        });
        assert_eq!(s.anchors, vec![Anchor { aline: 2, r: 20 }, Anchor { aline: 9, r: 30 }]);
        let t = s.apply(&EditRequest { accepted: Some(true), ..Default::default() });
        assert_eq!((t.anchors.len(), t.accepted), (2, Some(true)));
        assert_eq!(t.apply(&EditRequest::default()), t);
    }
}
