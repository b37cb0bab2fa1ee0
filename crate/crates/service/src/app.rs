//! Data-root access and the synchronous operations behind each endpoint.
//!
//! Layout under the data root:
//! `pullbacks/<id>/manifest.json`, the frame files and, once analyzed,
//! `pullbacks/<id>/results.json`; analyst sessions live in
//! `sessions/<session id>.json`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use fcap_core::capseg::thickness_map;
use fcap_core::docs::{compare, AgreementDoc, AnnotationDoc, FrameResult, ResultsDoc};
use fcap_core::model::ScanGeometry;
use fcap_core::pipeline::FrameStatus;
use fcap_core::render::{cartesian_png, polar_png};
use fcap_core::store::{read_frame, read_json, read_manifest, to_canonical_json, write_json, PullbackManifest};
use fcap_core::{LipidArc, PolarFrame};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::session::{materialize, EditRequest, EditState, FrameContext, FrameEdits, Session};

pub const RESULTS_FILE: &str = "results.json";
pub const DEFAULT_CARTESIAN_SIZE: usize = 1024;
const MAX_CARTESIAN_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    #[default]
    Polar,
    Cartesian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackInfo {
    pub id: String,
    pub n_frames: usize,
    pub n_alines: usize,
    pub n_samples: usize,
    pub analyzed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryView {
    pub arc: LipidArc,
    /// Radius per arc A-line in lumen-aligned columns.
    pub r_abluminal: Vec<usize>,
    /// Acquisition-sample radius per arc A-line.
    pub r_acquisition: Vec<usize>,
    pub polyline: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSample {
    pub aline: usize,
    pub um: f64,
}

/// Frame analysis with overlays in the coordinates of the requested view.
/// Polar images put A-line `i`, sample `r` at pixel center
/// `(r + 0.5, i + 0.5)`; Cartesian images follow [`ScanGeometry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameView {
    pub pullback_id: String,
    pub frame_index: usize,
    pub view: View,
    pub image_size: [usize; 2],
    pub session_id: Option<String>,
    pub revision: u64,
    pub status: FrameStatus,
    pub lumen_polyline: Vec<[f64; 2]>,
    pub guidewire: Vec<[usize; 2]>,
    pub arcs: Vec<LipidArc>,
    pub boundaries: Vec<BoundaryView>,
    pub thickness: Vec<ThicknessSample>,
    pub measurements: fcap_core::FrameMeasurements,
    /// This frame's row of the pullback thickness map.
    pub map_row: Vec<f64>,
    pub accepted: Option<bool>,
    pub provenance: Option<fcap_core::docs::Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    pub analyst_id: String,
    pub pullback_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    Results,
    Annotation,
    #[default]
    Both,
}

#[derive(Debug, Serialize)]
struct ExportBoth<'a> {
    annotation: &'a AnnotationDoc,
    results: &'a ResultsDoc,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.')
}

pub struct App {
    root: PathBuf,
    manifests: RwLock<HashMap<String, Arc<PullbackManifest>>>,
    results: RwLock<HashMap<String, Arc<ResultsDoc>>>,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl App {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            manifests: RwLock::default(),
            results: RwLock::default(),
            session_locks: Mutex::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn pullback_dir(&self, id: &str) -> PathBuf {
        self.root.join("pullbacks").join(id)
    }

    fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    fn session_path(&self, sid: &str) -> PathBuf {
        self.sessions_dir().join(format!("{sid}.json"))
    }

    pub fn manifest(&self, id: &str) -> ApiResult<Arc<PullbackManifest>> {
        if let Some(m) = self.manifests.read().expect("manifest cache").get(id) {
            return Ok(m.clone());
        }
        let dir = self.pullback_dir(id);
        if !valid_id(id) || !dir.join(fcap_core::store::MANIFEST_FILE).is_file() {
            return Err(ApiError::NotFound(format!("unknown pullback {id:?}")));
        }
        let m = Arc::new(read_manifest(&dir)?);
        self.manifests.write().expect("manifest cache").insert(id.into(), m.clone());
        Ok(m)
    }

    /// Automated results, loaded once per pullback.
    pub fn results(&self, id: &str) -> ApiResult<Arc<ResultsDoc>> {
        self.manifest(id)?;
        if let Some(r) = self.results.read().expect("results cache").get(id) {
            return Ok(r.clone());
        }
        let path = self.pullback_dir(id).join(RESULTS_FILE);
        if !path.is_file() {
            return Err(ApiError::Conflict {
                message: format!("pullback {id:?} has not been analyzed"),
                current_revision: None,
            });
        }
        let doc = Arc::new(ResultsDoc::read(&path)?);
        self.results.write().expect("results cache").insert(id.into(), doc.clone());
        Ok(doc)
    }

    pub fn list_pullbacks(&self) -> ApiResult<Vec<PullbackInfo>> {
        let dir = self.root.join("pullbacks");
        let mut ids: Vec<String> = match std::fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter(|e| e.path().join(fcap_core::store::MANIFEST_FILE).is_file())
                .filter_map(|e| e.file_name().into_string().ok())
                .filter(|id| valid_id(id))
                .collect(),
            Err(_) => Vec::new(),
        };
        ids.sort();
        ids.iter()
            .map(|id| {
                let m = self.manifest(id)?;
                Ok(PullbackInfo {
                    id: id.clone(),
                    n_frames: m.n_frames,
                    n_alines: m.n_alines,
                    n_samples: m.n_samples,
                    analyzed: self.pullback_dir(id).join(RESULTS_FILE).is_file(),
                })
            })
            .collect()
    }

    fn polar_frame(&self, id: &str, k: usize) -> ApiResult<(Arc<PullbackManifest>, PolarFrame)> {
        let m = self.manifest(id)?;
        if k >= m.n_frames {
            return Err(ApiError::NotFound(format!("pullback {id:?} has no frame {k}")));
        }
        let frame = read_frame(&self.pullback_dir(id), &m, k)?;
        Ok((m, frame))
    }

    pub fn frame_image(&self, id: &str, k: usize, view: View, size: Option<usize>) -> ApiResult<Vec<u8>> {
        let (m, frame) = self.polar_frame(id, k)?;
        let png = match view {
            View::Polar => polar_png(&frame, m.bit_depth)?,
            View::Cartesian => cartesian_png(&frame, m.bit_depth, cartesian_size(size)?)?,
        };
        Ok(png)
    }

    fn load_session(&self, sid: &str) -> ApiResult<Session> {
        let path = self.session_path(sid);
        if !valid_id(sid) || !path.is_file() {
            return Err(ApiError::NotFound(format!("unknown session {sid:?}")));
        }
        Ok(read_json(&path)?)
    }

    pub fn session(&self, sid: &str) -> ApiResult<Session> {
        self.load_session(sid)
    }

    fn session_lock(&self, sid: &str) -> Arc<Mutex<()>> {
        self.session_locks
            .lock()
            .expect("session lock table")
            .entry(sid.to_string())
            .or_default()
            .clone()
    }

    pub fn create_session(&self, req: &NewSession) -> ApiResult<Session> {
        if req.analyst_id.trim().is_empty() {
            return Err(ApiError::BadRequest("analyst_id must not be empty".into()));
        }
        self.results(&req.pullback_id)?;
        let sid = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::new(sid.clone(), req.analyst_id.clone(), req.pullback_id.clone(), now());
        std::fs::create_dir_all(self.sessions_dir()).map_err(|e| ApiError::Internal(e.to_string()))?;
        write_json(&self.session_path(&sid), &session)?;
        Ok(session)
    }

    fn auto_frame(results: &ResultsDoc, id: &str, k: usize) -> ApiResult<FrameResult> {
        results
            .frame(k)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("pullback {id:?} has no frame {k}")))
    }

    /// Applies an edit and persists the session when the frame state changes.
    pub fn put_edits(&self, sid: &str, k: usize, req: &EditRequest) -> ApiResult<FrameView> {
        let lock = self.session_lock(sid);
        let _guard = lock.lock().expect("session lock");
        let mut session = self.load_session(sid)?;
        let results = self.results(&session.pullback_id)?;
        let auto = Self::auto_frame(&results, &session.pullback_id, k)?;
        let current = session.frame(k).cloned();
        let (cur_state, cur_rev) = current
            .as_ref()
            .map_or((EditState::default(), 0), |f| (f.state.clone(), f.revision));
        let next = cur_state.apply(req);
        if next == cur_state {
            let merged = current.map_or(auto, |f| f.result);
            return self.view(&session.pullback_id, &merged, Some(&session), View::Polar, None);
        }
        if let Some(base) = req.base_revision {
            if base != cur_rev {
                return Err(ApiError::Conflict {
                    message: format!("frame {k} is at revision {cur_rev}, edit was based on {base}"),
                    current_revision: Some(cur_rev),
                });
            }
        }
        let (m, frame) = self.polar_frame(&session.pullback_id, k)?;
        let revision = cur_rev + 1;
        let calib = m.calibration();
        let ctx = FrameContext {
            auto: &auto,
            frame: &frame,
            calib: &calib,
            config: &results.config,
        };
        let result = materialize(&ctx, &next, &session.analyst_id, revision).map_err(ApiError::from_edit)?;
        session.record(
            FrameEdits {
                frame_index: k,
                revision,
                state: next,
                result: result.clone(),
            },
            now(),
        );
        write_json(&self.session_path(sid), &session)?;
        self.view(&session.pullback_id, &result, Some(&session), View::Polar, None)
    }

    pub fn frame_analysis(&self, id: &str, k: usize, sid: Option<&str>, view: View, size: Option<usize>) -> ApiResult<FrameView> {
        let results = self.results(id)?;
        let auto = Self::auto_frame(&results, id, k)?;
        let session = sid.map(|s| self.load_session(s)).transpose()?;
        if let Some(s) = &session {
            if s.pullback_id != id {
                return Err(ApiError::BadRequest(format!("session {} belongs to pullback {:?}", s.session_id, s.pullback_id)));
            }
        }
        let merged = session
            .as_ref()
            .and_then(|s| s.frame(k))
            .map_or(auto, |f| f.result.clone());
        self.view(id, &merged, session.as_ref(), view, size)
    }

    fn view(&self, id: &str, f: &FrameResult, session: Option<&Session>, view: View, size: Option<usize>) -> ApiResult<FrameView> {
        let m = self.manifest(id)?;
        let results = self.results(id)?;
        let n = m.n_alines;
        let out = cartesian_size(size)?;
        let geo = ScanGeometry {
            n_alines: n,
            n_radial: m.n_samples,
            out_size: out,
        };
        let point = |aline: usize, r: f64| -> [f64; 2] {
            match view {
                View::Polar => [r + 0.5, aline as f64 + 0.5],
                View::Cartesian => {
                    let (x, y) = geo.polar_to_cartesian(aline as f64, r);
                    [x, y]
                }
            }
        };
        let lumen_polyline = f.lumen_px.iter().enumerate().map(|(i, &r)| point(i, r)).collect();
        let boundaries = f
            .boundaries
            .iter()
            .map(|b| {
                let r_acquisition: Vec<usize> = b
                    .arc
                    .alines(n)
                    .zip(&b.r_abluminal)
                    .map(|(i, &r)| f.lumen_px[i].round() as usize + r)
                    .collect();
                let polyline = b.arc.alines(n).zip(&r_acquisition).map(|(i, &r)| point(i, r as f64)).collect();
                BoundaryView {
                    arc: b.arc,
                    r_abluminal: b.r_abluminal.clone(),
                    r_acquisition,
                    polyline,
                }
            })
            .collect();
        let samples = f.thickness_samples(n);
        let row = thickness_map(std::slice::from_ref(&samples), n, results.config.map.angle_bins);
        Ok(FrameView {
            pullback_id: id.into(),
            frame_index: f.frame_index,
            view,
            image_size: match view {
                View::Polar => [m.n_samples, n],
                View::Cartesian => [out, out],
            },
            session_id: session.map(|s| s.session_id.clone()),
            revision: session.and_then(|s| s.frame(f.frame_index)).map_or(0, |e| e.revision),
            status: f.status,
            lumen_polyline,
            guidewire: f.guidewire.clone(),
            arcs: f.arcs.clone(),
            boundaries,
            thickness: samples.into_iter().map(|(aline, um)| ThicknessSample { aline, um }).collect(),
            measurements: f.measurements.clone(),
            map_row: row.values.row(0).to_vec(),
            accepted: f.accepted,
            provenance: f.provenance.clone(),
        })
    }

    /// Automated results with the session's edited frames substituted.
    pub fn export_results(&self, sid: &str) -> ApiResult<ResultsDoc> {
        let session = self.load_session(sid)?;
        let auto = self.results(&session.pullback_id)?;
        if session.frames.is_empty() {
            return Ok((*auto).clone());
        }
        let frames = auto
            .frames
            .iter()
            .map(|f| session.frame(f.frame_index).map_or_else(|| f.clone(), |e| e.result.clone()))
            .collect();
        Ok(ResultsDoc::new(&auto.pullback_id, &auto.calibration(), &auto.config, &auto.lipid_source, frames)?)
    }

    pub fn export(&self, sid: &str, kind: ExportKind) -> ApiResult<Vec<u8>> {
        let results = self.export_results(sid)?;
        let bytes = match kind {
            ExportKind::Results => to_canonical_json(&results)?,
            ExportKind::Annotation => to_canonical_json(&AnnotationDoc::from_results(&results)?)?,
            ExportKind::Both => to_canonical_json(&ExportBoth {
                annotation: &AnnotationDoc::from_results(&results)?,
                results: &results,
            })?,
        };
        Ok(bytes)
    }

    pub fn compare(&self, a: &str, b: &str) -> ApiResult<AgreementDoc> {
        let ra = self.export_results(a)?;
        let rb = self.export_results(b)?;
        compare(&ra, &rb).map_err(|e| ApiError::BadRequest(e.to_string()))
    }
}

fn cartesian_size(size: Option<usize>) -> ApiResult<usize> {
    let s = size.unwrap_or(DEFAULT_CARTESIAN_SIZE);
    if !(64..=MAX_CARTESIAN_SIZE).contains(&s) {
        return Err(ApiError::BadRequest(format!("size must lie in [64, {MAX_CARTESIAN_SIZE}]")));
    }
    Ok(s)
}

/// Rebuilds the frame edits of `session` from its log alone.
pub fn replay(
    session: &Session,
    results: &ResultsDoc,
    calib: &fcap_core::CalibrationMeta,
    frames: &dyn Fn(usize) -> fcap_core::Result<PolarFrame>,
) -> fcap_core::Result<Vec<FrameEdits>> {
    let mut out: Vec<FrameEdits> = Vec::new();
    for entry in &session.log {
        let auto = results
            .frame(entry.frame_index)
            .ok_or_else(|| fcap_core::Error::DimensionMismatch {
                what: "session frame".into(),
                expected: "a frame of the results".into(),
                found: entry.frame_index.to_string(),
            })?;
        let frame = frames(entry.frame_index)?;
        let ctx = FrameContext {
            auto,
            frame: &frame,
            calib,
            config: &results.config,
        };
        let result = materialize(&ctx, &entry.state, &session.analyst_id, entry.revision)?;
        let edits = FrameEdits {
            frame_index: entry.frame_index,
            revision: entry.revision,
            state: entry.state.clone(),
            result,
        };
        match out.binary_search_by_key(&entry.frame_index, |f| f.frame_index) {
            Ok(k) => out[k] = edits,
            Err(k) => out.insert(k, edits),
        }
    }
    Ok(out)
}
