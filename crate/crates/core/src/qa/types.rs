use serde::{Deserialize, Serialize};

/// The ten benchmark tasks plus planning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SurroundingNarration,
    TrafficSignInquiry,
    ActionDecision,
    BoxDetection,
    Tracking,
    BoxPrediction,
    EgocentricNarration,
    MomentRecap,
    EventQuery,
    ActivityPrediction,
    Planning,
}

impl TaskKind {
    pub const ALL: [TaskKind; 11] = [
        TaskKind::SurroundingNarration,
        TaskKind::TrafficSignInquiry,
        TaskKind::ActionDecision,
        TaskKind::BoxDetection,
        TaskKind::Tracking,
        TaskKind::BoxPrediction,
        TaskKind::EgocentricNarration,
        TaskKind::MomentRecap,
        TaskKind::EventQuery,
        TaskKind::ActivityPrediction,
        TaskKind::Planning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SurroundingNarration => "surrounding_narration",
            TaskKind::TrafficSignInquiry => "traffic_sign_inquiry",
            TaskKind::ActionDecision => "action_decision",
            TaskKind::BoxDetection => "box_detection",
            TaskKind::Tracking => "tracking",
            TaskKind::BoxPrediction => "box_prediction",
            TaskKind::EgocentricNarration => "egocentric_narration",
            TaskKind::MomentRecap => "moment_recap",
            TaskKind::EventQuery => "event_query",
            TaskKind::ActivityPrediction => "activity_prediction",
            TaskKind::Planning => "planning",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskKind> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Number of input frames every pair of this task carries.
    pub fn frame_count(self) -> usize {
        match self {
            TaskKind::SurroundingNarration | TaskKind::BoxDetection | TaskKind::EgocentricNarration => 1,
            TaskKind::TrafficSignInquiry
            | TaskKind::ActionDecision
            | TaskKind::Tracking
            | TaskKind::BoxPrediction => 7,
            TaskKind::MomentRecap | TaskKind::EventQuery | TaskKind::ActivityPrediction => 20,
            TaskKind::Planning => 3,
        }
    }

    /// Spacing between consecutive input frames in seconds.
    pub fn frame_step(self) -> f64 {
        match self.frame_count() {
            20 => 3.0,
            _ => 0.5,
        }
    }

    pub fn is_localization(self) -> bool {
        matches!(self, TaskKind::BoxDetection | TaskKind::Tracking | TaskKind::BoxPrediction)
    }

    /// Whether pairs of this task carry a structured ground truth.
    pub fn has_structured_gt(self) -> bool {
        self.is_localization() || self == TaskKind::Planning
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    TurnLeft,
    TurnRight,
    KeepForward,
}

impl Command {
    pub fn phrase(self) -> &'static str {
        match self {
            Command::TurnLeft => "turning left",
            Command::TurnRight => "turning right",
            Command::KeepForward => "straight ahead",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    /// Meters per second.
    pub speed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    /// World pose `[x, y, yaw]`, meters and radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 3]>,
}

/// An annotated 3D point in the frame's ego coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePoint {
    pub xyz: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<String>,
}

/// One line of a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: String,
    pub timestamp: f64,
    pub calib_id: String,
    #[serde(default)]
    pub points: Vec<FramePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narration: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_signs: Option<Vec<String>>,
    /// Free-form description of the surroundings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Driving decision annotation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego: Option<EgoState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub image: String,
    pub timestamp: f64,
}

impl From<&FrameRecord> for FrameRef {
    fn from(f: &FrameRecord) -> Self {
        FrameRef {
            image: f.image.clone(),
            timestamp: f.timestamp,
        }
    }
}

/// Machine-readable answer for localization and planning pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructuredGt {
    /// One object; `center` is the raw annotated point.
    Box {
        category: String,
        center: [f64; 3],
        grid: [i64; 3],
    },
    /// Positions of one object at `timestamps`, in the current ego frame.
    Track {
        category: String,
        timestamps: Vec<f64>,
        positions: Vec<[f64; 3]>,
        grids: Vec<[i64; 3]>,
    },
    /// Future ego waypoints `[x, y]` in the current ego frame.
    Trajectory {
        timestamps: Vec<f64>,
        points: Vec<[f64; 2]>,
        grids: Vec<[i64; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QaMeta {
    pub scene_id: String,
    pub template_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel: Option<[f64; 2]>,
    /// Timestamp of the current moment.
    pub now: f64,
    /// Seconds between the current moment and the referenced moment, for
    /// tasks that ask about one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub task: TaskKind,
    pub frames: Vec<FrameRef>,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_gt: Option<StructuredGt>,
    pub meta: QaMeta,
}
