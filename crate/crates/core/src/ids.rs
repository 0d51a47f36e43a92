use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Camera identifier, e.g. `c001`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub String);

impl CameraId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CameraId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Identity of one physical vehicle across the camera network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlobalId(pub u64);

impl fmt::Display for GlobalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Network-wide reference to a single-camera trajectory.
///
/// Rendered as `<camera>:<trajectory_id>`; the camera part may itself
/// contain colons, the id is everything after the last one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrajRef {
    pub camera_id: CameraId,
    pub trajectory_id: u64,
}

impl TrajRef {
    pub fn new(camera_id: impl Into<String>, trajectory_id: u64) -> Self {
        Self {
            camera_id: CameraId(camera_id.into()),
            trajectory_id,
        }
    }
}

impl fmt::Display for TrajRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.camera_id, self.trajectory_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid trajectory reference {0:?}, expected <camera>:<id>")]
pub struct ParseTrajRefError(String);

impl FromStr for TrajRef {
    type Err = ParseTrajRefError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cam, id) = s
            .rsplit_once(':')
            .ok_or_else(|| ParseTrajRefError(s.to_owned()))?;
        if cam.is_empty() {
            return Err(ParseTrajRefError(s.to_owned()));
        }
        let id = id.parse().map_err(|_| ParseTrajRefError(s.to_owned()))?;
        Ok(TrajRef::new(cam, id))
    }
}

impl Serialize for TrajRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrajRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traj_ref_text_form() {
        let r = TrajRef::new("S01:c003", 17);
        assert_eq!(r.to_string(), "S01:c003:17");
        assert_eq!("S01:c003:17".parse::<TrajRef>().unwrap(), r);
        assert!("c003".parse::<TrajRef>().is_err());
        assert!(":4".parse::<TrajRef>().is_err());
        assert!("c1:x".parse::<TrajRef>().is_err());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, "\"S01:c003:17\"");
        assert_eq!(serde_json::from_str::<TrajRef>(&json).unwrap(), r);
    }
}
