//! Operator control messages.
//!
//! ```json
//! {"type":"set_grid_center","x":170.0,"y":120.0,"id":4}
//! {"type":"set_spacing","px":15.0}
//! {"type":"set_rotation","deg":10.0}
//! {"type":"set_gain","gain":2.0}
//! {"type":"pause"}  {"type":"resume"}  {"type":"step"}
//! {"type":"select_scenario","name":"concentric_rings"}
//! ```
//!
//! `id` is optional and echoed in the reply.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Control {
    SetGridCenter { x: f64, y: f64 },
    SetSpacing { px: f64 },
    SetRotation { deg: f64 },
    SetGain { gain: f64 },
    Pause,
    Resume,
    /// Run exactly one tick while paused.
    Step,
    SelectScenario { name: String },
}

impl Control {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SetGridCenter { .. } => "set_grid_center",
            Self::SetSpacing { .. } => "set_spacing",
            Self::SetRotation { .. } => "set_rotation",
            Self::SetGain { .. } => "set_gain",
            Self::Pause => "pause",
            Self::Resume => "resume",
            Self::Step => "step",
            Self::SelectScenario { .. } => "select_scenario",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlMessage {
    pub id: Option<u64>,
    pub control: Control,
}

impl ControlMessage {
    /// Parses one client message. The `id` field is split off before the
    /// control itself is decoded, so unknown fields are still rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(text)?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| Error::Command("control message must be a JSON object".into()))?;
        let id = match obj.remove("id") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::Number(n)) if n.as_u64().is_some() => n.as_u64(),
            Some(other) => return Err(Error::Command(format!("id must be an unsigned integer, got {other}"))),
        };
        let control: Control = serde_json::from_value(v)?;
        let finite = match &control {
            Control::SetGridCenter { x, y } => x.is_finite() && y.is_finite(),
            Control::SetSpacing { px: v } | Control::SetRotation { deg: v } | Control::SetGain { gain: v } => {
                v.is_finite()
            }
            _ => true,
        };
        if !finite {
            return Err(Error::NonFinite("control value"));
        }
        Ok(Self { id, control })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_kind() {
        let cases = [
            (r#"{"type":"set_grid_center","x":170,"y":121.5}"#, Control::SetGridCenter { x: 170.0, y: 121.5 }),
            (r#"{"type":"set_spacing","px":15}"#, Control::SetSpacing { px: 15.0 }),
            (r#"{"type":"set_rotation","deg":-4}"#, Control::SetRotation { deg: -4.0 }),
            (r#"{"type":"set_gain","gain":2.0,"id":9}"#, Control::SetGain { gain: 2.0 }),
            (r#"{"type":"pause"}"#, Control::Pause),
            (r#"{"type":"resume"}"#, Control::Resume),
            (r#"{"type":"step"}"#, Control::Step),
            (r#"{"type":"select_scenario","name":"rest"}"#, Control::SelectScenario { name: "rest".into() }),
        ];
        for (text, want) in cases.clone() {
            let m = ControlMessage::parse(text).unwrap();
            assert_eq!(m.control, want);
            assert_eq!(m.control.name(), text.split('"').nth(3).unwrap());
        }
        assert_eq!(ControlMessage::parse(cases[3].0).unwrap().id, Some(9));
    }

    #[test]
    fn malformed_messages_are_rejected() {
        for text in [
            "not json",
            "[1,2]",
            r#"{"type":"set_gain"}"#,
            r#"{"type":"set_gain","gain":"2"}"#,
            r#"{"type":"set_gain","gain":2,"extra":1}"#,
            r#"{"type":"warp"}"#,
            r#"{"type":"pause","id":-1}"#,
            r#"{"gain":2}"#,
        ] {
            assert!(ControlMessage::parse(text).is_err(), "{text}");
        }
    }
}
