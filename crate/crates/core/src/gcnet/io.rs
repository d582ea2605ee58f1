use std::fs;
use std::path::Path;

use super::{NetError, NetSpec, FORMAT_VERSION};

impl NetSpec {
    /// Canonical pretty-printed JSON. Serialising the same network always
    /// yields the same bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("network serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        // Look at the version before the full parse so an unknown format
        // is reported as such rather than as a missing field.
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("format").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(NetError::UnsupportedFormat(v as u32)),
            None => return Err(NetError::Malformed("missing \"format\" field".into())),
        }
        let net: NetSpec = serde_json::from_value(raw)?;
        net.validate()?;
        Ok(net)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        self.validate()?;
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self, NetError> {
        NetSpec::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcnet::{InputMap, OutputMap};

    fn sample() -> NetSpec {
        let pre = InputMap {
            shift: vec![0.1, -0.2, 0.3, 0.0, 0.01],
            scale: vec![0.2, 0.3, 0.2, 0.3, 1.5],
        };
        NetSpec::random(5, &[4, 3], 2, pre, OutputMap::quad_controls(), 11).unwrap()
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let net = sample();
        let a = net.to_json();
        let back = NetSpec::from_json(&a).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json(), a);
        assert!(a.contains("\"W\"") && a.contains("\"softplus\"") && a.contains("\"format\": 1"));
    }

    #[test]
    fn rejects_broken_chain() {
        let net = sample();
        let mut v: serde_json::Value = serde_json::from_str(&net.to_json()).unwrap();
        v["layers"][1]["W"][0].as_array_mut().unwrap().pop();
        let err = NetSpec::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, NetError::Malformed(_)), "{err}");
    }

    #[test]
    fn rejects_unknown_format_and_garbage() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        v["format"] = 2.into();
        assert!(matches!(
            NetSpec::from_json(&v.to_string()),
            Err(NetError::UnsupportedFormat(2))
        ));
        assert!(matches!(NetSpec::from_json("{"), Err(NetError::Json(_))));
    }
}
