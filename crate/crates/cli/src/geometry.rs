use anyhow::{bail, Result};

use diffcomet::array::{ArrayGeometry, GeometryConfig, UniformConfig};

use crate::GeometryArgs;

impl GeometryArgs {
    pub fn is_set(&self) -> bool {
        self.uniform_m.is_some() || self.positions.is_some()
    }

    /// Geometry from the flags, or `None` when neither layout flag is given.
    pub fn config(&self) -> Option<GeometryConfig> {
        if let Some(m) = self.uniform_m {
            return Some(GeometryConfig::Uniform {
                uniform: UniformConfig {
                    sensors: m,
                    z_amb: self.z_amb,
                },
            });
        }
        self.positions.as_ref().map(|p| GeometryConfig::Positions {
            positions: p.clone(),
            z_amb: self.z_amb,
        })
    }

    /// Flags first, then a sidecar geometry, then a uniform array of `sensors`.
    pub fn resolve(&self, sidecar: Option<&GeometryConfig>, sensors: usize) -> Result<ArrayGeometry> {
        let geom = match (self.config(), sidecar) {
            (Some(c), _) => c.build()?,
            (None, Some(c)) => {
                let g = c.build()?;
                match self.z_amb {
                    Some(z) => g.with_z_amb(Some(z))?,
                    None => g,
                }
            }
            (None, None) => ArrayGeometry::uniform(sensors, self.z_amb)?,
        };
        if geom.sensors() != sensors {
            bail!(
                "geometry has {} sensors but the data has {sensors}",
                geom.sensors()
            );
        }
        Ok(geom)
    }
}
