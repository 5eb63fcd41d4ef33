use crate::error::{Error, Result};
use crate::qstate::BlochVector;

/// Setting counts with a built-in geometry.
pub const SUPPORTED_N: [usize; 6] = [2, 3, 4, 6, 10, 16];

/// The client's pre-determined set of `n` measurement axes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStrategy {
    settings: Vec<BlochVector>,
    /// Orbit label per axis under the geometry's symmetry group, numbered
    /// from 0 in first-seen order.
    groups: Vec<usize>,
}

impl MeasurementStrategy {
    pub fn n(&self) -> usize {
        self.settings.len()
    }

    pub fn settings(&self) -> &[BlochVector] {
        &self.settings
    }

    pub fn setting(&self, k: usize) -> &BlochVector {
        &self.settings[k]
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.iter().max().map_or(0, |g| g + 1)
    }

    /// Builds a strategy from explicit axes; they must be pairwise distinct up
    /// to sign. All axes form one group.
    pub fn from_axes(settings: Vec<BlochVector>) -> Result<Self> {
        let groups = vec![0; settings.len()];
        Self::grouped(settings, groups)
    }

    /// Like [`from_axes`](Self::from_axes) with explicit orbit labels. Any
    /// labelling gives a valid bound; true symmetry orbits make it tight.
    pub fn grouped(settings: Vec<BlochVector>, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != settings.len() {
            return Err(Error::domain("one group label per axis"));
        }
        let count = groups.iter().max().map_or(0, |g| g + 1);
        if (0..count).any(|g| !groups.contains(&g)) {
            return Err(Error::domain("group labels must be contiguous from 0"));
        }
        if settings.is_empty() {
            return Err(Error::domain("strategy needs at least one axis"));
        }
        for (i, a) in settings.iter().enumerate() {
            for b in &settings[..i] {
                if (a.dot(b).abs() - 1.0).abs() < 1e-9 {
                    return Err(Error::domain("strategy axes must be distinct up to sign"));
                }
            }
        }
        Ok(Self { settings, groups })
    }
}

/// Deterministic strategy for `n` settings.
///
/// `n = 2` is `{x, z}`, `n = 3` the orthogonal triad; 4, 6 and 10 use the
/// antipodal pairs of the cube, icosahedron and dodecahedron vertices, and 16
/// combines the icosahedron with its dual dodecahedron. Every geometry but 16
/// is a single orbit of its symmetry group; 16 has two (6 + 10 axes).
pub fn make_strategy(n: usize) -> Result<MeasurementStrategy> {
    let axes = match n {
        2 => vec![BlochVector::X, BlochVector::Z],
        3 => vec![BlochVector::X, BlochVector::Y, BlochVector::Z],
        4 => antipodal_axes(&cube_vertices()),
        6 => antipodal_axes(&icosahedron_vertices()),
        10 => antipodal_axes(&dodecahedron_vertices()),
        16 => {
            let mut v = antipodal_axes(&icosahedron_vertices());
            v.extend(antipodal_axes(&dodecahedron_vertices()));
            let groups = (0..16).map(|k| usize::from(k >= 6)).collect();
            return MeasurementStrategy::grouped(v, groups);
        }
        other => return Err(Error::UnsupportedSettings(other)),
    };
    debug_assert_eq!(axes.len(), n);
    MeasurementStrategy::from_axes(axes)
}

const PHI: f64 = 1.618_033_988_749_895;

fn signs() -> [f64; 2] {
    [1.0, -1.0]
}

fn cube_vertices() -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for x in signs() {
        for y in signs() {
            for z in signs() {
                out.push([x, y, z]);
            }
        }
    }
    out
}

/// Cyclic permutations of `(0, ±a, ±b)`.
fn cyclic(a: f64, b: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for s1 in signs() {
        for s2 in signs() {
            let p = [0.0, s1 * a, s2 * b];
            out.push(p);
            out.push([p[2], p[0], p[1]]);
            out.push([p[1], p[2], p[0]]);
        }
    }
    out
}

fn icosahedron_vertices() -> Vec<[f64; 3]> {
    cyclic(1.0, PHI)
}

/// The dual of [`icosahedron_vertices`]: its vertices sit over the
/// icosahedron's face centres, so the two share one symmetry group.
fn dodecahedron_vertices() -> Vec<[f64; 3]> {
    let mut out = cube_vertices();
    out.extend(cyclic(PHI, 1.0 / PHI));
    out
}

/// One unit representative per antipodal pair, with the first non-zero
/// coordinate positive, in first-seen order.
fn antipodal_axes(vertices: &[[f64; 3]]) -> Vec<BlochVector> {
    let mut axes: Vec<BlochVector> = Vec::new();
    for v in vertices {
        let lead = v.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
        let s = lead.signum();
        let axis = BlochVector::from_array([s * v[0], s * v[1], s * v[2]])
            .expect("polyhedron vertices are non-zero");
        if !axes.iter().any(|a| (a.dot(&axis) - 1.0).abs() < 1e-9) {
            axes.push(axis);
        }
    }
    axes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise_abs_dots(s: &MeasurementStrategy) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..s.n() {
            for j in 0..i {
                out.push(s.setting(i).dot(s.setting(j)).abs());
            }
        }
        out
    }

    #[test]
    fn counts_and_unit_norm() {
        for n in SUPPORTED_N {
            let s = make_strategy(n).unwrap();
            assert_eq!(s.n(), n);
            for a in s.settings() {
                assert!((a.dot(a) - 1.0).abs() < 1e-12);
            }
        }
        assert!(matches!(
            make_strategy(5),
            Err(Error::UnsupportedSettings(5))
        ));
    }

    #[test]
    fn small_strategies() {
        let s3 = make_strategy(3).unwrap();
        assert_eq!(
            s3.settings(),
            &[BlochVector::X, BlochVector::Y, BlochVector::Z]
        );
        let s2 = make_strategy(2).unwrap();
        assert_eq!(s2.settings(), &[BlochVector::X, BlochVector::Z]);
        assert_eq!(s2.setting(0).dot(s2.setting(1)), 0.0);
    }

    #[test]
    fn icosahedral_axes_are_equiangular() {
        // closed form: icosahedron axes (0, 1, phi)/sqrt(1+phi^2) etc. meet at
        // |cos| = 1/sqrt5
        let expect = 1.0 / 5f64.sqrt();
        for d in pairwise_abs_dots(&make_strategy(6).unwrap()) {
            assert!((d - expect).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn cube_and_dodecahedron_angles() {
        for d in pairwise_abs_dots(&make_strategy(4).unwrap()) {
            assert!((d - 1.0 / 3.0).abs() < 1e-12);
        }
        // dodecahedron diagonals meet at |cos| in {1/3, sqrt5/3}
        for d in pairwise_abs_dots(&make_strategy(10).unwrap()) {
            assert!(
                (d - 1.0 / 3.0).abs() < 1e-12 || (d - 5f64.sqrt() / 3.0).abs() < 1e-12,
                "{d}"
            );
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(make_strategy(16).unwrap(), make_strategy(16).unwrap());
    }

    #[test]
    fn duplicate_axes_rejected() {
        assert!(
            MeasurementStrategy::from_axes(vec![BlochVector::X, BlochVector::X.negated()]).is_err()
        );
    }

    #[test]
    fn sixteen_pairs_icosahedron_with_its_dual() {
        let s = make_strategy(16).unwrap();
        assert_eq!(s.group_count(), 2);
        let (ico, dodeca) = s.settings().split_at(6);
        for d in dodeca {
            // the three icosahedron axes nearest to d span the face d sits over
            let mut near: Vec<&BlochVector> = ico.iter().collect();
            near.sort_by(|a, b| b.dot(d).abs().total_cmp(&a.dot(d).abs()));
            let mut sum = [0.0; 3];
            for u in &near[..3] {
                let sign = u.dot(d).signum();
                for (acc, c) in sum.iter_mut().zip(u.components()) {
                    *acc += sign * c;
                }
            }
            let centre = BlochVector::from_array(sum).unwrap();
            assert!((centre.dot(d) - 1.0).abs() < 1e-12);
        }
    }
}
