//! Shapes of expression values and the dimension unifier used by shape
//! inference.
//!
//! Models never spell out dimensions. Each declared vector or matrix gets
//! fresh symbolic dimensions which are unified while walking the expression
//! tree and, later, pinned to concrete sizes once data is bound.

use std::fmt;

/// A single dimension: either a concrete size or a symbolic placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Known(usize),
    Sym(u32),
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Known(n) => write!(f, "{n}"),
            Dim::Sym(s) => write!(f, "d{s}"),
        }
    }
}

/// The declared kind of a parameter or variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Kind {
    Scalar,
    Vector,
    Matrix,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Scalar => "Scalar",
            Kind::Vector => "Vector",
            Kind::Matrix => "Matrix",
        })
    }
}

/// Shape of an expression value.
///
/// `RowVector` only arises from transposing a vector (`w'`); it cannot be
/// declared directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Scalar,
    Vector(Dim),
    RowVector(Dim),
    Matrix(Dim, Dim),
}

impl Shape {
    pub fn is_scalar(&self) -> bool {
        matches!(self, Shape::Scalar)
    }

    /// Storage dimensions as `(rows, cols)`; scalars are 1×1, vectors n×1.
    pub fn dims(&self) -> (Dim, Dim) {
        match *self {
            Shape::Scalar => (Dim::Known(1), Dim::Known(1)),
            Shape::Vector(n) => (n, Dim::Known(1)),
            Shape::RowVector(n) => (Dim::Known(1), n),
            Shape::Matrix(r, c) => (r, c),
        }
    }

    /// Concrete `(rows, cols)`, if both dims are known.
    pub fn concrete(&self) -> Option<(usize, usize)> {
        match self.dims() {
            (Dim::Known(r), Dim::Known(c)) => Some((r, c)),
            _ => None,
        }
    }

    pub fn transpose(&self) -> Shape {
        match *self {
            Shape::Scalar => Shape::Scalar,
            Shape::Vector(n) => Shape::RowVector(n),
            Shape::RowVector(n) => Shape::Vector(n),
            Shape::Matrix(r, c) => Shape::Matrix(c, r),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Shape::Scalar => "Scalar",
            Shape::Vector(_) => "Vector",
            Shape::RowVector(_) => "RowVector",
            Shape::Matrix(..) => "Matrix",
        }
    }

    /// Number of scalar entries, if concrete.
    pub fn len(&self) -> Option<usize> {
        self.concrete().map(|(r, c)| r * c)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "Scalar"),
            Shape::Vector(n) => write!(f, "Vector({n})"),
            Shape::RowVector(n) => write!(f, "RowVector({n})"),
            Shape::Matrix(r, c) => write!(f, "Matrix({r},{c})"),
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    parent: u32,
    value: Option<usize>,
    /// True when the class contains a dimension of a declared name.
    anchored: bool,
}

/// Union-find over symbolic dimensions with optional concrete values.
#[derive(Debug, Clone, Default)]
pub struct DimTable {
    slots: Vec<Slot>,
}

/// Two dimensions that could not be unified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimConflict {
    pub left: Dim,
    pub right: Dim,
}

impl DimTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// A fresh symbolic dimension. `anchored` marks dims that belong to a
    /// declared parameter or variable.
    pub fn fresh(&mut self, anchored: bool) -> Dim {
        let id = self.slots.len() as u32;
        self.slots.push(Slot {
            parent: id,
            value: None,
            anchored,
        });
        Dim::Sym(id)
    }

    fn find(&mut self, id: u32) -> u32 {
        let mut root = id;
        while self.slots[root as usize].parent != root {
            root = self.slots[root as usize].parent;
        }
        let mut cur = id;
        while self.slots[cur as usize].parent != root {
            let next = self.slots[cur as usize].parent;
            self.slots[cur as usize].parent = root;
            cur = next;
        }
        root
    }

    /// Replace a dim by its representative: a known size when available.
    pub fn resolve(&mut self, d: Dim) -> Dim {
        match d {
            Dim::Known(_) => d,
            Dim::Sym(id) => {
                let root = self.find(id);
                match self.slots[root as usize].value {
                    Some(n) => Dim::Known(n),
                    None => Dim::Sym(root),
                }
            }
        }
    }

    pub fn resolve_shape(&mut self, s: Shape) -> Shape {
        match s {
            Shape::Scalar => Shape::Scalar,
            Shape::Vector(n) => Shape::Vector(self.resolve(n)),
            Shape::RowVector(n) => Shape::RowVector(self.resolve(n)),
            Shape::Matrix(r, c) => Shape::Matrix(self.resolve(r), self.resolve(c)),
        }
    }

    pub fn is_anchored(&mut self, d: Dim) -> bool {
        match d {
            Dim::Known(_) => true,
            Dim::Sym(id) => {
                let root = self.find(id);
                self.slots[root as usize].anchored || self.slots[root as usize].value.is_some()
            }
        }
    }

    pub fn unify(&mut self, a: Dim, b: Dim) -> Result<Dim, DimConflict> {
        let conflict = |s: &mut Self| DimConflict {
            left: s.resolve(a),
            right: s.resolve(b),
        };
        match (a, b) {
            (Dim::Known(x), Dim::Known(y)) => {
                if x == y {
                    Ok(a)
                } else {
                    Err(DimConflict { left: a, right: b })
                }
            }
            (Dim::Sym(s), Dim::Known(n)) | (Dim::Known(n), Dim::Sym(s)) => {
                let root = self.find(s);
                match self.slots[root as usize].value {
                    Some(v) if v != n => Err(conflict(self)),
                    _ => {
                        self.slots[root as usize].value = Some(n);
                        Ok(Dim::Known(n))
                    }
                }
            }
            (Dim::Sym(x), Dim::Sym(y)) => {
                let rx = self.find(x);
                let ry = self.find(y);
                if rx == ry {
                    return Ok(self.resolve(a));
                }
                let vx = self.slots[rx as usize].value;
                let vy = self.slots[ry as usize].value;
                let value = match (vx, vy) {
                    (Some(p), Some(q)) if p != q => return Err(conflict(self)),
                    (Some(p), _) | (_, Some(p)) => Some(p),
                    _ => None,
                };
                let anchored = self.slots[rx as usize].anchored || self.slots[ry as usize].anchored;
                self.slots[ry as usize].parent = rx;
                self.slots[rx as usize].value = value;
                self.slots[rx as usize].anchored = anchored;
                Ok(self.resolve(a))
            }
        }
    }

    /// Unify two shapes of the same kind dimension by dimension.
    pub fn unify_shapes(&mut self, a: Shape, b: Shape) -> Result<Shape, DimConflict> {
        match (a, b) {
            (Shape::Scalar, Shape::Scalar) => Ok(Shape::Scalar),
            (Shape::Vector(x), Shape::Vector(y)) => Ok(Shape::Vector(self.unify(x, y)?)),
            (Shape::RowVector(x), Shape::RowVector(y)) => Ok(Shape::RowVector(self.unify(x, y)?)),
            (Shape::Matrix(r1, c1), Shape::Matrix(r2, c2)) => {
                let r = self.unify(r1, r2)?;
                let c = self.unify(c1, c2)?;
                Ok(Shape::Matrix(r, c))
            }
            _ => {
                let (ra, ca) = a.dims();
                let (rb, cb) = b.dims();
                let left = if ra == Dim::Known(1) { ca } else { ra };
                let right = if rb == Dim::Known(1) { cb } else { rb };
                Err(DimConflict { left, right })
            }
        }
    }
}
