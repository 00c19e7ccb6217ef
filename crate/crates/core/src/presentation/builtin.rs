use std::collections::BTreeMap;
use std::str::FromStr;

use super::{Coef, GeneratorDecl, Monoidal, Presentation, PresentationError, RelExpr, RelationEq, StructureKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    Braid,
    TemperleyLieb,
    YangBaxter,
    RtSystem,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [Builtin::Braid, Builtin::TemperleyLieb, Builtin::YangBaxter, Builtin::RtSystem];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Braid => "braid",
            Builtin::TemperleyLieb => "temperley_lieb",
            Builtin::YangBaxter => "yang_baxter",
            Builtin::RtSystem => "rt_system",
        }
    }
}

impl FromStr for Builtin {
    type Err = PresentationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| PresentationError::UnknownBuiltin(s.to_string()))
    }
}

/// Labels of the rt_system relations, in presentation order.
pub mod rt_labels {
    pub const CAP_ABSORBS_CROSSING: &str = "n.R = n";
    pub const CROSSING_THEN_INVERSE: &str = "R⊗R^-1 = id_V⊗V";
    pub const INVERSE_THEN_CROSSING: &str = "R^-1⊗R = id_V⊗V";
    pub const YANG_BAXTER: &str = "Yang Baxter";
    pub const SLIDE: &str = "(id_V ⊗ n)(R ⊗ id_V) = (n ⊗ id_V)(id_V ⊗ R)";
    pub const SNAKE_LEFT: &str = "(id_V ⊗ n)(u ⊗ id_V) = id_V";
    pub const SNAKE_RIGHT: &str = "(n ⊗ id_V)(id_V ⊗ u) = id_V";
}

/// `(g x id) * (id x g) * (g x id) = (id x g) * (g x id) * (id x g)`
fn yang_baxter_relation(label: &str, g: &str) -> RelationEq {
    let left = || RelExpr::gen(g).times(RelExpr::id(1));
    let right = || RelExpr::id(1).times(RelExpr::gen(g));
    RelationEq::new(
        label,
        RelExpr::compose_all(vec![left(), right(), left()]),
        RelExpr::compose_all(vec![right(), left(), right()]),
    )
}

fn inverse_relations(g: &str, label_a: &str, label_b: &str) -> [RelationEq; 2] {
    [
        RelationEq::new(label_a, RelExpr::gen(g).after(RelExpr::inv(g)), RelExpr::id(2)),
        RelationEq::new(label_b, RelExpr::inv(g).after(RelExpr::gen(g)), RelExpr::id(2)),
    ]
}

/// One of the four study systems. Only relations that do not hold
/// automatically by construction are included: far-commutation of placed
/// generators is implied by the block product and is never trained.
pub fn builtin(which: Builtin, params: &BTreeMap<String, f64>) -> Result<Presentation, PresentationError> {
    let pres = match which {
        Builtin::Braid => {
            let [a, b] = inverse_relations("f", "f∘g=id", "g∘f=id");
            let place = |i| RelExpr::place("f", i, 3);
            let yb = RelationEq::new(
                "set-theoretic Yang Baxter",
                RelExpr::compose_all(vec![place(1), place(2), place(1)]),
                RelExpr::compose_all(vec![place(2), place(1), place(2)]),
            );
            Presentation {
                name: which.name().into(),
                kind: StructureKind::Group,
                monoidal: Monoidal::Cartesian,
                generators: vec![GeneratorDecl::new("f", 2, 2).invertible_as("g")],
                relations: vec![a, b, yb],
                scalars: BTreeMap::new(),
            }
        }
        Builtin::TemperleyLieb => {
            let delta = *params.get("delta").ok_or_else(|| PresentationError::MissingScalar {
                builtin: which.name().into(),
                name: "delta".into(),
            })?;
            let u1 = || RelExpr::place("U", 1, 3);
            let u2 = || RelExpr::place("U", 2, 3);
            Presentation {
                name: which.name().into(),
                kind: StructureKind::Algebra,
                monoidal: Monoidal::Cartesian,
                generators: vec![GeneratorDecl::new("U", 2, 2)],
                relations: vec![
                    RelationEq::new("U1 U2 U1 = U1", RelExpr::compose_all(vec![u1(), u2(), u1()]), u1()),
                    RelationEq::new("U2 U1 U2 = U2", RelExpr::compose_all(vec![u2(), u1(), u2()]), u2()),
                    RelationEq::new(
                        "U^2 = delta U",
                        RelExpr::gen("U").after(RelExpr::gen("U")),
                        RelExpr::gen("U").scaled(Coef::Symbol("delta".into())),
                    ),
                ],
                scalars: BTreeMap::from([("delta".to_string(), delta)]),
            }
        }
        Builtin::YangBaxter => {
            let [a, b] = inverse_relations("R", "R∘Rinv=id", "Rinv∘R=id");
            Presentation {
                name: which.name().into(),
                kind: StructureKind::Group,
                monoidal: Monoidal::Cartesian,
                generators: vec![GeneratorDecl::new("R", 2, 2).invertible_as("Rinv")],
                relations: vec![yang_baxter_relation("set-theoretic Yang Baxter", "R"), a, b],
                scalars: BTreeMap::new(),
            }
        }
        Builtin::RtSystem => {
            use rt_labels::*;
            let [a, b] = inverse_relations("R", CROSSING_THEN_INVERSE, INVERSE_THEN_CROSSING);
            let n = || RelExpr::gen("n");
            let u = || RelExpr::gen("u");
            let r = || RelExpr::gen("R");
            let id = || RelExpr::id(1);
            Presentation {
                name: which.name().into(),
                kind: StructureKind::Custom,
                monoidal: Monoidal::Tensor,
                generators: vec![
                    GeneratorDecl::new("R", 2, 2).invertible_as("Rinv"),
                    GeneratorDecl::new("n", 2, 0),
                    GeneratorDecl::new("u", 0, 2),
                ],
                relations: vec![
                    RelationEq::new(CAP_ABSORBS_CROSSING, n().after(r()), n()),
                    a,
                    b,
                    yang_baxter_relation(YANG_BAXTER, "R"),
                    RelationEq::new(
                        SLIDE,
                        id().times(n()).after(r().times(id())),
                        n().times(id()).after(id().times(r())),
                    ),
                    RelationEq::new(SNAKE_LEFT, id().times(n()).after(u().times(id())), id()),
                    RelationEq::new(SNAKE_RIGHT, n().times(id()).after(id().times(u())), id()),
                ],
                scalars: BTreeMap::new(),
            }
        }
    };
    pres.validate()?;
    Ok(pres)
}
