//! Source types, conversions and memory layout.

use crate::cipher::{Flavor, NumKind};
use crate::obfuscation::VarId;

/// The thirteen basic C types. Plain `char` is `SChar`; `long` is 32 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basic {
    Bool,
    SChar,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Long,
    ULong,
    LLong,
    ULLong,
    Float,
    Double,
}

impl Basic {
    pub const ALL: [Basic; 13] = [
        Basic::Bool,
        Basic::SChar,
        Basic::UChar,
        Basic::Short,
        Basic::UShort,
        Basic::Int,
        Basic::UInt,
        Basic::Long,
        Basic::ULong,
        Basic::LLong,
        Basic::ULLong,
        Basic::Float,
        Basic::Double,
    ];

    pub fn c_name(self) -> &'static str {
        match self {
            Basic::Bool => "_Bool",
            Basic::SChar => "signed char",
            Basic::UChar => "unsigned char",
            Basic::Short => "short",
            Basic::UShort => "unsigned short",
            Basic::Int => "int",
            Basic::UInt => "unsigned int",
            Basic::Long => "long",
            Basic::ULong => "unsigned long",
            Basic::LLong => "long long",
            Basic::ULLong => "unsigned long long",
            Basic::Float => "float",
            Basic::Double => "double",
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Basic::Float | Basic::Double)
    }

    pub fn is_signed(self) -> bool {
        matches!(
            self,
            Basic::SChar | Basic::Short | Basic::Int | Basic::Long | Basic::LLong
        ) || self.is_float()
    }

    /// Value bits for integer types.
    pub fn bits(self) -> u32 {
        match self {
            Basic::Bool => 1,
            Basic::SChar | Basic::UChar => 8,
            Basic::Short | Basic::UShort => 16,
            Basic::Int | Basic::UInt | Basic::Long | Basic::ULong | Basic::Float => 32,
            Basic::LLong | Basic::ULLong | Basic::Double => 64,
        }
    }

    pub fn words(self) -> u32 {
        if self.bits() == 64 {
            2
        } else {
            1
        }
    }

    pub fn is_wide(self) -> bool {
        self.words() == 2
    }

    /// Narrower than a register word; kept canonical (truncated and
    /// extended) at all times.
    pub fn is_narrow(self) -> bool {
        !self.is_float() && self.bits() < 32
    }

    /// How values of this type are represented in a register.
    pub fn kind(self) -> NumKind {
        match self {
            Basic::Float => NumKind::F32,
            Basic::Double => NumKind::F64,
            Basic::LLong => NumKind::I64,
            Basic::ULLong => NumKind::U64,
            Basic::UInt | Basic::ULong => NumKind::U32,
            _ => NumKind::I32,
        }
    }

    pub fn flavor(self) -> Flavor {
        match self.kind() {
            NumKind::I32 => Flavor::Signed,
            NumKind::U32 => Flavor::Unsigned,
            NumKind::I64 => Flavor::Signed64,
            NumKind::U64 => Flavor::Unsigned64,
            NumKind::F32 => Flavor::Float,
            NumKind::F64 => Flavor::Double,
        }
    }

    fn rank(self) -> u8 {
        match self {
            Basic::Bool => 0,
            Basic::SChar | Basic::UChar => 1,
            Basic::Short | Basic::UShort => 2,
            Basic::Int | Basic::UInt => 3,
            Basic::Long | Basic::ULong => 4,
            Basic::LLong | Basic::ULLong => 5,
            Basic::Float => 6,
            Basic::Double => 7,
        }
    }

    fn to_unsigned(self) -> Basic {
        match self {
            Basic::Int => Basic::UInt,
            Basic::Long => Basic::ULong,
            Basic::LLong => Basic::ULLong,
            b => b,
        }
    }

    /// Integer promotion.
    pub fn promote(self) -> Basic {
        if self.rank() < Basic::Int.rank() {
            Basic::Int
        } else {
            self
        }
    }

    /// Usual arithmetic conversions.
    pub fn common(a: Basic, b: Basic) -> Basic {
        if a == Basic::Double || b == Basic::Double {
            return Basic::Double;
        }
        if a == Basic::Float || b == Basic::Float {
            return Basic::Float;
        }
        let (a, b) = (a.promote(), b.promote());
        if a == b {
            return a;
        }
        if a.is_signed() == b.is_signed() {
            return if a.rank() >= b.rank() { a } else { b };
        }
        let (s, u) = if a.is_signed() { (a, b) } else { (b, a) };
        if u.rank() >= s.rank() {
            u
        } else if s.bits() > u.bits() {
            s
        } else {
            s.to_unsigned()
        }
    }

    /// Canonical register bits of an integer value of this type.
    pub fn canonical(self, v: u64) -> u64 {
        match self {
            Basic::Bool => u64::from(v != 0),
            Basic::SChar => (v as i8 as i32 as u32).into(),
            Basic::UChar => (v as u8).into(),
            Basic::Short => (v as i16 as i32 as u32).into(),
            Basic::UShort => (v as u16).into(),
            Basic::Int | Basic::UInt | Basic::Long | Basic::ULong | Basic::Float => {
                (v as u32).into()
            }
            Basic::LLong | Basic::ULLong | Basic::Double => v,
        }
    }
}

/// Aggregate identity in [`crate::frontend::typed::Program::aggs`].
pub type AggId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Ty {
    Void,
    Basic(Basic),
    Array(Box<Ty>, u32),
    /// A restrict pointer into the named array variable.
    Ptr { elem: Box<Ty>, array: VarId },
    Agg(AggId),
}

impl Ty {
    pub fn basic(&self) -> Option<Basic> {
        match self {
            Ty::Basic(b) => Some(*b),
            _ => None,
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Ty::Basic(_) | Ty::Ptr { .. })
    }

    pub fn is_ptr(&self) -> bool {
        matches!(self, Ty::Ptr { .. })
    }

    /// Register representation; pointers are 32-bit signed addresses.
    pub fn kind(&self) -> Option<NumKind> {
        match self {
            Ty::Basic(b) => Some(b.kind()),
            Ty::Ptr { .. } => Some(NumKind::I32),
            _ => None,
        }
    }

    pub fn is_wide(&self) -> bool {
        self.kind().is_some_and(NumKind::is_wide)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: Ty,
    /// Word displacement inside the aggregate.
    pub offset: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggDef {
    pub name: String,
    pub is_union: bool,
    pub fields: Vec<FieldDef>,
    pub size: u32,
}

impl AggDef {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Size in 32-bit words. Every scalar takes a whole word (two for 64-bit
/// types); there is no packing or padding.
pub fn size_words(ty: &Ty, aggs: &[AggDef]) -> u32 {
    match ty {
        Ty::Void => 0,
        Ty::Basic(b) => b.words(),
        Ty::Ptr { .. } => 1,
        Ty::Array(e, n) => size_words(e, aggs) * n,
        Ty::Agg(id) => aggs[*id as usize].size,
    }
}

/// Per-word offset classes of a layout. Words in one class share one
/// offset; numbering is by first occurrence.
pub fn word_classes(ty: &Ty, aggs: &[AggDef]) -> Vec<u32> {
    let mut next = 0;
    let raw = classes_rec(ty, aggs, &mut next);
    renumber(&raw)
}

fn classes_rec(ty: &Ty, aggs: &[AggDef], next: &mut u32) -> Vec<u32> {
    let width = match ty {
        Ty::Basic(b) => b.words(),
        Ty::Ptr { .. } => 1,
        _ => 0,
    };
    if width > 0 {
        let base = *next;
        *next += width;
        return (base..base + width).collect();
    }
    match ty {
        Ty::Array(e, n) => {
            let one = classes_rec(e, aggs, next);
            one.iter().copied().cycle().take(one.len() * *n as usize).collect()
        }
        Ty::Agg(id) => {
            let def = &aggs[*id as usize];
            if def.is_union {
                let members: Vec<Vec<u32>> = def
                    .fields
                    .iter()
                    .map(|f| classes_rec(&f.ty, aggs, next))
                    .collect();
                let merged = unify_union(&members);
                let base = *next;
                *next += merged.iter().max().map_or(0, |m| m + 1);
                merged.into_iter().map(|c| c + base).collect()
            } else {
                def.fields
                    .iter()
                    .flat_map(|f| classes_rec(&f.ty, aggs, next))
                    .collect()
            }
        }
        _ => vec![],
    }
}

fn renumber(raw: &[u32]) -> Vec<u32> {
    let mut seen: Vec<u32> = Vec::new();
    raw.iter()
        .map(|c| match seen.iter().position(|s| s == c) {
            Some(i) => i as u32,
            None => {
                seen.push(*c);
                seen.len() as u32 - 1
            }
        })
        .collect()
}

/// Least restrictive scheme compatible with every member of a union:
/// overlay the members' word patterns at offset zero and merge any classes
/// forced equal, by union-find. Returns one class per word of the union.
pub fn unify_union(members: &[Vec<u32>]) -> Vec<u32> {
    // Node ids: (member index, class label) flattened.
    let mut ids: Vec<(usize, u32)> = Vec::new();
    let id_of = |ids: &mut Vec<(usize, u32)>, key: (usize, u32)| match ids
        .iter()
        .position(|k| *k == key)
    {
        Some(i) => i,
        None => {
            ids.push(key);
            ids.len() - 1
        }
    };
    let size = members.iter().map(Vec::len).max().unwrap_or(0);
    let mut word_nodes: Vec<Vec<usize>> = vec![Vec::new(); size];
    for (m, pat) in members.iter().enumerate() {
        for (w, c) in pat.iter().enumerate() {
            let n = id_of(&mut ids, (m, *c));
            word_nodes[w].push(n);
        }
    }
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut x = x;
        while p[x] != r {
            let n = p[x];
            p[x] = r;
            x = n;
        }
        r
    }
    for nodes in &word_nodes {
        for pair in nodes.windows(2) {
            let (a, b) = (find(&mut parent, pair[0]), find(&mut parent, pair[1]));
            parent[a] = b;
        }
    }
    let roots: Vec<u32> = word_nodes
        .iter()
        .map(|nodes| find(&mut parent, nodes[0]) as u32)
        .collect();
    renumber(&roots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usual_conversions_ilp32() {
        assert_eq!(Basic::common(Basic::Short, Basic::Short), Basic::Int);
        assert_eq!(Basic::common(Basic::Int, Basic::UInt), Basic::UInt);
        assert_eq!(Basic::common(Basic::Long, Basic::UInt), Basic::ULong);
        assert_eq!(Basic::common(Basic::LLong, Basic::UInt), Basic::LLong);
        assert_eq!(Basic::common(Basic::ULLong, Basic::LLong), Basic::ULLong);
        assert_eq!(Basic::common(Basic::Int, Basic::Float), Basic::Float);
        assert_eq!(Basic::common(Basic::Float, Basic::LLong), Basic::Float);
        assert_eq!(Basic::common(Basic::Float, Basic::Double), Basic::Double);
        assert_eq!(Basic::common(Basic::Bool, Basic::UChar), Basic::Int);
    }

    #[test]
    fn canonical_narrowing() {
        assert_eq!(Basic::Short.canonical(70000) as u32 as i32, 4464);
        assert_eq!(Basic::SChar.canonical(200) as u32 as i32, -56);
        assert_eq!(Basic::UChar.canonical(u64::MAX), 255);
        assert_eq!(Basic::Bool.canonical(4), 1);
    }

    fn agg(is_union: bool, fields: Vec<Ty>, aggs: &[AggDef]) -> AggDef {
        let mut off = 0;
        let mut fs = Vec::new();
        let mut size = 0;
        for (i, ty) in fields.into_iter().enumerate() {
            let s = size_words(&ty, aggs);
            fs.push(FieldDef {
                name: format!("f{i}"),
                ty,
                offset: if is_union { 0 } else { off },
            });
            off += s;
            size = if is_union { size.max(s) } else { off };
        }
        AggDef {
            name: "t".into(),
            is_union,
            fields: fs,
            size,
        }
    }

    #[test]
    fn struct_fields_get_distinct_classes_arrays_repeat() {
        let aggs = vec![agg(
            false,
            vec![Ty::Basic(Basic::Int), Ty::Basic(Basic::Double)],
            &[],
        )];
        let arr = Ty::Array(Box::new(Ty::Agg(0)), 3);
        assert_eq!(word_classes(&arr, &aggs), vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
        let ints = Ty::Array(Box::new(Ty::Basic(Basic::Int)), 100);
        assert!(word_classes(&ints, &aggs).iter().all(|c| *c == 0));
    }

    #[test]
    fn union_scheme_examples() {
        // struct{int; float[2]} is x,y,y; double[2] is u,v,u,v
        assert_eq!(
            unify_union(&[vec![0, 1, 1], vec![0, 1, 0, 1]]),
            vec![0, 0, 0, 0]
        );
        assert_eq!(unify_union(&[vec![0], vec![0]]), vec![0]);
        // int a[2] against struct{int x; int y;}
        assert_eq!(unify_union(&[vec![0, 0], vec![0, 1]]), vec![0, 0]);
        // disjoint structure is kept apart
        assert_eq!(unify_union(&[vec![0, 1], vec![0, 1]]), vec![0, 1]);
    }

    #[test]
    fn union_layout_through_word_classes() {
        let s = agg(
            false,
            vec![
                Ty::Basic(Basic::Int),
                Ty::Array(Box::new(Ty::Basic(Basic::Float)), 2),
            ],
            &[],
        );
        let mut aggs = vec![s];
        let u = agg(
            true,
            vec![Ty::Agg(0), Ty::Array(Box::new(Ty::Basic(Basic::Double)), 2)],
            &aggs,
        );
        aggs.push(u);
        assert_eq!(word_classes(&Ty::Agg(1), &aggs), vec![0, 0, 0, 0]);
        // struct holding the union and an int: the int stays separate
        let outer = agg(false, vec![Ty::Agg(1), Ty::Basic(Basic::Int)], &aggs);
        aggs.push(outer);
        assert_eq!(word_classes(&Ty::Agg(2), &aggs), vec![0, 0, 0, 0, 1]);
    }
}
