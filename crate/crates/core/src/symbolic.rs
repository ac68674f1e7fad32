//! Symbolic mirror of the hash chain.
//!
//! Every node records its hash input and output as small expression trees
//! that refer to predecessors by name. Rendering either keeps those
//! references (`H_f2 || tag_f3`) or expands them into one closed formula
//! over `r`, tags and result hashes.
//!
//! Grouping rules for the expanded form:
//! - a concatenation whose left side is a plain `r || tag || ...` run is
//!   written flat; any other left side is parenthesized;
//! - every operand of a sum is parenthesized;
//! - a received cross-enclave value is `sent ⊕ hash(res')`; inside a sum the
//!   transmitted chain `sent` keeps its own parentheses.

use std::fmt::Write as _;

use crate::plan::NodeId;

pub const XOR_SYMBOL: &str = "⊕";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sym {
    Nonce,
    /// `inner || tag_<node>`
    Concat(Box<Sym>, NodeId),
    Sum(Vec<Sym>),
    Hash(Box<Sym>),
    Xor(Box<Sym>, Box<Sym>),
    /// Result payload as emitted by its producer.
    Res(NodeId),
    /// Result payload as received after the untrusted channel.
    ResRecv(NodeId),
    /// Reference to a node's raw hash input `h`.
    Raw(NodeId),
    /// Reference to a node's hashed output `H` (the value sent across
    /// enclaves, or the final hash).
    Out(NodeId),
}

impl Sym {
    pub fn concat(inner: Sym, tag_of: NodeId) -> Sym {
        Sym::Concat(Box::new(inner), tag_of)
    }

    pub fn hash(inner: Sym) -> Sym {
        Sym::Hash(Box::new(inner))
    }

    pub fn xor(a: Sym, b: Sym) -> Sym {
        Sym::Xor(Box::new(a), Box::new(b))
    }
}

/// Lookup of per-node expressions used to resolve references.
pub trait SymbolTable {
    fn raw_expr(&self, node: &NodeId) -> Option<&Sym>;
    fn out_expr(&self, node: &NodeId) -> Option<&Sym>;
    /// True when the node forwards its raw `h` as its output `H`, i.e. it
    /// has only same-enclave successors.
    fn raw_is_output(&self, node: &NodeId) -> bool;
}

/// Renders `sym`, keeping references when `expand` is false.
pub fn render(sym: &Sym, table: &dyn SymbolTable, expand: bool) -> String {
    let mut out = String::new();
    Renderer { table, expand }.write(sym, &mut out);
    out
}

struct Renderer<'a> {
    table: &'a dyn SymbolTable,
    expand: bool,
}

impl<'a> Renderer<'a> {
    fn resolve<'s>(&self, mut sym: &'s Sym) -> &'s Sym
    where
        'a: 's,
    {
        if !self.expand {
            return sym;
        }
        loop {
            let next = match sym {
                Sym::Raw(id) => self.table.raw_expr(id),
                Sym::Out(id) => self.table.out_expr(id),
                _ => None,
            };
            match next {
                Some(s) => sym = s,
                None => return sym,
            }
        }
    }

    fn is_reference(sym: &Sym) -> bool {
        matches!(sym, Sym::Raw(_) | Sym::Out(_))
    }

    fn nonce_rooted(&self, sym: &Sym) -> bool {
        match self.resolve(sym) {
            Sym::Nonce => true,
            Sym::Concat(inner, _) => self.nonce_rooted(inner),
            _ => false,
        }
    }

    fn write(&self, sym: &Sym, out: &mut String) {
        let sym = self.resolve(sym);
        match sym {
            Sym::Nonce => out.push('r'),
            Sym::Raw(id) => {
                let prefix = if self.table.raw_is_output(id) { "H" } else { "h" };
                let _ = write!(out, "{prefix}_{id}");
            }
            Sym::Out(id) => {
                let _ = write!(out, "H_{id}");
            }
            Sym::Res(id) => {
                let _ = write!(out, "res_{id}");
            }
            Sym::ResRecv(id) => {
                let _ = write!(out, "res'_{id}");
            }
            Sym::Hash(inner) => {
                out.push_str("hash(");
                self.write(inner, out);
                out.push(')');
            }
            Sym::Concat(inner, tag_of) => {
                let resolved = self.resolve(inner);
                if self.nonce_rooted(resolved) || Self::is_reference(resolved) {
                    self.write(resolved, out);
                } else {
                    out.push('(');
                    self.write(resolved, out);
                    out.push(')');
                }
                let _ = write!(out, "||tag_{tag_of}");
            }
            Sym::Sum(terms) => {
                for (i, term) in terms.iter().enumerate() {
                    if i > 0 {
                        out.push_str(" + ");
                    }
                    self.write_sum_term(term, out);
                }
            }
            Sym::Xor(a, b) => {
                self.write(a, out);
                let _ = write!(out, " {XOR_SYMBOL} ");
                let rb = self.resolve(b);
                if matches!(rb, Sym::Xor(..) | Sym::Sum(_)) {
                    out.push('(');
                    self.write(rb, out);
                    out.push(')');
                } else {
                    self.write(rb, out);
                }
            }
        }
    }

    fn write_sum_term(&self, term: &Sym, out: &mut String) {
        let term = self.resolve(term);
        if Self::is_reference(term) {
            self.write(term, out);
            return;
        }
        out.push('(');
        match term {
            Sym::Xor(a, b) if matches!(self.resolve(a), Sym::Xor(..)) => {
                out.push('(');
                self.write(a, out);
                out.push(')');
                let _ = write!(out, " {XOR_SYMBOL} ");
                self.write(b, out);
            }
            other => self.write(other, out),
        }
        out.push(')');
    }
}

/// Removes all whitespace, for layout-insensitive comparison.
pub fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}
